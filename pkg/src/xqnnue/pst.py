"""Piece-square-table evaluation.

The tables below are a conventional stand-in set: piece base values plus
small positional offsets, with the pawn's across-river bonus folded into its
table.  They are deliberately simple and loadable from a config file so an
alternate set can be swapped in without touching any other module.

Table listing convention (identical to the config file): 10 rows of 9
values, row-major from Black's back rank, from Red's point of view.  Black's
tables are the vertical mirror of Red's.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .board import (ADVISOR, BLACK, CANNON, ELEPHANT, HORSE, KING, PAWN, RED,
                    ROOK, Position, mirror_square, square)

BASE_VALUES = {KING: 0, ADVISOR: 200, ELEPHANT: 200, HORSE: 450,
               ROOK: 1000, CANNON: 450, PAWN: 100}

_NAME_TO_PIECE = {"king": KING, "advisor": ADVISOR, "elephant": ELEPHANT,
                  "horse": HORSE, "rook": ROOK, "cannon": CANNON, "pawn": PAWN}
_PIECE_TO_NAME = {v: k for k, v in _NAME_TO_PIECE.items()}

_KING = [
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0, -8, -8, -8,  0,  0,  0,
    0,  0,  0, -4, -4, -4,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
]

_ADVISOR = [
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  3,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
]

_ELEPHANT = [
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  1,  0,  0,  0,  1,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
   -2,  0,  0,  0,  3,  0,  0,  0, -2,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
    0,  0,  0,  0,  0,  0,  0,  0,  0,
]

_HORSE = [
    4,  8,  8,  8,  4,  8,  8,  8,  4,
    4, 10, 12, 12, 10, 12, 12, 10,  4,
    6, 12, 12, 14, 12, 14, 12, 12,  6,
    6, 12, 14, 14, 14, 14, 14, 12,  6,
    4, 10, 12, 14, 12, 14, 12, 10,  4,
    2,  8, 10, 10,  8, 10, 10,  8,  2,
    0,  4,  8,  8,  4,  8,  8,  4,  0,
   -2,  2,  4,  4,  4,  4,  4,  2, -2,
   -4,  0,  2,  2,  2,  2,  2,  0, -4,
   -6, -2,  0,  0, -2,  0,  0, -2, -6,
]

_ROOK = [
    8, 10, 10, 12, 12, 12, 10, 10,  8,
    8, 12, 12, 14, 14, 14, 12, 12,  8,
    6, 10, 10, 12, 12, 12, 10, 10,  6,
    6, 10, 10, 12, 12, 12, 10, 10,  6,
    4,  8,  8, 10, 10, 10,  8,  8,  4,
    2,  6,  6,  8,  8,  8,  6,  6,  2,
    0,  4,  4,  6,  6,  6,  4,  4,  0,
   -2,  2,  2,  4,  4,  4,  2,  2, -2,
   -2,  0,  0,  2,  2,  2,  0,  0, -2,
   -4,  0,  0,  2,  0,  2,  0,  0, -4,
]

_CANNON = [
    2,  2,  0, -2, -4, -2,  0,  2,  2,
    2,  2,  0,  0, -2,  0,  0,  2,  2,
    0,  0,  0,  0,  4,  0,  0,  0,  0,
   -2,  0,  2,  2,  4,  2,  2,  0, -2,
    0,  0,  2,  4,  6,  4,  2,  0,  0,
    0,  0,  2,  4,  6,  4,  2,  0,  0,
    0,  2,  4,  6,  8,  6,  4,  2,  0,
    2,  2,  4,  6,  8,  6,  4,  2,  2,
    0,  2,  2,  4,  6,  4,  2,  2,  0,
    0,  0,  2,  4,  4,  4,  2,  0,  0,
]

_PAWN = [
    8,   8,   8,  10,  10,  10,   8,   8,   8,
    18,  24,  30,  34,  34,  34,  30,  24,  18,
    18,  26,  32,  36,  36,  36,  32,  26,  18,
    14,  20,  26,  30,  30,  30,  26,  20,  14,
    4,   10,  14,  18,  18,  18,  14,  10,   4,
    4,    2,   8,   2,  12,   2,   8,   2,   4,
    0,    0,   4,   0,   8,   0,   4,   0,   0,
    0,    0,   0,   0,   0,   0,   0,   0,   0,
    0,    0,   0,   0,   0,   0,   0,   0,   0,
    0,    0,   0,   0,   0,   0,   0,   0,   0,
]

# across-river pawns are worth double; fold the jump into the table
_PAWN = [v + 100 if i < 5 * 9 else v for i, v in enumerate(_PAWN)]

_DEFAULT_TABLES = {KING: _KING, ADVISOR: _ADVISOR, ELEPHANT: _ELEPHANT,
                   HORSE: _HORSE, ROOK: _ROOK, CANNON: _CANNON, PAWN: _PAWN}


@njit(cache=True)
def _pst_eval(board, stm, red_pov):
    s = 0
    for sq in range(90):
        code = board[sq]
        if code:
            s += red_pov[code, sq]
    return s if stm == RED else -s


def _rows_to_squares(values) -> np.ndarray:
    """Map a row-major-from-Black's-back-rank listing onto square indexing."""
    out = np.zeros(90, dtype=np.int32)
    for i, v in enumerate(values):
        rank = 9 - i // 9
        file = i % 9
        out[square(file, rank)] = v
    return out


class PstError(ValueError):
    """Malformed PST config file."""


class PstTables:
    """Base values plus per-square offsets for both colours.

    `red_pov[code, sq]` is the signed contribution of piece `code` on `sq`
    from Red's point of view; evaluation is its sum, negated for Black to
    move.
    """

    def __init__(self, base_values: dict[int, int],
                 red_tables: dict[int, list[int]]):
        missing = [p for p in _NAME_TO_PIECE.values() if p not in base_values]
        if missing:
            raise PstError(f"missing base value for {_PIECE_TO_NAME[missing[0]]}")
        self.base_values = dict(base_values)
        self.red_tables = {}
        self.red_pov = np.zeros((16, 90), dtype=np.int32)
        for piece, values in red_tables.items():
            if len(values) != 90:
                raise PstError(
                    f"table for {_PIECE_TO_NAME[piece]} has {len(values)} "
                    f"values, expected 90")
            per_sq = _rows_to_squares(values)
            self.red_tables[piece] = per_sq
            base = base_values[piece]
            for sq in range(90):
                self.red_pov[piece | RED << 3, sq] = base + per_sq[sq]
                self.red_pov[piece | BLACK << 3, sq] = \
                    -(base + per_sq[mirror_square(sq)])
        if len(self.red_tables) != 7:
            raise PstError("need one table per piece type")

    @classmethod
    def default(cls) -> "PstTables":
        return cls(BASE_VALUES, _DEFAULT_TABLES)

    @classmethod
    def load(cls, path) -> "PstTables":
        """Read the plain-text config format; see dump() for the layout.

        Black tables may be omitted (derived by mirroring); when present
        they must be the exact vertical mirror of Red's.
        """
        base: dict[int, int] = {}
        tables: dict[tuple[int, int], list[int]] = {}
        with open(path) as fh:
            tokens = []
            for line in fh:
                line = line.split("#", 1)[0]
                tokens.extend(line.split())
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok == "value":
                if i + 2 >= len(tokens) + 1:
                    raise PstError("truncated value entry")
                piece = _NAME_TO_PIECE.get(tokens[i + 1])
                if piece is None:
                    raise PstError(f"unknown piece {tokens[i + 1]!r}")
                base[piece] = int(tokens[i + 2])
                i += 3
            elif tok == "table":
                if i + 2 >= len(tokens):
                    raise PstError("truncated table header")
                color = {"red": RED, "black": BLACK}.get(tokens[i + 1])
                piece = _NAME_TO_PIECE.get(tokens[i + 2])
                if color is None or piece is None:
                    raise PstError(
                        f"bad table header {tokens[i + 1]} {tokens[i + 2]}")
                i += 3
                values = []
                while i < len(tokens) and len(values) < 90:
                    try:
                        values.append(int(tokens[i]))
                    except ValueError:
                        break
                    i += 1
                if len(values) != 90:
                    raise PstError(
                        f"table {tokens[i - len(values) - 2]} "
                        f"{_PIECE_TO_NAME[piece]} has {len(values)} values, "
                        f"expected 90")
                tables[color, piece] = values
            else:
                raise PstError(f"unexpected token {tok!r}")
        red = {p: v for (c, p), v in tables.items() if c == RED}
        if len(red) != 7:
            raise PstError("config must define all 7 red tables")
        out = cls(base, red)
        for (c, piece), values in tables.items():
            if c != BLACK:
                continue
            mirrored = _rows_to_squares(values)
            expect = out.red_tables[piece]
            for sq in range(90):
                if mirrored[sq] != expect[mirror_square(sq)]:
                    raise PstError(
                        f"black {_PIECE_TO_NAME[piece]} table is not the "
                        f"mirror of red's")
        return out

    def dump(self, path) -> None:
        """Write the config format: `value <piece> <cp>` lines, then
        `table <color> <piece>` blocks of 10 rows x 9 integers, row-major
        from Black's back rank."""
        with open(path, "w") as fh:
            fh.write("# piece-square tables, 90 values per table,\n"
                     "# row-major from Black's back rank\n")
            for piece, name in _PIECE_TO_NAME.items():
                fh.write(f"value {name} {self.base_values[piece]}\n")
            for color, cname in ((RED, "red"), (BLACK, "black")):
                for piece, name in _PIECE_TO_NAME.items():
                    fh.write(f"table {cname} {name}\n")
                    tab = self.red_tables[piece]
                    for i in range(10):
                        rank = 9 - i
                        row = []
                        for file in range(9):
                            sq = square(file, rank)
                            if color == BLACK:
                                sq = mirror_square(sq)
                            row.append(int(tab[sq]))
                        fh.write(" ".join(f"{v:4d}" for v in row) + "\n")

    def evaluate(self, position: Position) -> int:
        """Static evaluation in centipawns, relative to the side to move."""
        return int(_pst_eval(position.board, position.stm, self.red_pov))


_default: PstTables | None = None


def default_tables() -> PstTables:
    global _default
    if _default is None:
        _default = PstTables.default()
    return _default


def evaluate(position: Position, tables: PstTables | None = None) -> int:
    """Module-level convenience wrapper over PstTables.evaluate."""
    return (tables or default_tables()).evaluate(position)
