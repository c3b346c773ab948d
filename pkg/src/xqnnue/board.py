"""Xiangqi rules: board representation, FEN I/O, legal move generation,
check detection and perft.

The board is a flat 90-cell array indexed file-major from Red's side:
``sq = file * 10 + rank`` with file 0..8 (``a``..``i`` from Red's left) and
rank 0..9 (0 = Red's back rank).  Piece codes pack type and colour into one
byte: ``code = type | color << 3`` with types K,A,E,H,R,C,P = 1..7, so Red
pieces are 1..7 and Black 9..15.  The same codes are used verbatim in the
binary dataset format.

The hot inner loops (pseudo-move generation, attack scans, perft) are
numba-compiled kernels over numpy arrays; :class:`Position` is the friendly
wrapper around them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

RED, BLACK = 0, 1

EMPTY = 0
KING, ADVISOR, ELEPHANT, HORSE, ROOK, CANNON, PAWN = 1, 2, 3, 4, 5, 6, 7

FILES, RANKS, SQUARES = 9, 10, 90

#: Mate sentinel in centipawns; mate-in-n is scored MATE_SCORE - n.
MATE_SCORE = 30_000

STARTPOS_FEN = "rnbakabnr/9/1c5c1/p1p1p1p1p/9/9/P1P1P1P1P/1C5C1/9/RNBAKABNR w"

_PIECE_CHARS = {KING: "k", ADVISOR: "a", ELEPHANT: "b", HORSE: "n",
                ROOK: "r", CANNON: "c", PAWN: "p"}
_CHAR_PIECES = {"k": KING, "a": ADVISOR, "b": ELEPHANT, "e": ELEPHANT,
                "n": HORSE, "h": HORSE, "r": ROOK, "c": CANNON, "p": PAWN}
_PIECE_NAMES = {KING: "king", ADVISOR: "advisor", ELEPHANT: "elephant",
                HORSE: "horse", ROOK: "rook", CANNON: "cannon", PAWN: "pawn"}


class IllegalPositionError(ValueError):
    """A position violates a rules invariant."""


class FenError(IllegalPositionError):
    """Malformed or illegal FEN text."""


def square(file: int, rank: int) -> int:
    return file * 10 + rank


def file_of(sq: int) -> int:
    return sq // 10


def rank_of(sq: int) -> int:
    return sq % 10


def mirror_square(sq: int) -> int:
    """Vertical mirror: same file, rank flipped end for end."""
    return sq - 2 * (sq % 10) + 9


def square_name(sq: int) -> str:
    return chr(ord("a") + sq // 10) + str(sq % 10)


def parse_square(text: str) -> int:
    if len(text) != 2 or not ("a" <= text[0] <= "i") or not text[1].isdigit():
        raise ValueError(f"bad square {text!r}")
    return square(ord(text[0]) - ord("a"), int(text[1]))


def piece_color(code: int) -> int:
    return code >> 3


def piece_type(code: int) -> int:
    return code & 7


# ---------------------------------------------------------------------------
# numba kernels
#
# Core moves are int32-encoded as frm | to << 7.  All kernels treat the board
# as a mutable scratch and restore it before returning.
# ---------------------------------------------------------------------------

MAX_MOVES = 128


@njit(cache=True)
def _find_king(board, color):
    target = KING | color << 3
    for sq in range(90):
        if board[sq] == target:
            return sq
    return -1


@njit(cache=True)
def _attacked(board, sq, by):
    """True if `by` attacks `sq`.  Includes the flying-general file attack."""
    f = sq // 10
    r = sq % 10
    # pawns
    pawn = PAWN | by << 3
    if by == RED:
        if r >= 1 and board[sq - 1] == pawn:
            return True
        # sideways attacks only from across-river pawns (red: rank >= 5)
        if r >= 5:
            if f >= 1 and board[sq - 10] == pawn:
                return True
            if f <= 7 and board[sq + 10] == pawn:
                return True
    else:
        if r <= 8 and board[sq + 1] == pawn:
            return True
        if r <= 4:
            if f >= 1 and board[sq - 10] == pawn:
                return True
            if f <= 7 and board[sq + 10] == pawn:
                return True
    # horses, with the blocking leg adjacent to the horse
    horse = HORSE | by << 3
    for df, dr in ((1, 2), (-1, 2), (1, -2), (-1, -2),
                   (2, 1), (-2, 1), (2, -1), (-2, -1)):
        of = f - df
        orank = r - dr
        if of < 0 or of > 8 or orank < 0 or orank > 9:
            continue
        if board[of * 10 + orank] != horse:
            continue
        if df == 2 or df == -2:
            leg = (of + df // 2) * 10 + orank
        else:
            leg = of * 10 + orank + dr // 2
        if board[leg] == EMPTY:
            return True
    # rooks, cannons and the enemy king along rays
    rook = ROOK | by << 3
    cannon = CANNON | by << 3
    king = KING | by << 3
    for df, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nf = f + df
        nr = r + dr
        seen = 0
        while 0 <= nf <= 8 and 0 <= nr <= 9:
            p = board[nf * 10 + nr]
            if p != EMPTY:
                if seen == 0:
                    if p == rook:
                        return True
                    if p == king and df == 0:
                        return True
                    seen = 1
                else:
                    if p == cannon:
                        return True
                    break
            nf += df
            nr += dr
    return False


@njit(cache=True)
def _in_check(board, color):
    ks = _find_king(board, color)
    if ks < 0:
        return True
    return _attacked(board, ks, 1 - color)


@njit(cache=True)
def _gen_pseudo(board, stm, out):
    """Pseudo-legal moves for `stm` into `out`; returns the count.

    Palace, river and blocking rules are enforced here; king safety is not.
    Generation order is square-ascending with fixed direction order, which
    pins the deterministic root tie-break.
    """
    n = 0
    lo = 0 if stm == RED else 8
    hi = 7 if stm == RED else 15
    for frm in range(90):
        code = board[frm]
        if code <= lo or code > hi:
            continue
        t = code & 7
        f = frm // 10
        r = frm % 10
        if t == ROOK:
            for df, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nf = f + df
                nr = r + dr
                while 0 <= nf <= 8 and 0 <= nr <= 9:
                    to = nf * 10 + nr
                    tc = board[to]
                    if tc == EMPTY:
                        out[n] = frm | to << 7
                        n += 1
                    else:
                        if tc >> 3 != stm:
                            out[n] = frm | to << 7
                            n += 1
                        break
                    nf += df
                    nr += dr
        elif t == CANNON:
            for df, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nf = f + df
                nr = r + dr
                screen = False
                while 0 <= nf <= 8 and 0 <= nr <= 9:
                    to = nf * 10 + nr
                    tc = board[to]
                    if not screen:
                        if tc == EMPTY:
                            out[n] = frm | to << 7
                            n += 1
                        else:
                            screen = True
                    elif tc != EMPTY:
                        if tc >> 3 != stm:
                            out[n] = frm | to << 7
                            n += 1
                        break
                    nf += df
                    nr += dr
        elif t == HORSE:
            for df, dr in ((1, 2), (-1, 2), (1, -2), (-1, -2),
                           (2, 1), (-2, 1), (2, -1), (-2, -1)):
                nf = f + df
                nr = r + dr
                if nf < 0 or nf > 8 or nr < 0 or nr > 9:
                    continue
                if df == 2 or df == -2:
                    leg = (f + df // 2) * 10 + r
                else:
                    leg = f * 10 + r + dr // 2
                if board[leg] != EMPTY:
                    continue
                to = nf * 10 + nr
                tc = board[to]
                if tc == EMPTY or tc >> 3 != stm:
                    out[n] = frm | to << 7
                    n += 1
        elif t == PAWN:
            fwd = 1 if stm == RED else -1
            nr = r + fwd
            if 0 <= nr <= 9:
                to = f * 10 + nr
                tc = board[to]
                if tc == EMPTY or tc >> 3 != stm:
                    out[n] = frm | to << 7
                    n += 1
            across = r >= 5 if stm == RED else r <= 4
            if across:
                for df in (-1, 1):
                    nf = f + df
                    if nf < 0 or nf > 8:
                        continue
                    to = nf * 10 + r
                    tc = board[to]
                    if tc == EMPTY or tc >> 3 != stm:
                        out[n] = frm | to << 7
                        n += 1
        elif t == KING:
            rlo = 0 if stm == RED else 7
            rhi = 2 if stm == RED else 9
            for df, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nf = f + df
                nr = r + dr
                if nf < 3 or nf > 5 or nr < rlo or nr > rhi:
                    continue
                to = nf * 10 + nr
                tc = board[to]
                if tc == EMPTY or tc >> 3 != stm:
                    out[n] = frm | to << 7
                    n += 1
        elif t == ADVISOR:
            rlo = 0 if stm == RED else 7
            rhi = 2 if stm == RED else 9
            for df, dr in ((1, 1), (-1, 1), (1, -1), (-1, -1)):
                nf = f + df
                nr = r + dr
                if nf < 3 or nf > 5 or nr < rlo or nr > rhi:
                    continue
                to = nf * 10 + nr
                tc = board[to]
                if tc == EMPTY or tc >> 3 != stm:
                    out[n] = frm | to << 7
                    n += 1
        else:  # elephant
            for df, dr in ((2, 2), (-2, 2), (2, -2), (-2, -2)):
                nf = f + df
                nr = r + dr
                if nf < 0 or nf > 8 or nr < 0 or nr > 9:
                    continue
                if stm == RED and nr > 4:
                    continue
                if stm == BLACK and nr < 5:
                    continue
                eye = (f + df // 2) * 10 + r + dr // 2
                if board[eye] != EMPTY:
                    continue
                to = nf * 10 + nr
                tc = board[to]
                if tc == EMPTY or tc >> 3 != stm:
                    out[n] = frm | to << 7
                    n += 1
    return n


@njit(cache=True)
def _gen_legal(board, stm, out):
    """Legal moves: pseudo-legal minus those leaving own king attacked."""
    buf = np.empty(MAX_MOVES, np.int32)
    n = _gen_pseudo(board, stm, buf)
    k = 0
    for i in range(n):
        m = buf[i]
        frm = m & 127
        to = m >> 7
        cap = board[to]
        board[to] = board[frm]
        board[frm] = EMPTY
        if not _in_check(board, stm):
            out[k] = m
            k += 1
        board[frm] = board[to]
        board[to] = cap
    return k


@njit(cache=True)
def _perft(board, stm, depth):
    buf = np.empty(MAX_MOVES, np.int32)
    n = _gen_legal(board, stm, buf)
    if depth == 1:
        return n
    total = 0
    for i in range(n):
        m = buf[i]
        frm = m & 127
        to = m >> 7
        cap = board[to]
        board[to] = board[frm]
        board[frm] = EMPTY
        total += _perft(board, 1 - stm, depth - 1)
        board[frm] = board[to]
        board[to] = cap
    return total


# ---------------------------------------------------------------------------
# Zobrist hashing (64-bit), used for repetition bookkeeping
# ---------------------------------------------------------------------------

_zrng = np.random.RandomState(0x5157_4E51)  # fixed: hashes are part of the API
_ZOBRIST_PIECE = _zrng.randint(0, 2 ** 64, size=(16, 90), dtype=np.uint64)
_ZOBRIST_SIDE = int(_zrng.randint(0, 2 ** 64, dtype=np.uint64))
_ZPIECE = [[int(x) for x in row] for row in _ZOBRIST_PIECE]


def compute_hash(board: np.ndarray, stm: int) -> int:
    h = 0
    for sq in range(90):
        code = board[sq]
        if code:
            h ^= _ZPIECE[code][sq]
    if stm == BLACK:
        h ^= _ZOBRIST_SIDE
    return h


# ---------------------------------------------------------------------------
# Moves and positions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Move:
    """A from/to square pair with the captured piece code (0 if none)."""

    from_sq: int
    to_sq: int
    captured: int = 0

    def __post_init__(self):
        if not (0 <= self.from_sq < 90 and 0 <= self.to_sq < 90):
            raise ValueError("square index out of range")
        if self.from_sq == self.to_sq:
            raise ValueError("null move")

    def to_int(self) -> int:
        return self.from_sq | self.to_sq << 7

    @staticmethod
    def from_int(m: int, board: np.ndarray) -> "Move":
        to = m >> 7
        return Move(m & 127, to, int(board[to]))

    @staticmethod
    def from_coord(text: str, position: "Position") -> "Move":
        """Parse coordinate notation like ``h2e2`` against a position."""
        if len(text) != 4:
            raise ValueError(f"bad move {text!r}")
        frm = parse_square(text[:2])
        to = parse_square(text[2:])
        return Move(frm, to, int(position.board[to]))

    def coord(self) -> str:
        return square_name(self.from_sq) + square_name(self.to_sq)

    def __str__(self) -> str:
        return self.coord()


_ADVISOR_SQUARES = {square(f, r) for f, r in
                    ((3, 0), (5, 0), (4, 1), (3, 2), (5, 2))}
_ELEPHANT_SQUARES = {square(f, r) for f, r in
                     ((2, 0), (6, 0), (0, 2), (4, 2), (8, 2), (2, 4), (6, 4))}
_MAX_COUNTS = {KING: 1, ADVISOR: 2, ELEPHANT: 2, HORSE: 2,
               ROOK: 2, CANNON: 2, PAWN: 5}


def _own_square(sq: int, color: int) -> int:
    return sq if color == RED else mirror_square(sq)


def validate_board(board: np.ndarray, stm: int) -> None:
    """Raise IllegalPositionError unless the placement satisfies every
    static invariant (kings, palace/river confinement, counts, and the
    side not to move not being in check)."""
    counts = {(c, t): 0 for c in (RED, BLACK) for t in range(1, 8)}
    for sq in range(90):
        code = int(board[sq])
        if code == EMPTY:
            continue
        if code == 8 or code > 15 or code < 0:
            raise IllegalPositionError(f"bad piece code {code} at {square_name(sq)}")
        color, t = code >> 3, code & 7
        counts[color, t] += 1
        own = _own_square(sq, color)
        f, r = own // 10, own % 10
        name = _PIECE_NAMES[t]
        if t == KING and not (3 <= f <= 5 and r <= 2):
            raise IllegalPositionError(f"{name} outside palace at {square_name(sq)}")
        if t == ADVISOR and own not in _ADVISOR_SQUARES:
            raise IllegalPositionError(f"{name} off palace diagonals at {square_name(sq)}")
        if t == ELEPHANT and own not in _ELEPHANT_SQUARES:
            raise IllegalPositionError(f"{name} off its seven points at {square_name(sq)}")
        if t == PAWN:
            if r < 3 or (r <= 4 and f % 2 == 1):
                raise IllegalPositionError(f"{name} on unreachable square {square_name(sq)}")
    for color in (RED, BLACK):
        side = "red" if color == RED else "black"
        if counts[color, KING] == 0:
            raise IllegalPositionError(f"missing {side} king")
        for t, cap in _MAX_COUNTS.items():
            if counts[color, t] > cap:
                raise IllegalPositionError(f"too many {side} {_PIECE_NAMES[t]}s")
    if _in_check(board, 1 - stm):
        raise IllegalPositionError("side not to move is in check")


class Position:
    """Full game state: board, side to move, ply and repetition history.

    A value object with explicit :meth:`copy`; do/undo mutate in place and
    round-trip bit-identically.
    """

    __slots__ = ("board", "stm", "ply", "history", "hash")

    def __init__(self, board: np.ndarray, stm: int, ply: int = 0,
                 history: list[int] | None = None, validate: bool = True):
        board = np.asarray(board, dtype=np.int8).copy()
        if board.shape != (90,):
            raise IllegalPositionError("board must have 90 cells")
        if validate:
            validate_board(board, stm)
        self.board = board
        self.stm = stm
        self.ply = ply
        self.history: list[int] = list(history) if history else []
        self.hash = compute_hash(board, stm)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def startpos() -> "Position":
        return parse_fen(STARTPOS_FEN)

    @staticmethod
    def from_packed(cells: bytes | np.ndarray, stm: int,
                    validate: bool = True) -> "Position":
        """Rebuild a position from the 90 packed piece codes of a dataset
        record."""
        arr = np.frombuffer(bytes(cells), dtype=np.uint8).astype(np.int8)
        return Position(arr, stm, validate=validate)

    def copy(self) -> "Position":
        p = Position.__new__(Position)
        p.board = self.board.copy()
        p.stm = self.stm
        p.ply = self.ply
        p.history = list(self.history)
        p.hash = self.hash
        return p

    def packed(self) -> bytes:
        return self.board.astype(np.uint8).tobytes()

    def flipped(self) -> "Position":
        """Colour-flipped vertical mirror with the side to move swapped.

        A rules-level transform: history does not carry over.
        """
        out = np.zeros(90, dtype=np.int8)
        for sq in range(90):
            code = int(self.board[sq])
            if code:
                out[mirror_square(sq)] = code ^ 8
        return Position(out, 1 - self.stm, ply=self.ply)

    # -- rules queries ------------------------------------------------------

    def legal_moves(self) -> list[Move]:
        buf = np.empty(MAX_MOVES, np.int32)
        n = _gen_legal(self.board, self.stm, buf)
        return [Move.from_int(int(buf[i]), self.board) for i in range(n)]

    def in_check(self, color: int | None = None) -> bool:
        return bool(_in_check(self.board, self.stm if color is None else color))

    def perft(self, depth: int) -> int:
        if depth < 0:
            raise ValueError("depth must be >= 0")
        if depth == 0:
            return 1
        return int(_perft(self.board, self.stm, depth))

    # -- move execution ------------------------------------------------------

    def do_move(self, move: Move) -> tuple:
        """Apply a legal move; returns the token undo_move needs.

        Applying an illegal move is a contract violation, checked only in
        debug runs.
        """
        if __debug__:
            assert any(m.from_sq == move.from_sq and m.to_sq == move.to_sq
                       for m in self.legal_moves()), f"illegal move {move}"
        frm, to = move.from_sq, move.to_sq
        piece = int(self.board[frm])
        captured = int(self.board[to])
        self.history.append(self.hash)
        self.board[to] = piece
        self.board[frm] = EMPTY
        h = self.hash ^ _ZPIECE[piece][frm] ^ _ZPIECE[piece][to] ^ _ZOBRIST_SIDE
        if captured:
            h ^= _ZPIECE[captured][to]
        self.hash = h
        self.stm = 1 - self.stm
        self.ply += 1
        return (frm, to, piece, captured)

    def undo_move(self, token: tuple) -> None:
        frm, to, piece, captured = token
        self.board[frm] = piece
        self.board[to] = captured
        self.stm = 1 - self.stm
        self.ply -= 1
        self.hash = self.history.pop()

    def repetition_count(self) -> int:
        """Occurrences of the current position (hash) including itself."""
        return 1 + sum(1 for h in self.history if h == self.hash)

    # -- comparisons ---------------------------------------------------------

    def __eq__(self, other) -> bool:
        return (isinstance(other, Position)
                and np.array_equal(self.board, other.board)
                and self.stm == other.stm
                and self.ply == other.ply
                and self.history == other.history)

    def __hash__(self):
        return self.hash

    def __repr__(self) -> str:
        return f"Position({to_fen(self)!r}, ply={self.ply})"


# ---------------------------------------------------------------------------
# FEN
# ---------------------------------------------------------------------------


def parse_fen(text: str) -> Position:
    """Parse a Xiangqi FEN: 10 '/'-separated ranks from Black's back rank,
    digits for empty runs, then a side field ('w' or 'r' = Red, 'b' = Black).
    Trailing fields are ignored."""
    fields = text.split()
    if len(fields) < 2:
        raise FenError("FEN needs a placement and a side-to-move field")
    rows = fields[0].split("/")
    if len(rows) != 10:
        raise FenError(f"expected 10 ranks, got {len(rows)}")
    board = np.zeros(90, dtype=np.int8)
    for i, row in enumerate(rows):
        rank = 9 - i
        file = 0
        for ch in row:
            if ch.isdigit():
                file += int(ch)
            else:
                t = _CHAR_PIECES.get(ch.lower())
                if t is None:
                    raise FenError(f"unknown piece letter {ch!r}")
                if file >= 9:
                    raise FenError(f"rank {rank} has more than 9 files")
                color = RED if ch.isupper() else BLACK
                board[square(file, rank)] = t | color << 3
                file += 1
        if file != 9:
            raise FenError(f"rank {rank} has {file} files, expected 9")
    side = fields[1].lower()
    if side in ("w", "r"):
        stm = RED
    elif side == "b":
        stm = BLACK
    else:
        raise FenError(f"bad side-to-move field {side!r}")
    return Position(board, stm)


def to_fen(p: Position) -> str:
    """Serialize board and side to move (history is excluded)."""
    rows = []
    for i in range(10):
        rank = 9 - i
        row = ""
        run = 0
        for file in range(9):
            code = int(p.board[square(file, rank)])
            if code == EMPTY:
                run += 1
            else:
                if run:
                    row += str(run)
                    run = 0
                ch = _PIECE_CHARS[code & 7]
                row += ch.upper() if code >> 3 == RED else ch
        if run:
            row += str(run)
        rows.append(row)
    return "/".join(rows) + (" w" if p.stm == RED else " b")
