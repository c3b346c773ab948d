"""Training-data generation: game ingestion, quiet-position filtering,
dataset balancing, self-play game generation, and the binary dataset format.

The pipeline expands every position of every game by one legal move, keeps
the children that pass the quiet filter (no check, static evaluation within
M1 of quiescence and within M2 of a fixed-depth negamax), labels them with
the negamax value, deduplicates, and stratified-downsamples to the balance
quotas.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .board import (ADVISOR, ELEPHANT, KING, MATE_SCORE, PAWN, RED,
                    IllegalPositionError, Move, Position, parse_fen, to_fen,
                    _in_check)
from .search import (INF_SCORE, SearchLimits, best_move, negamax, quiescence,
                     root_scores)

log = logging.getLogger(__name__)

DATASET_MAGIC = b"NQD1"
DATASET_VERSION = 1

#: Numpy layout of one stored record: packed board, side to move, label.
RECORD_DTYPE = np.dtype([("board", "u1", (90,)), ("stm", "u1"),
                         ("label", "<i2")])
assert RECORD_DTYPE.itemsize == 93

#: Stored labels are clamped here, bounding WDL targets away from 0 and 1.
LABEL_CLAMP = 2000

#: Children whose search value is this close to mate are never emitted.
MATE_ADJACENT = MATE_SCORE // 2


class QuotaError(ValueError):
    """Balance quotas cannot be satisfied by the available records."""


class GameFormatError(ValueError):
    """Malformed game-list line."""


@dataclass
class GameRecord:
    """A start position plus the moves actually played."""

    start: Position
    moves: list[Move]

    def positions(self):
        """Yield every position of the game, start through final."""
        p = self.start.copy()
        yield p
        for m in self.moves:
            p.do_move(m)
            yield p

    def final(self) -> Position:
        p = self.start.copy()
        for m in self.moves:
            p.do_move(m)
        return p


@dataclass
class FilterMargins:
    """Quiet-filter margins in centipawns plus the negamax probe depth."""

    m1: int = 60
    m2: int = 70
    negamax_depth: int = 4
    qsearch_ply_cap: int = 16

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("margins must be positive")
        if self.negamax_depth < 1:
            raise ValueError("negamax_depth must be >= 1")


@dataclass(frozen=True)
class DatasetRecord:
    """Packed position plus its centipawn label (side-to-move relative)."""

    cells: bytes
    stm: int
    label: int

    def position(self, validate: bool = True) -> Position:
        return Position.from_packed(self.cells, self.stm, validate=validate)

    def key(self) -> bytes:
        return self.cells + bytes([self.stm])


@dataclass
class BalanceQuotas:
    sign_split: float = 0.50
    quiet_band_min: float = 0.50
    imbalanced_min: float = 0.40
    tolerance: float = 0.02

    def __post_init__(self):
        if self.quiet_band_min + self.imbalanced_min > 1.0:
            raise ValueError("band and imbalanced minima exceed 1.0")
        if not (0.0 < self.sign_split < 1.0):
            raise ValueError("sign_split must be in (0, 1)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class DatagenStats:
    games: int = 0
    positions: int = 0
    candidates: int = 0
    rejected_check: int = 0
    rejected_m1: int = 0
    rejected_m2: int = 0
    rejected_mate_adjacent: int = 0
    rejected_duplicate: int = 0
    emitted: int = 0

    def merge_counts(self, other: "DatagenStats") -> None:
        for f in ("games", "positions", "candidates", "rejected_check",
                  "rejected_m1", "rejected_m2", "rejected_mate_adjacent"):
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def lines(self) -> list[str]:
        return [f"{k:24s} {v}" for k, v in self.__dict__.items()]


# ---------------------------------------------------------------------------
# quiet filter (Algorithm: no check; |E - Quiescence| <= M1;
# |E - Negamax at fixed depth| <= M2)
# ---------------------------------------------------------------------------


def quiet_details(position: Position, margins: FilterMargins, eval_source
                  ) -> tuple[bool, str, int | None]:
    """Classify a position; returns (quiet, reason, negamax_value).

    reason is one of 'check', 'm1', 'm2', 'quiet'.  The negamax value is
    only computed once the cheaper tests pass (it doubles as the record
    label); None when rejected earlier.
    """
    if position.in_check():
        return False, "check", None
    static = eval_source.static_eval(position)
    q = quiescence(position, -INF_SCORE, INF_SCORE, eval_source,
                   margins.qsearch_ply_cap)
    if abs(static - q) > margins.m1:
        return False, "m1", None
    nm = negamax(position, margins.negamax_depth, -INF_SCORE, INF_SCORE,
                 eval_source, margins.qsearch_ply_cap)
    if abs(static - nm) > margins.m2:
        return False, "m2", nm
    return True, "quiet", nm


def is_quiet_position(position: Position, margins: FilterMargins,
                      eval_source) -> bool:
    """True iff not in check and the static evaluation is within M1 of the
    quiescence value and within M2 of the fixed-depth negamax value."""
    return quiet_details(position, margins, eval_source)[0]


def _expand_game(game: GameRecord, margins: FilterMargins, eval_source
                 ) -> tuple[list[DatasetRecord], DatagenStats]:
    """Candidates from one game: every quiet one-move child of every
    position, labelled with its negamax value.  Duplicates not yet removed."""
    stats = DatagenStats(games=1)
    out: list[DatasetRecord] = []
    for p in game.positions():
        stats.positions += 1
        for move in p.legal_moves():
            stats.candidates += 1
            token = p.do_move(move)
            quiet, reason, nm = quiet_details(p, margins, eval_source)
            if not quiet:
                setattr(stats, "rejected_" + reason,
                        getattr(stats, "rejected_" + reason) + 1)
            elif abs(nm) >= MATE_ADJACENT:
                stats.rejected_mate_adjacent += 1
            else:
                label = max(-LABEL_CLAMP, min(LABEL_CLAMP, nm))
                out.append(DatasetRecord(p.packed(), p.stm, label))
            p.undo_move(token)
    return out, stats


_worker_ctx: dict = {}


def _worker_init(margins, eval_source):
    _worker_ctx["margins"] = margins
    _worker_ctx["eval"] = eval_source


def _worker_expand(game):
    return _expand_game(game, _worker_ctx["margins"], _worker_ctx["eval"])


def compute_dataset(games, margins: FilterMargins, eval_source,
                    threads: int = 1, stats: DatagenStats | None = None):
    """Yield deduplicated DatasetRecords for every quiet one-move child of
    every position in `games` (first occurrence kept).

    With threads > 1 the corpus is partitioned game-by-game across worker
    processes; output order still follows the input order exactly.
    """
    stats = stats if stats is not None else DatagenStats()
    seen: set[bytes] = set()

    def emit(batch, batch_stats):
        stats.merge_counts(batch_stats)
        for rec in batch:
            k = rec.key()
            if k in seen:
                stats.rejected_duplicate += 1
                continue
            seen.add(k)
            stats.emitted += 1
            yield rec

    if threads <= 1:
        for game in games:
            batch, s = _expand_game(game, margins, eval_source)
            yield from emit(batch, s)
    else:
        games = list(games)
        with ProcessPoolExecutor(max_workers=threads,
                                 initializer=_worker_init,
                                 initargs=(margins, eval_source)) as pool:
            for batch, s in pool.map(_worker_expand, games, chunksize=1):
                yield from emit(batch, s)


# ---------------------------------------------------------------------------
# balancing
# ---------------------------------------------------------------------------

_STRATA = ("positive_band", "positive_imbalanced",
           "negative_band", "negative_imbalanced")


def _stratum(label: int) -> str | None:
    if label == 0:
        return None
    if label > 0:
        return "positive_band" if label <= 100 else "positive_imbalanced"
    return "negative_band" if label >= -100 else "negative_imbalanced"


def measure_quotas(labels) -> dict[str, float]:
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ValueError("no records")
    return {
        "positive": float(np.mean(labels > 0)),
        "negative": float(np.mean(labels < 0)),
        "band": float(np.mean(np.abs(labels) <= 100)),
        "imbalanced": float(np.mean(np.abs(labels) > 100)),
    }


def balance_dataset(records, quotas: BalanceQuotas | None = None,
                    seed: int = 0) -> list[DatasetRecord]:
    """Stratified downsample meeting the quotas, deterministically shuffled.

    Strata are sign x band; zero labels belong to no sign stratum and are
    dropped.  Target fractions put `imbalanced_min` of the output in the
    imbalanced band and the rest inside +-100, split evenly across signs by
    `sign_split`.  Raises QuotaError naming the deficient stratum when the
    input cannot meet a quota.
    """
    quotas = quotas or BalanceQuotas()
    records = list(records)
    pools: dict[str, list[int]] = {s: [] for s in _STRATA}
    for i, rec in enumerate(records):
        s = _stratum(rec.label)
        if s is not None:
            pools[s].append(i)

    imb = quotas.imbalanced_min
    fractions = {
        "positive_band": (1.0 - imb) * quotas.sign_split,
        "negative_band": (1.0 - imb) * (1.0 - quotas.sign_split),
        "positive_imbalanced": imb * quotas.sign_split,
        "negative_imbalanced": imb * (1.0 - quotas.sign_split),
    }
    total = None
    for s in _STRATA:
        if not pools[s]:
            raise QuotaError(f"stratum {s!r} has no records; "
                             f"quotas unsatisfiable")
        cap = int(len(pools[s]) / fractions[s])
        total = cap if total is None else min(total, cap)
    total -= total % 20  # keep per-stratum counts integral
    if total <= 0:
        counts = {s: len(pools[s]) for s in _STRATA}
        raise QuotaError(f"too few records per stratum: {counts}")

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for s in _STRATA:  # fixed order keeps the rng stream deterministic
        k = int(round(total * fractions[s]))
        idx = rng.choice(len(pools[s]), size=k, replace=False)
        chosen.extend(pools[s][int(i)] for i in idx)
    out = [records[i] for i in chosen]
    order = rng.permutation(len(out))
    out = [out[int(i)] for i in order]

    measured = measure_quotas([r.label for r in out])
    tol = quotas.tolerance
    if abs(measured["positive"] - quotas.sign_split) > tol:
        raise QuotaError(f"sign split {measured['positive']:.3f} outside "
                         f"tolerance")
    if measured["band"] < quotas.quiet_band_min - tol:
        raise QuotaError(f"band fraction {measured['band']:.3f} below quota")
    if measured["imbalanced"] < quotas.imbalanced_min - tol:
        raise QuotaError(f"imbalanced fraction {measured['imbalanced']:.3f} "
                         f"below quota")
    return out


# ---------------------------------------------------------------------------
# game ingestion and self-play generation
# ---------------------------------------------------------------------------


def parse_game_line(line: str) -> GameRecord:
    """One game per line: `<FEN>|<move1> <move2> ...` in coordinate
    notation (file a-i from Red's left, rank 0-9 from Red's side)."""
    if "|" not in line:
        raise GameFormatError("missing '|' separator")
    fen, moves_text = line.split("|", 1)
    position = parse_fen(fen.strip())
    start = position.copy()
    moves = []
    for i, text in enumerate(moves_text.split()):
        move = Move.from_coord(text, position)
        legal = {(m.from_sq, m.to_sq) for m in position.legal_moves()}
        if (move.from_sq, move.to_sq) not in legal:
            raise GameFormatError(f"illegal move {text!r} at ply {i}")
        position.do_move(move)
        moves.append(move)
    return GameRecord(start, moves)


def ingest_games(path, on_reject=None) -> list[GameRecord]:
    """Read a game-list file, skipping (and logging) games that fail to
    replay legally.  Raises on unreadable files or zero parseable games."""
    games: list[GameRecord] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                games.append(parse_game_line(line))
            except (GameFormatError, IllegalPositionError, ValueError) as e:
                log.warning("skipping game at %s:%d: %s", path, lineno, e)
                if on_reject is not None:
                    on_reject(lineno, str(e))
    if not games:
        raise ValueError(f"zero parseable games in {path}")
    return games


def write_games(games, path) -> None:
    with open(path, "w") as fh:
        for g in games:
            fh.write(to_fen(g.start) + "|"
                     + " ".join(m.coord() for m in g.moves) + "\n")


def _play_selfplay_game(args):
    (seed_positions, limits, engines, rng_seed, game_index,
     diversity_plies, move_cap) = args
    rng = np.random.default_rng([rng_seed, game_index])
    start = seed_positions[int(rng.integers(len(seed_positions)))].copy()
    engine_pair = (engines[int(rng.integers(len(engines)))],
                   engines[int(rng.integers(len(engines)))])
    position = start.copy()
    moves: list[Move] = []
    while len(moves) < move_cap:
        eval_source = engine_pair[position.stm]
        if len(moves) < diversity_plies:
            scored, _ = root_scores(position, limits, eval_source,
                                    full_window=True)
            if not scored:
                break
            scored.sort(key=lambda ms: -ms[1])
            top = scored[:3]
            move = top[int(rng.integers(len(top)))][0]
        else:
            result = best_move(position, limits, eval_source)
            if result.best_move is None:
                break
            move = result.best_move
        position.do_move(move)
        moves.append(move)
        if position.repetition_count() >= 3:
            break
    return GameRecord(start, moves)


def generate_selfplay(seeds, n_games: int, limits: SearchLimits, engines,
                      rng_seed: int = 0, diversity_plies: int = 8,
                      move_cap: int = 200, threads: int = 1
                      ) -> list[GameRecord]:
    """Self-play games from randomly drawn seed positions.

    For the first `diversity_plies` plies the mover picks uniformly among
    the top-3 root moves; afterwards it plays the best move.  Games end on
    mate/stalemate, the move cap, or threefold repetition.  Fully
    reproducible from rng_seed regardless of thread count.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("empty seed position list")
    if n_games < 1:
        raise ValueError("n_games must be >= 1")
    engines = list(engines)
    if not engines:
        raise ValueError("need at least one engine")
    jobs = [(seeds, limits, engines, rng_seed, i, diversity_plies, move_cap)
            for i in range(n_games)]
    if threads <= 1:
        return [_play_selfplay_game(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_play_selfplay_game, jobs, chunksize=1))


# ---------------------------------------------------------------------------
# binary dataset I/O
# ---------------------------------------------------------------------------


def records_to_array(records) -> np.ndarray:
    arr = np.empty(len(records), dtype=RECORD_DTYPE)
    for i, rec in enumerate(records):
        arr[i]["board"] = np.frombuffer(rec.cells, dtype=np.uint8)
        arr[i]["stm"] = rec.stm
        arr[i]["label"] = rec.label
    return arr


def array_to_records(arr) -> list[DatasetRecord]:
    return [DatasetRecord(arr[i]["board"].tobytes(), int(arr[i]["stm"]),
                          int(arr[i]["label"])) for i in range(len(arr))]


def write_dataset(records, path) -> None:
    """Write records (list or structured array) in the NQD1 format:
    magic, version u32, record count u64, then 93-byte records."""
    arr = records if isinstance(records, np.ndarray) \
        else records_to_array(records)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", DATASET_MAGIC, DATASET_VERSION,
                             len(arr)))
        fh.write(arr.tobytes())


# own-perspective square masks for palace-bound and river-bound pieces
_ADV_OK = np.zeros(90, dtype=np.uint8)
_ELE_OK = np.zeros(90, dtype=np.uint8)
_PAWN_OK = np.zeros(90, dtype=np.uint8)
for _f, _r in ((3, 0), (5, 0), (4, 1), (3, 2), (5, 2)):
    _ADV_OK[_f * 10 + _r] = 1
for _f, _r in ((2, 0), (6, 0), (0, 2), (4, 2), (8, 2), (2, 4), (6, 4)):
    _ELE_OK[_f * 10 + _r] = 1
for _sq in range(90):
    _rk = _sq % 10
    if _rk >= 5 or (_rk >= 3 and (_sq // 10) % 2 == 0):
        _PAWN_OK[_sq] = 1
_MAX_PER_TYPE = np.array([0, 1, 2, 2, 2, 2, 2, 5], dtype=np.int8)


@njit(cache=True)
def _first_illegal(boards, stms, adv_ok, ele_ok, pawn_ok, caps):
    scratch = np.empty(90, dtype=np.int8)
    counts = np.empty((2, 8), dtype=np.int64)
    for i in range(boards.shape[0]):
        counts[:] = 0
        ok = True
        for sq in range(90):
            code = boards[i, sq]
            if code == 0:
                continue
            if code > 15 or code == 8:
                ok = False
                break
            color = code >> 3
            t = code & 7
            counts[color, t] += 1
            own = sq if color == RED else sq - 2 * (sq % 10) + 9
            if t == KING:
                if not (3 <= own // 10 <= 5 and own % 10 <= 2):
                    ok = False
                    break
            elif t == ADVISOR:
                if not adv_ok[own]:
                    ok = False
                    break
            elif t == ELEPHANT:
                if not ele_ok[own]:
                    ok = False
                    break
            elif t == PAWN:
                if not pawn_ok[own]:
                    ok = False
                    break
        if ok:
            for color in range(2):
                if counts[color, KING] != 1:
                    ok = False
                for t in range(2, 8):
                    if counts[color, t] > caps[t]:
                        ok = False
        if ok:
            for sq in range(90):
                scratch[sq] = boards[i, sq]
            if _in_check(scratch, 1 - stms[i]):
                ok = False
        if not ok:
            return i
    return -1


def read_dataset_array(path, validate: bool = True) -> np.ndarray:
    """Read an NQD1 file into a structured array, validating the header,
    the byte count and (unless disabled) per-record position legality."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ValueError(f"{path}: truncated header")
        magic, version, count = struct.unpack("<4sIQ", head)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        blob = fh.read()
    expected = count * RECORD_DTYPE.itemsize
    if len(blob) != expected:
        offset = 16 + len(blob)
        raise ValueError(f"{path}: expected {expected} record bytes, file "
                         f"ends at byte offset {offset}")
    arr = np.frombuffer(blob, dtype=RECORD_DTYPE).copy()
    if validate and len(arr):
        stms = arr["stm"].astype(np.int64)
        if stms.max(initial=0) > 1:
            bad = int(np.argmax(stms > 1))
            raise ValueError(f"{path}: record {bad} has bad side byte")
        bad = int(_first_illegal(arr["board"], stms, _ADV_OK, _ELE_OK,
                                 _PAWN_OK, _MAX_PER_TYPE))
        if bad >= 0:
            try:  # re-run the python validator for a descriptive message
                Position.from_packed(arr[bad]["board"].tobytes(),
                                     int(arr[bad]["stm"]))
                reason = "illegal position"
            except ValueError as e:
                reason = str(e)
            raise ValueError(f"{path}: record {bad}: {reason}")
    return arr


def read_dataset(path, validate: bool = True) -> list[DatasetRecord]:
    return array_to_records(read_dataset_array(path, validate=validate))
