"""Two-layer NNUE: perspective feature encoding, forward inference,
incrementally updated accumulators, and model serialization.

Architecture: each perspective's active features select columns of a shared
feature transform into 128 pre-activations; both vectors are clamped to
[0, 1], concatenated with the side-to-move perspective first, and fed to a
single linear output with a logistic squash.  The pre-sigmoid activation
times the WDL scale is the engine's centipawn evaluation.

The default feature encoder uses 14 planes x 90 squares = 1260 features per
perspective (own seven piece types then the opponent's), with each player's
own side normalized to the bottom of the board.  The encoder is a plain
(perspective, piece, square) -> index table, so alternate/wider encodings
can be plugged in without touching inference or search.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .board import BLACK, RED, Position, mirror_square
from .search import NNUE_EVAL_LIMIT, _acc_refresh, _leaf_eval

DEFAULT_INPUT_DIM = 1260
HIDDEN = 128

MODEL_MAGIC = b"NNM1"
MODEL_VERSION = 1

DEFAULT_WDL_SCALE = 400.0


def _default_mapping(persp: int, color: int, ptype: int, sq: int) -> int:
    plane = (ptype - 1) if color == persp else 7 + (ptype - 1)
    psq = sq if persp == RED else mirror_square(sq)
    return plane * 90 + psq


class FeatureSet:
    """Encoder mapping (perspective, piece colour, piece type, square) to a
    feature index below input_dim.

    The black-perspective encoding of a position always equals the
    red-perspective encoding of its colour-flipped vertical mirror; this is
    enforced at construction for custom mappings too.
    """

    def __init__(self, input_dim: int = DEFAULT_INPUT_DIM, mapping=None):
        if input_dim < 14 * 90:
            raise ValueError("input_dim too small for 14 planes x 90 squares")
        self.input_dim = input_dim
        mapping = mapping or _default_mapping
        table = np.zeros((2, 16, 90), dtype=np.int32)
        seen = [set(), set()]
        for persp in (RED, BLACK):
            for color in (RED, BLACK):
                for ptype in range(1, 8):
                    code = ptype | color << 3
                    for sq in range(90):
                        idx = mapping(persp, color, ptype, sq)
                        if not (0 <= idx < input_dim):
                            raise ValueError(
                                f"feature index {idx} out of range")
                        if idx in seen[persp]:
                            raise ValueError("encoder mapping not injective")
                        seen[persp].add(idx)
                        table[persp, code, sq] = idx
        for code in range(1, 16):
            if code == 8:
                continue
            for sq in range(90):
                if table[BLACK, code, sq] != table[RED, code ^ 8,
                                                   mirror_square(sq)]:
                    raise ValueError(
                        "encoder violates the perspective mirror identity")
        self.table = table

    def index(self, persp: int, code: int, sq: int) -> int:
        return int(self.table[persp, code, sq])

    def encode(self, position: Position) -> tuple[list[int], list[int]]:
        """Active feature indices per perspective, sorted ascending."""
        red, black = [], []
        for sq in range(90):
            code = int(position.board[sq])
            if code:
                red.append(int(self.table[RED, code, sq]))
                black.append(int(self.table[BLACK, code, sq]))
        return sorted(red), sorted(black)


@njit(cache=True)
def _encode_batch(boards, feat, out_idx, out_cnt):
    for i in range(boards.shape[0]):
        for persp in range(2):
            k = 0
            for sq in range(90):
                code = boards[i, sq]
                if code:
                    out_idx[i, persp, k] = feat[persp, code, sq]
                    k += 1
            out_cnt[i, persp] = k
            for j in range(k, out_idx.shape[2]):
                out_idx[i, persp, j] = -1


def encode_batch(boards: np.ndarray, feature_set: FeatureSet
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized FeatureSet.encode over an (N, 90) board-code array.

    Returns (indices (N,2,32) with -1 padding, counts (N,2)).
    """
    n = boards.shape[0]
    idx = np.empty((n, 2, 32), dtype=np.int32)
    cnt = np.empty((n, 2), dtype=np.int32)
    _encode_batch(np.ascontiguousarray(boards, dtype=np.uint8),
                  feature_set.table, idx, cnt)
    return idx, cnt


@dataclass
class NnueModel:
    """Feature-transform and output weights; immutable once built."""

    feature_set: FeatureSet
    ft_w: np.ndarray   # (input_dim, 128) float32
    ft_b: np.ndarray   # (128,) float32
    out_w: np.ndarray  # (256,) float32
    out_b: float

    def __post_init__(self):
        self.ft_w = np.ascontiguousarray(self.ft_w, dtype=np.float32)
        self.ft_b = np.ascontiguousarray(self.ft_b, dtype=np.float32)
        self.out_w = np.ascontiguousarray(self.out_w, dtype=np.float32)
        self.out_b = float(self.out_b)
        if self.ft_w.shape != (self.feature_set.input_dim, HIDDEN):
            raise ValueError(f"feature weights must be "
                             f"({self.feature_set.input_dim}, {HIDDEN})")
        if self.ft_b.shape != (HIDDEN,) or self.out_w.shape != (2 * HIDDEN,):
            raise ValueError("bias/output dimensions inconsistent")
        for arr in (self.ft_w, self.ft_b, self.out_w):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite model weights")
        if not math.isfinite(self.out_b):
            raise ValueError("non-finite output bias")

    @classmethod
    def random_init(cls, feature_set: FeatureSet | None = None,
                    seed: int = 0) -> "NnueModel":
        """Uniform Glorot initialization."""
        fs = feature_set or FeatureSet()
        rng = np.random.default_rng(seed)
        lim_ft = math.sqrt(6.0 / (fs.input_dim + HIDDEN))
        lim_out = math.sqrt(6.0 / (2 * HIDDEN + 1))
        return cls(fs,
                   rng.uniform(-lim_ft, lim_ft, (fs.input_dim, HIDDEN)),
                   np.zeros(HIDDEN),
                   rng.uniform(-lim_out, lim_out, 2 * HIDDEN),
                   0.0)


class Accumulator:
    """Per-perspective first-layer pre-activations, updated incrementally."""

    __slots__ = ("vectors",)

    def __init__(self):
        self.vectors = np.zeros((1, 2, HIDDEN), dtype=np.float32)

    def refresh(self, model: NnueModel, position: Position) -> None:
        _acc_refresh(position.board, self.vectors, 0,
                     model.feature_set.table, model.ft_w, model.ft_b)

    def apply(self, model: NnueModel, removed, added) -> None:
        """Apply feature deltas: sequences of (perspective, index) pairs."""
        for persp, idx in removed:
            self.vectors[0, persp] -= model.ft_w[idx]
        for persp, idx in added:
            self.vectors[0, persp] += model.ft_w[idx]

    def copy(self) -> "Accumulator":
        out = Accumulator()
        out.vectors = self.vectors.copy()
        return out


def move_deltas(position: Position, move, feature_set: FeatureSet
                ) -> tuple[list, list]:
    """Feature deltas for a move about to be played from `position`.

    Returns (removed, added) as lists of (perspective, index) pairs; a quiet
    move yields 2 removed + 2 added, a capture 4 removed + 2 added.
    """
    piece = int(position.board[move.from_sq])
    captured = int(position.board[move.to_sq])
    removed, added = [], []
    for persp in (RED, BLACK):
        removed.append((persp, feature_set.index(persp, piece, move.from_sq)))
        added.append((persp, feature_set.index(persp, piece, move.to_sq)))
        if captured:
            removed.append((persp,
                            feature_set.index(persp, captured, move.to_sq)))
    return removed, added


def forward(model: NnueModel, red_idx, black_idx, side_to_move: int) -> float:
    """Win probability in (0, 1) for the side to move."""
    acc_red = model.ft_b + model.ft_w[np.asarray(red_idx, dtype=np.int64)] \
        .sum(axis=0, dtype=np.float32)
    acc_black = model.ft_b + model.ft_w[np.asarray(black_idx, dtype=np.int64)] \
        .sum(axis=0, dtype=np.float32)
    own, opp = ((acc_red, acc_black) if side_to_move == RED
                else (acc_black, acc_red))
    h = np.clip(np.concatenate([own, opp]), 0.0, 1.0)
    z = float(np.dot(model.out_w, h)) + model.out_b
    return 1.0 / (1.0 + math.exp(-z))


def nnue_evaluate(model: NnueModel, accumulator: Accumulator,
                  side_to_move: int,
                  wdl_scale: float = DEFAULT_WDL_SCALE) -> int:
    """Centipawns = wdl_scale * logit(forward output), side-to-move
    relative, computed through the same kernel the search uses."""
    return int(_leaf_eval(side_to_move, 0, 1, model.out_w,
                          float(model.out_b), float(wdl_scale),
                          accumulator.vectors, 0))


def cp_to_wdl(cp: float, wdl_scale: float = DEFAULT_WDL_SCALE) -> float:
    """Logistic map from centipawns to a (0, 1) training target."""
    return 1.0 / (1.0 + math.exp(-cp / wdl_scale))


def wdl_to_cp(w: float, wdl_scale: float = DEFAULT_WDL_SCALE) -> float:
    if not (0.0 < w < 1.0):
        raise ValueError("wdl value must be strictly inside (0, 1)")
    return wdl_scale * math.log(w / (1.0 - w))


class NnueEval:
    """NNUE evaluation source for the search (`kind` 1)."""

    kind = 1

    def __init__(self, model: NnueModel,
                 wdl_scale: float = DEFAULT_WDL_SCALE):
        self.model = model
        self.wdl_scale = float(wdl_scale)
        self._dummy_pov = np.zeros((16, 90), dtype=np.int32)

    def static_eval(self, position: Position) -> int:
        acc = Accumulator()
        acc.refresh(self.model, position)
        return nnue_evaluate(self.model, acc, position.stm, self.wdl_scale)

    def kernel_args(self) -> tuple:
        m = self.model
        return (self._dummy_pov, m.feature_set.table, m.ft_w, m.ft_b,
                m.out_w, float(m.out_b), self.wdl_scale)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_model(model: NnueModel, path) -> None:
    """Little-endian: magic, version u32, input_dim u32, hidden u32, then
    float32 feature weights (row-major), feature bias, output weights,
    output bias."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", MODEL_MAGIC, MODEL_VERSION,
                             model.feature_set.input_dim, HIDDEN))
        fh.write(model.ft_w.astype("<f4").tobytes())
        fh.write(model.ft_b.astype("<f4").tobytes())
        fh.write(model.out_w.astype("<f4").tobytes())
        fh.write(struct.pack("<f", model.out_b))


def load_model(path, feature_set: FeatureSet | None = None) -> NnueModel:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ValueError("model file truncated in header")
        magic, version, input_dim, hidden = struct.unpack("<4sIII", head)
        if magic != MODEL_MAGIC:
            raise ValueError(f"bad model magic {magic!r}")
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        if hidden != HIDDEN:
            raise ValueError(f"hidden size {hidden} != {HIDDEN}")
        fs = feature_set or FeatureSet()
        if input_dim != fs.input_dim:
            raise ValueError(f"model input_dim {input_dim} does not match "
                             f"feature set ({fs.input_dim})")
        need = (input_dim * HIDDEN + HIDDEN + 2 * HIDDEN + 1) * 4
        blob = fh.read(need + 1)
        if len(blob) != need:
            raise ValueError(f"model file has {len(blob)} weight bytes, "
                             f"expected {need}")
        off = 0
        ft_w = np.frombuffer(blob, "<f4", input_dim * HIDDEN, off) \
            .reshape(input_dim, HIDDEN)
        off += input_dim * HIDDEN * 4
        ft_b = np.frombuffer(blob, "<f4", HIDDEN, off)
        off += HIDDEN * 4
        out_w = np.frombuffer(blob, "<f4", 2 * HIDDEN, off)
        off += 2 * HIDDEN * 4
        (out_b,) = struct.unpack_from("<f", blob, off)
        return NnueModel(fs, ft_w.copy(), ft_b.copy(), out_w.copy(), out_b)
