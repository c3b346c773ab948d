"""Fail-soft alpha-beta negamax with quiescence, over any evaluation source.

Deliberately plain: no transposition table, no iterative deepening, and no
move ordering beyond captures-first MVV-LVA, so results are deterministic
and oracle-checkable.  Draw score is 0; a side with no legal moves has lost
(Xiangqi stalemate is a loss), scored as mate minus the ply distance.

An evaluation source is any object with:

``kind``
    0 for piece-square-table evaluation, 1 for NNUE.
``static_eval(position) -> int``
    Centipawns relative to the side to move.
``kernel_args() -> tuple``
    ``(red_pov, feat, ftw, ftb, outw, outb, wdl_scale)`` arrays consumed by
    the search kernels (unused slots filled with dummies).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .board import (MATE_SCORE, MAX_MOVES, RED, Move, Position, _gen_legal,
                    _in_check)
from .pst import PstTables, default_tables

#: Window bound strictly larger than any reachable score.
INF_SCORE = MATE_SCORE + 1_000

#: NNUE centipawn output is clamped here, keeping it below the mate region.
NNUE_EVAL_LIMIT = MATE_SCORE // 2 - 1

MAX_PLY = 100

_DEFAULT_QPLY_CAP = 16

# victim/attacker values for MVV-LVA ordering only
_ORDER_VAL = np.array([0, 10000, 200, 200, 450, 1000, 450, 100], dtype=np.int32)


@dataclass
class SearchLimits:
    """Fixed-depth limits; node_cap softly truncates (0 = unlimited)."""

    depth: int = 4
    node_cap: int = 0
    qsearch_ply_cap: int = _DEFAULT_QPLY_CAP

    def __post_init__(self):
        if not (0 <= self.depth <= 64):
            raise ValueError("depth must be in 0..64")
        if not (0 <= self.qsearch_ply_cap <= 32):
            raise ValueError("qsearch_ply_cap must be in 0..32")
        if self.node_cap < 0:
            raise ValueError("node_cap must be >= 0")


@dataclass
class SearchResult:
    score: int
    best_move: Move | None
    nodes: int


class PstEval:
    """Piece-square-table evaluation source (`kind` 0)."""

    kind = 0

    def __init__(self, tables: PstTables | None = None):
        self.tables = tables or default_tables()
        self._dummy_feat = np.zeros((2, 16, 90), dtype=np.int32)
        self._dummy_w = np.zeros((1, 128), dtype=np.float32)
        self._dummy_b = np.zeros(128, dtype=np.float32)
        self._dummy_out = np.zeros(256, dtype=np.float32)

    def static_eval(self, position: Position) -> int:
        return self.tables.evaluate(position)

    def kernel_args(self) -> tuple:
        return (self.tables.red_pov, self._dummy_feat, self._dummy_w,
                self._dummy_b, self._dummy_out, 0.0, 0.0)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _acc_refresh(board, acc, ply, feat, ftw, ftb):
    for persp in range(2):
        for j in range(128):
            acc[ply, persp, j] = ftb[j]
        for sq in range(90):
            code = board[sq]
            if code:
                fi = feat[persp, code, sq]
                for j in range(128):
                    acc[ply, persp, j] += ftw[fi, j]


@njit(cache=True)
def _acc_make(acc, ply, feat, ftw, piece, frm, to, captured):
    for persp in range(2):
        fi_from = feat[persp, piece, frm]
        fi_to = feat[persp, piece, to]
        for j in range(128):
            acc[ply + 1, persp, j] = (acc[ply, persp, j]
                                      - ftw[fi_from, j] + ftw[fi_to, j])
        if captured:
            fi_cap = feat[persp, captured, to]
            for j in range(128):
                acc[ply + 1, persp, j] -= ftw[fi_cap, j]


@njit(cache=True)
def _leaf_eval(stm, pstscore, eval_kind, outw, outb, wdl_scale, acc, ply):
    if eval_kind == 0:
        return pstscore if stm == RED else -pstscore
    # side-to-move perspective first, clamp to [0,1], linear output;
    # centipawns = wdl_scale * pre-sigmoid activation
    z = float(outb)
    for j in range(128):
        v = acc[ply, stm, j]
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        z += outw[j] * v
    for j in range(128):
        v = acc[ply, 1 - stm, j]
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        z += outw[128 + j] * v
    cp = int(np.floor(wdl_scale * z + 0.5))
    if cp > NNUE_EVAL_LIMIT:
        cp = NNUE_EVAL_LIMIT
    elif cp < -NNUE_EVAL_LIMIT:
        cp = -NNUE_EVAL_LIMIT
    return cp


@njit(cache=True)
def _order_captures_first(board, moves, n, order_val):
    """Partition into captures (MVV-LVA sorted, stable) then quiets in
    generation order.  Returns the capture count."""
    tmp = np.empty(n, np.int32)
    keys = np.empty(n, np.int64)
    nc = 0
    for i in range(n):
        m = moves[i]
        victim = board[m >> 7]
        if victim != 0:
            key = (np.int64(order_val[victim & 7]) << 20) \
                - (np.int64(order_val[board[m & 127] & 7]) << 8) - i
            # stable insertion by descending key
            j = nc
            while j > 0 and keys[j - 1] < key:
                tmp[j] = tmp[j - 1]
                keys[j] = keys[j - 1]
                j -= 1
            tmp[j] = m
            keys[j] = key
            nc += 1
    nq = 0
    for i in range(n):
        m = moves[i]
        if board[m >> 7] == 0:
            moves[nc + nq] = m
            nq += 1
    for i in range(nc):
        moves[i] = tmp[i]
    return nc


@njit(cache=True)
def _qsearch(board, stm, alpha, beta, ply, qply, qcap, pstscore,
             eval_kind, red_pov, feat, ftw, ftb, outw, outb, wdl_scale,
             acc, nodes, node_cap, order_val):
    nodes[0] += 1
    stand = _leaf_eval(stm, pstscore, eval_kind, outw, outb, wdl_scale,
                       acc, ply)
    if qply >= qcap or (node_cap > 0 and nodes[0] >= node_cap):
        return stand
    in_chk = _in_check(board, stm)
    buf = np.empty(MAX_MOVES, np.int32)
    n = _gen_legal(board, stm, buf)
    if in_chk:
        # evasions: every legal move, captures tried first
        if n == 0:
            return -(MATE_SCORE - ply)
        best = -INF_SCORE
        _order_captures_first(board, buf, n, order_val)
        nlim = n
    else:
        best = stand
        if best >= beta:
            return best
        if best > alpha:
            alpha = best
        nlim = _order_captures_first(board, buf, n, order_val)  # captures only
    for i in range(nlim):
        m = buf[i]
        frm = m & 127
        to = m >> 7
        piece = board[frm]
        captured = board[to]
        if eval_kind == 1:
            _acc_make(acc, ply, feat, ftw, piece, frm, to, captured)
            child_pst = pstscore
        else:
            child_pst = pstscore + red_pov[piece, to] - red_pov[piece, frm]
            if captured:
                child_pst -= red_pov[captured, to]
        board[to] = piece
        board[frm] = 0
        score = -_qsearch(board, 1 - stm, -beta, -alpha, ply + 1, qply + 1,
                          qcap, child_pst, eval_kind, red_pov, feat, ftw,
                          ftb, outw, outb, wdl_scale, acc, nodes, node_cap,
                          order_val)
        board[frm] = piece
        board[to] = captured
        if score > best:
            best = score
        if best > alpha:
            alpha = best
        if alpha >= beta:
            break
    return best


@njit(cache=True)
def _negamax(board, stm, depth, alpha, beta, ply, qcap, pstscore,
             eval_kind, red_pov, feat, ftw, ftb, outw, outb, wdl_scale,
             acc, nodes, node_cap, order_val):
    if depth == 0:
        return _qsearch(board, stm, alpha, beta, ply, 0, qcap, pstscore,
                        eval_kind, red_pov, feat, ftw, ftb, outw, outb,
                        wdl_scale, acc, nodes, node_cap, order_val)
    nodes[0] += 1
    if node_cap > 0 and nodes[0] >= node_cap:
        return _leaf_eval(stm, pstscore, eval_kind, outw, outb, wdl_scale,
                          acc, ply)
    buf = np.empty(MAX_MOVES, np.int32)
    n = _gen_legal(board, stm, buf)
    if n == 0:
        return -(MATE_SCORE - ply)
    _order_captures_first(board, buf, n, order_val)
    best = -INF_SCORE
    for i in range(n):
        m = buf[i]
        frm = m & 127
        to = m >> 7
        piece = board[frm]
        captured = board[to]
        if eval_kind == 1:
            _acc_make(acc, ply, feat, ftw, piece, frm, to, captured)
            child_pst = pstscore
        else:
            child_pst = pstscore + red_pov[piece, to] - red_pov[piece, frm]
            if captured:
                child_pst -= red_pov[captured, to]
        board[to] = piece
        board[frm] = 0
        score = -_negamax(board, 1 - stm, depth - 1, -beta, -alpha, ply + 1,
                          qcap, child_pst, eval_kind, red_pov, feat, ftw,
                          ftb, outw, outb, wdl_scale, acc, nodes, node_cap,
                          order_val)
        board[frm] = piece
        board[to] = captured
        if score > best:
            best = score
        if best > alpha:
            alpha = best
        if alpha >= beta:
            break
    return best


@njit(cache=True)
def _root_scores(board, stm, depth, qcap, pstscore, eval_kind, red_pov,
                 feat, ftw, ftb, outw, outb, wdl_scale, acc, nodes,
                 node_cap, order_val, scores, full_window):
    """Score every root move in generation order.  With full_window each
    child gets the whole window (exact values for all moves); otherwise
    alpha is carried, so only the maximum is guaranteed exact."""
    buf = np.empty(MAX_MOVES, np.int32)
    n = _gen_legal(board, stm, buf)
    child_depth = depth - 1 if depth > 0 else 0
    alpha = -INF_SCORE
    for i in range(n):
        m = buf[i]
        frm = m & 127
        to = m >> 7
        piece = board[frm]
        captured = board[to]
        if eval_kind == 1:
            _acc_make(acc, 0, feat, ftw, piece, frm, to, captured)
            child_pst = pstscore
        else:
            child_pst = pstscore + red_pov[piece, to] - red_pov[piece, frm]
            if captured:
                child_pst -= red_pov[captured, to]
        board[to] = piece
        board[frm] = 0
        a = -INF_SCORE if full_window else alpha
        score = -_negamax(board, 1 - stm, child_depth, -INF_SCORE, -a, 1,
                          qcap, child_pst, eval_kind, red_pov, feat, ftw,
                          ftb, outw, outb, wdl_scale, acc, nodes, node_cap,
                          order_val)
        board[frm] = piece
        board[to] = captured
        scores[i] = score
        if score > alpha:
            alpha = score
    return n


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _prepare(position: Position, eval_source):
    board = position.board.copy()
    red_pov, feat, ftw, ftb, outw, outb, wdl_scale = eval_source.kernel_args()
    acc = np.zeros((MAX_PLY + 2, 2, 128), dtype=np.float32)
    if eval_source.kind == 1:
        _acc_refresh(board, acc, 0, feat, ftw, ftb)
        pstscore = 0
    else:
        pstscore = _pst_red_pov(board, red_pov)
    return board, red_pov, feat, ftw, ftb, outw, outb, wdl_scale, acc, pstscore


@njit(cache=True)
def _pst_red_pov(board, red_pov):
    s = 0
    for sq in range(90):
        code = board[sq]
        if code:
            s += red_pov[code, sq]
    return s


def quiescence(position: Position, alpha: int, beta: int, eval_source,
               qsearch_ply_cap: int = _DEFAULT_QPLY_CAP) -> int:
    """Capture (and check-evasion) resolution score within [alpha, beta]."""
    if alpha >= beta:
        raise ValueError("alpha must be < beta")
    (board, red_pov, feat, ftw, ftb, outw, outb, wdl_scale, acc,
     pstscore) = _prepare(position, eval_source)
    nodes = np.zeros(1, dtype=np.int64)
    return int(_qsearch(board, position.stm, alpha, beta, 0, 0,
                        qsearch_ply_cap, pstscore, eval_source.kind,
                        red_pov, feat, ftw, ftb, outw, outb, wdl_scale,
                        acc, nodes, 0, _ORDER_VAL))


def negamax(position: Position, depth: int, alpha: int, beta: int,
            eval_source, qsearch_ply_cap: int = _DEFAULT_QPLY_CAP,
            node_cap: int = 0) -> int:
    """Fail-soft alpha-beta negamax; depth 0 falls through to quiescence."""
    if alpha >= beta:
        raise ValueError("alpha must be < beta")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    (board, red_pov, feat, ftw, ftb, outw, outb, wdl_scale, acc,
     pstscore) = _prepare(position, eval_source)
    nodes = np.zeros(1, dtype=np.int64)
    return int(_negamax(board, position.stm, depth, alpha, beta, 0,
                        qsearch_ply_cap, pstscore, eval_source.kind,
                        red_pov, feat, ftw, ftb, outw, outb, wdl_scale,
                        acc, nodes, node_cap, _ORDER_VAL))


def root_scores(position: Position, limits: SearchLimits, eval_source,
                full_window: bool = True) -> tuple[list[tuple[Move, int]], int]:
    """Exact negamax score for every root move, in generation order.

    Returns (list of (move, score), nodes).
    """
    moves = position.legal_moves()
    if not moves:
        return [], 0
    (board, red_pov, feat, ftw, ftb, outw, outb, wdl_scale, acc,
     pstscore) = _prepare(position, eval_source)
    nodes = np.zeros(1, dtype=np.int64)
    scores = np.zeros(MAX_MOVES, dtype=np.int64)
    n = _root_scores(board, position.stm, limits.depth,
                     limits.qsearch_ply_cap, pstscore, eval_source.kind,
                     red_pov, feat, ftw, ftb, outw, outb, wdl_scale, acc,
                     nodes, limits.node_cap, _ORDER_VAL, scores,
                     full_window)
    assert n == len(moves)
    return [(moves[i], int(scores[i])) for i in range(n)], int(nodes[0])


def best_move(position: Position, limits: SearchLimits,
              eval_source) -> SearchResult:
    """Root search; ties broken by lowest index in generation order."""
    scored, nodes = root_scores(position, limits, eval_source,
                                full_window=False)
    if not scored:
        return SearchResult(score=-MATE_SCORE, best_move=None, nodes=0)
    best_m, best_s = scored[0]
    for m, s in scored[1:]:
        if s > best_s:
            best_m, best_s = m, s
    return SearchResult(score=best_s, best_move=best_m, nodes=nodes)
