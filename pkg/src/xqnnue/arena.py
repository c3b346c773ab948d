"""Engine-vs-engine match harness with Xiangqi adjudication and rating
arithmetic.

Adjudication: a side with no legal moves loses (stalemate is a loss in
Xiangqi); 300 plies without a result is a draw; on threefold repetition the
simplified perpetual rule applies: if one side stood in check at every one
of its turns inside the repeated cycle, the side delivering those checks
loses, otherwise the repetition is a draw.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .board import Position, parse_fen, to_fen
from .datagen import FilterMargins, GameRecord, is_quiet_position
from .nnue import NnueEval, load_model
from .pst import PstTables
from .search import PstEval, SearchLimits, best_move

WIN, DRAW, LOSS = 1.0, 0.5, 0.0

DEFAULT_MOVE_CAP = 300


@dataclass
class EngineSpec:
    """A named evaluation source plus fixed search limits."""

    name: str
    eval_source: object
    limits: SearchLimits

    @classmethod
    def pst(cls, name: str = "pst", limits: SearchLimits | None = None,
            tables: PstTables | None = None) -> "EngineSpec":
        return cls(name, PstEval(tables), limits or SearchLimits())

    @classmethod
    def nnue(cls, model_path, name: str = "nnue",
             limits: SearchLimits | None = None,
             wdl_scale: float = 400.0) -> "EngineSpec":
        model = load_model(model_path)
        return cls(name, NnueEval(model, wdl_scale), limits or SearchLimits())


@dataclass
class GameLog:
    opening_fen: str
    red: str
    black: str
    result: str          # '1-0', '0-1' or '1/2-1/2', from Red's side
    reason: str          # mate | stalemate | movecap | repetition | perpetual | forfeit
    moves: list[str]

    def line(self) -> str:
        return (f"opening={self.opening_fen.replace(' ', '_')} "
                f"red={self.red} black={self.black} result={self.result} "
                f"reason={self.reason} moves=" + " ".join(self.moves))


@dataclass
class MatchResult:
    """Score bookkeeping from engine A's point of view."""

    wins: int = 0
    draws: int = 0
    losses: int = 0
    games: int = 0
    game_logs: list[GameLog] = field(default_factory=list)
    opponent_ratings: list[float] = field(default_factory=list)

    def score(self) -> float:
        if self.games == 0:
            raise ValueError("no games")
        return (self.wins + 0.5 * self.draws) / self.games

    def per_game_scores(self) -> list[float]:
        out = []
        for lg in self.game_logs:
            a_is_red = lg.red == "A"
            if lg.result == "1/2-1/2":
                out.append(DRAW)
            elif (lg.result == "1-0") == a_is_red:
                out.append(WIN)
            else:
                out.append(LOSS)
        return out


def _play_game(opening: Position, red_spec: EngineSpec,
               black_spec: EngineSpec, move_cap: int) -> GameLog:
    position = opening.copy()
    position.history.clear()
    specs = (red_spec, black_spec)
    moves: list[str] = []
    # per-position trail for repetition adjudication
    trail = [(position.hash, position.stm, position.in_check())]
    result = None
    reason = None
    while True:
        if len(moves) >= move_cap:
            result, reason = "1/2-1/2", "movecap"
            break
        spec = specs[position.stm]
        try:
            sr = best_move(position, spec.limits, spec.eval_source)
        except Exception as exc:  # engine failure forfeits the game
            result = "0-1" if position.stm == 0 else "1-0"
            reason = f"forfeit:{type(exc).__name__}"
            break
        if sr.best_move is None:
            # no legal moves: mated or stalemated, both lose in Xiangqi
            reason = "mate" if position.in_check() else "stalemate"
            result = "0-1" if position.stm == 0 else "1-0"
            break
        position.do_move(sr.best_move)
        moves.append(sr.best_move.coord())
        trail.append((position.hash, position.stm, position.in_check()))
        if position.repetition_count() >= 3:
            result, reason = _adjudicate_repetition(trail)
            break
    return GameLog(to_fen(opening), red_spec.name, black_spec.name,
                   result, reason, moves)


def _adjudicate_repetition(trail) -> tuple[str, str]:
    """Simplified perpetual rule on the repeated cycle: a side that checked
    the opponent at the opponent's every turn of the cycle loses."""
    last_hash = trail[-1][0]
    prev = max(i for i in range(len(trail) - 1) if trail[i][0] == last_hash)
    cycle = trail[prev:-1]
    perpetual_on = []
    for side in (0, 1):
        turns = [chk for (_, stm, chk) in cycle if stm == side]
        if turns and all(turns):
            perpetual_on.append(side)
    if len(perpetual_on) == 1:
        checker = 1 - perpetual_on[0]
        return ("0-1" if checker == 0 else "1-0"), "perpetual"
    return "1/2-1/2", "repetition"


def _play_pair(args):
    opening_fen, a, b, move_cap = args
    opening = parse_fen(opening_fen)
    g1 = _play_game(opening, a, b, move_cap)
    g2 = _play_game(opening, b, a, move_cap)
    return g1, g2


def run_match(a: EngineSpec, b: EngineSpec, openings, n_games: int,
              rng_seed: int = 0, move_cap: int = DEFAULT_MOVE_CAP,
              threads: int = 1, opponent_rating: float | None = None,
              progress=None) -> MatchResult:
    """Paired-opening match: each selected opening is played twice with
    colours swapped.  Deterministic given the seed and specs."""
    openings = list(openings)
    if not openings:
        raise ValueError("need at least one opening")
    if n_games < 2 or n_games % 2:
        raise ValueError("n_games must be even and >= 2")
    pairs = n_games // 2
    rng = np.random.default_rng(rng_seed)
    if pairs <= len(openings):
        picked = [openings[int(i)] for i in
                  rng.choice(len(openings), size=pairs, replace=False)]
    else:
        reps = [openings[int(rng.integers(len(openings)))]
                for _ in range(pairs - len(openings))]
        picked = openings + reps
    # engines are labelled A/B in the logs so scores can be reconstructed
    a_run = EngineSpec("A", a.eval_source, a.limits)
    b_run = EngineSpec("B", b.eval_source, b.limits)
    jobs = [(to_fen(op), a_run, b_run, move_cap) for op in picked]
    result = MatchResult()
    if threads <= 1:
        pair_logs = (_play_pair(j) for j in jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=threads)
        pair_logs = pool.map(_play_pair, jobs, chunksize=1)
    done = 0
    for g1, g2 in pair_logs:
        for lg in (g1, g2):
            result.game_logs.append(lg)
            result.games += 1
            a_is_red = lg.red == "A"
            if lg.result == "1/2-1/2":
                result.draws += 1
            elif (lg.result == "1-0") == a_is_red:
                result.wins += 1
            else:
                result.losses += 1
            if opponent_rating is not None:
                result.opponent_ratings.append(opponent_rating)
        done += 1
        if progress is not None:
            progress(done, pairs, result)
    if threads > 1:
        pool.shutdown()
    return result


def performance_rating(result: MatchResult):
    """(total opponents' rating + 400 * (wins - losses)) / games, exactly."""
    if result.games == 0:
        raise ValueError("no games")
    if len(result.opponent_ratings) != result.games:
        raise ValueError("need one opponent rating per game")
    total = sum(result.opponent_ratings)
    if all(float(r).is_integer() for r in result.opponent_ratings):
        return Fraction(int(total) + 400 * (result.wins - result.losses),
                        result.games)
    return (total + 400 * (result.wins - result.losses)) / result.games


def elo_diff_from_score(score: float) -> float:
    """Inverse logistic: expected score back to a rating difference."""
    if not (0.0 < score < 1.0):
        raise ValueError("score must be strictly inside (0, 1)")
    return -400.0 * math.log10(1.0 / score - 1.0)


def score_confidence(result: MatchResult, z: float = 1.96
                     ) -> tuple[float, float]:
    """Normal-approximation confidence bounds on the match score."""
    scores = np.array(result.per_game_scores())
    s = scores.mean()
    if len(scores) < 2:
        return s, s
    se = scores.std(ddof=1) / math.sqrt(len(scores))
    return s - z * se, s + z * se


def openings_from_games(games, count: int, rng_seed: int = 0,
                        ply_range: tuple[int, int] = (8, 24),
                        margins: FilterMargins | None = None,
                        eval_source=None) -> list[Position]:
    """Quiet positions drawn from plies 8..24 of the given games."""
    margins = margins or FilterMargins()
    eval_source = eval_source or PstEval()
    lo, hi = ply_range
    candidates = []
    seen = set()
    for game in games:
        for ply, p in enumerate(game.positions()):
            if lo <= ply <= hi:
                key = p.packed() + bytes([p.stm])
                if key not in seen:
                    seen.add(key)
                    candidates.append(p.copy())
    if not candidates:
        raise ValueError("no positions in the requested ply range")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(candidates))
    out = []
    for i in order:
        p = candidates[int(i)]
        if is_quiet_position(p, margins, eval_source):
            p.history.clear()
            out.append(p)
            if len(out) >= count:
                break
    if not out:
        raise ValueError("no quiet openings found")
    return out


def format_report(result: MatchResult, a_name: str, b_name: str,
                  baseline_rating: float | None = None) -> str:
    s = result.score()
    lo, hi = score_confidence(result)
    lines = [
        f"match: {a_name} vs {b_name}",
        f"games {result.games}  +{result.wins} ={result.draws} "
        f"-{result.losses}  score {100 * s:.1f}%",
    ]
    eps = 1e-9
    diff = elo_diff_from_score(min(max(s, eps), 1 - eps))
    dlo = elo_diff_from_score(min(max(lo, eps), 1 - eps))
    dhi = elo_diff_from_score(min(max(hi, eps), 1 - eps))
    lines.append(f"elo diff {diff:+.1f}  95% CI [{dlo:+.1f}, {dhi:+.1f}]")
    if baseline_rating is not None:
        r = MatchResult(result.wins, result.draws, result.losses,
                        result.games,
                        opponent_ratings=[baseline_rating] * result.games)
        pr = performance_rating(r)
        lines.append(f"performance rating {float(pr):.1f} "
                     f"(vs {baseline_rating:g}-rated opponent)")
    return "\n".join(lines)
