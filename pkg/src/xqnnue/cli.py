"""Command-line entry point wiring the pipeline:
ingest -> selfplay/generate -> train -> match, plus diagnostics.

Exit codes: 0 success, 2 config error, 3 input error, 4 infeasible quotas,
5 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import arena, datagen
from .board import FenError, Move, Position, parse_fen, to_fen
from .config import (ConfigError, PipelineConfig, derive_seed, load_config,
                     write_meta)
from .datagen import QuotaError
from .nnue import FeatureSet
from .pst import PstTables
from .search import PstEval, SearchLimits
from .training import DivergenceError, train

EXIT_CONFIG, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_DIVERGED = 2, 3, 4, 5


def _add_common(sub):
    sub.add_argument("--config", help="pipeline config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                     help="override any config key")
    sub.add_argument("--m1", type=int)
    sub.add_argument("--m2", type=int)
    sub.add_argument("--negamax-depth", type=int, dest="negamax_depth")
    sub.add_argument("--quotas", metavar="SIGN,BAND,IMB[,TOL]",
                     help="balance quota fractions")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int)


def _config_from(args) -> PipelineConfig:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set wants KEY=VAL, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    for key in ("m1", "m2", "negamax_depth", "seed", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "quotas", None):
        parts = args.quotas.split(",")
        if len(parts) not in (3, 4):
            raise ConfigError("--quotas wants 3 or 4 comma-separated values")
        keys = ("sign_split", "quiet_band_min", "imbalanced_min",
                "quota_tolerance")
        for k, v in zip(keys, parts):
            overrides[k] = float(v)
    return load_config(args.config, overrides)


def _eval_source(cfg: PipelineConfig):
    tables = PstTables.load(cfg.pst_config) if cfg.pst_config \
        else PstTables.default()
    return PstEval(tables)


def cmd_perft(args) -> int:
    position = parse_fen(args.fen)
    if args.depth == 0:
        print("total 1")
        return 0
    total = 0
    for move in position.legal_moves():
        token = position.do_move(move)
        n = position.perft(args.depth - 1)
        position.undo_move(token)
        print(f"{move.coord()} {n}")
        total += n
    print(f"total {total}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _config_from(args)
    rejects = []
    games = datagen.ingest_games(args.games or cfg.games_in,
                                 on_reject=lambda n, m: rejects.append(n))
    plies = sum(len(g.moves) for g in games)
    print(f"games {len(games)}  plies {plies}  rejected {len(rejects)}")
    return 0


def cmd_selfplay(args) -> int:
    cfg = _config_from(args)
    if args.seeds_from:
        games = datagen.ingest_games(args.seeds_from)
        seeds = []
        for g in games:
            seeds.extend(p.copy() for ply, p in enumerate(g.positions())
                         if 4 <= ply <= 30)
        if not seeds:
            seeds = [Position.startpos()]
    else:
        seeds = [Position.startpos()]
    limits = cfg.limits(cfg.selfplay_depth)
    out = args.out or cfg.games_in
    played = datagen.generate_selfplay(
        seeds, args.games or cfg.selfplay_games, limits, [_eval_source(cfg)],
        rng_seed=derive_seed(cfg.seed, "selfplay"),
        diversity_plies=cfg.diversity_plies,
        move_cap=cfg.selfplay_move_cap, threads=cfg.threads)
    datagen.write_games(played, out)
    lengths = [len(g.moves) for g in played]
    print(f"wrote {len(played)} games to {out}  "
          f"plies min/avg/max {min(lengths)}/"
          f"{sum(lengths) / len(lengths):.1f}/{max(lengths)}")
    return 0


def cmd_generate(args) -> int:
    cfg = _config_from(args)
    games = datagen.ingest_games(cfg.games_in)
    stats = datagen.DatagenStats()
    eval_source = _eval_source(cfg)
    records = list(datagen.compute_dataset(games, cfg.margins(), eval_source,
                                           threads=cfg.threads, stats=stats))
    for line in stats.lines():
        print(line)
    if args.no_balance:
        balanced = records
    else:
        balanced = datagen.balance_dataset(
            records, cfg.quotas(), seed=derive_seed(cfg.seed, "balance"))
    datagen.write_dataset(balanced, cfg.dataset_out)
    write_meta(cfg.dataset_out, cfg, {"games": cfg.games_in})
    print(f"wrote {len(balanced)} records to {cfg.dataset_out}")
    if balanced:
        q = datagen.measure_quotas([r.label for r in balanced])
        print("strata  " + "  ".join(f"{k} {v:.3f}" for k, v in q.items()))
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    arr = datagen.read_dataset_array(cfg.dataset_out)
    log_path = args.loss_log or cfg.model_out + ".loss.csv"
    model, log = train(arr["board"], arr["stm"], arr["label"],
                       cfg.train_config(), FeatureSet(), log_path=log_path,
                       verbose=not args.quiet)
    from .nnue import save_model
    save_model(model, cfg.model_out)
    write_meta(cfg.model_out, cfg, {"dataset": cfg.dataset_out})
    best = min(v for _, _, v in log)
    print(f"wrote model to {cfg.model_out}  best val_mse {best:.6f}  "
          f"loss log {log_path}")
    return 0


def _engine(spec_text: str, name: str, limits: SearchLimits,
            cfg: PipelineConfig) -> arena.EngineSpec:
    if spec_text == "pst":
        tables = PstTables.load(cfg.pst_config) if cfg.pst_config \
            else PstTables.default()
        return arena.EngineSpec.pst(name, limits, tables)
    return arena.EngineSpec.nnue(spec_text, name, limits, cfg.wdl_scale)


def cmd_match(args) -> int:
    cfg = _config_from(args)
    limits = cfg.limits(cfg.match_depth)
    a = _engine(args.engine_a, args.engine_a, limits, cfg)
    b = _engine(args.engine_b, args.engine_b, limits, cfg)
    games = datagen.ingest_games(cfg.games_in)
    openings = arena.openings_from_games(
        games, max(1, cfg.match_games // 2),
        rng_seed=derive_seed(cfg.seed, "openings"), margins=cfg.margins())
    def progress(done, pairs, result):
        if not args.quiet:
            print(f"pair {done}/{pairs}  "
                  f"+{result.wins} ={result.draws} -{result.losses}",
                  flush=True)
    result = arena.run_match(a, b, openings, cfg.match_games,
                             rng_seed=derive_seed(cfg.seed, "match"),
                             move_cap=cfg.match_move_cap,
                             threads=cfg.threads,
                             opponent_rating=cfg.baseline_rating or None,
                             progress=progress)
    print(arena.format_report(result, a.name, b.name,
                              cfg.baseline_rating or None))
    if args.log:
        with open(args.log, "w") as fh:
            for key, val in sorted(cfg.resolved().items()):
                fh.write(f"# config {key} = {val}\n")
            for lg in result.game_logs:
                fh.write(lg.line() + "\n")
        print(f"per-game log written to {args.log}")
    return 0


def cmd_inspect(args) -> int:
    arr = datagen.read_dataset_array(args.dataset)
    labels = arr["label"].astype(np.int64)
    print(f"records {len(arr)}")
    if len(arr):
        q = datagen.measure_quotas(labels)
        print("strata  " + "  ".join(f"{k} {v:.3f}" for k, v in q.items()))
        print(f"label min/mean/max {labels.min()}/{labels.mean():.1f}/"
              f"{labels.max()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xqnnue",
        description="Xiangqi NNUE dataset, training and match pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perft", help="legal-move tree leaf count")
    p.add_argument("fen")
    p.add_argument("depth", type=int)
    p.set_defaults(func=cmd_perft)

    p = sub.add_parser("ingest", help="validate a game-list file")
    p.add_argument("--games")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("selfplay", help="generate self-play games")
    p.add_argument("--out", help="output game-list path")
    p.add_argument("--games", type=int, help="number of games")
    p.add_argument("--seeds-from", help="draw seed positions from this "
                                        "game-list file")
    _add_common(p)
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("generate", help="build a balanced quiet dataset")
    p.add_argument("--no-balance", action="store_true",
                   help="write the raw filtered records without balancing")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the NNUE on a dataset")
    p.add_argument("--loss-log", help="CSV loss log path")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="engine-vs-engine match")
    p.add_argument("engine_a", help="'pst' or a model path")
    p.add_argument("engine_b", help="'pst' or a model path")
    p.add_argument("--log", help="per-game machine-readable log path")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("inspect", help="dataset statistics")
    p.add_argument("dataset")
    _add_common(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except QuotaError as e:
        print(f"infeasible quotas: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FenError, FileNotFoundError, ValueError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
