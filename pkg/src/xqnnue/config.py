"""Pipeline configuration: one flat key-value config file, CLI overrides,
seed fan-out, and provenance sidecars for output artifacts."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .datagen import BalanceQuotas, FilterMargins
from .search import SearchLimits
from .training import TrainConfig


class ConfigError(ValueError):
    """Bad config file or override."""


@dataclass
class PipelineConfig:
    # paths
    games_in: str = "games.txt"
    dataset_out: str = "dataset.nqd"
    model_out: str = "model.nnm"
    pst_config: str = ""
    # quiet filter
    m1: int = 60
    m2: int = 70
    negamax_depth: int = 4
    # balance quotas
    sign_split: float = 0.50
    quiet_band_min: float = 0.50
    imbalanced_min: float = 0.40
    quota_tolerance: float = 0.02
    # trainer
    learning_rate: float = 0.1
    batch_size: int = 1024
    epochs: int = 40
    wdl_scale: float = 400.0
    validation_fraction: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 0.5
    plateau_patience: int = 3
    # search
    search_depth: int = 4
    qsearch_ply_cap: int = 16
    node_cap: int = 0
    # self-play
    selfplay_games: int = 100
    selfplay_depth: int = 3
    diversity_plies: int = 8
    selfplay_move_cap: int = 200
    # matches
    match_games: int = 400
    match_depth: int = 5
    match_move_cap: int = 300
    baseline_rating: float = 0.0
    # global
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        paths = [p for p in (self.games_in, self.dataset_out, self.model_out)
                 if p]
        if len(set(paths)) != len(paths):
            raise ConfigError("games_in, dataset_out and model_out must be "
                              "distinct paths")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def margins(self) -> FilterMargins:
        return FilterMargins(self.m1, self.m2, self.negamax_depth,
                             self.qsearch_ply_cap)

    def quotas(self) -> BalanceQuotas:
        return BalanceQuotas(self.sign_split, self.quiet_band_min,
                             self.imbalanced_min, self.quota_tolerance)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.epochs,
                           self.wdl_scale, derive_seed(self.seed, "train"),
                           self.validation_fraction, self.momentum,
                           self.lr_decay, self.plateau_patience)

    def limits(self, depth: int | None = None) -> SearchLimits:
        return SearchLimits(depth if depth is not None else self.search_depth,
                            self.node_cap, self.qsearch_ply_cap)

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, value: str):
    t = _FIELD_TYPES.get(key)
    if t is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if t == "int":
            return int(value)
        if t == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from defaults, an optional `key = value` file, and
    explicit overrides (already-typed or strings), in that order."""
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, raw = line.partition("=")
                values[key.strip()] = _coerce(key.strip(), raw.strip())
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def derive_seed(root: int, stage: str) -> int:
    """Counter-based seed splitter: one root seed fans out per stage."""
    digest = hashlib.sha256(f"{root}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sha1_file(path) -> str:
    h = hashlib.sha1()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_meta(artifact_path, config: PipelineConfig,
               inputs: dict[str, str]) -> None:
    """Provenance sidecar `<artifact>.meta`: the full resolved config plus a
    content hash of every input file.  Deliberately timestamp-free so
    re-runs are byte-identical."""
    lines = ["# provenance"]
    for name, p in sorted(inputs.items()):
        lines.append(f"input {name} {p} sha1={sha1_file(p)}")
    for key, val in sorted(config.resolved().items()):
        lines.append(f"config {key} = {val}")
    with open(str(artifact_path) + ".meta", "w") as fh:
        fh.write("\n".join(lines) + "\n")
