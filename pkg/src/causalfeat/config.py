"""Run configuration with INI-style config-file overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .graph import SolverOptions

GROUPINGS = ("causal", "correlation", "random")
EXPLORATIONS = ("adaptive", "causal-only", "mi-only")
REWARD_MODES = ("full", "no-causal", "no-diversity", "no-complexity")


@dataclass
class RunConfig:
    # loop
    episodes: int = 30
    steps: int = 15
    early_stop_delta: float = 0.001
    early_stop_patience: int = 3
    seed: int = 0
    # ablation toggles
    grouping: str = "causal"
    exploration: str = "adaptive"
    reward: str = "full"
    ensemble: bool = False
    ensemble_runs: int = 10
    # phase 1
    lambda_grid: tuple[float, ...] = (0.01, 0.03, 0.05)
    tau: float = 0.1
    standardize: bool = False
    k_g: int | None = None
    # reward shaping
    alpha: float = 0.5
    lambda_div: float = 0.05
    lambda_comp: float = 0.001
    literal_negative_reward: bool = False
    # agents
    hidden: tuple[int, ...] = (512, 256, 128)
    dropout: float = 0.1
    lr: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 256
    target_update: int = 1000
    buffer_cap: int | None = None
    # generation
    pair_budget: int = 50
    binary_batch: int = 10
    min_per_group: int = 1
    feature_cap: int | None = None
    # evaluation
    val_frac: float = 0.2
    trees_fast: int = 25
    trees_final: int = 100
    max_depth: int = 10
    final_folds: int = 5

    def __post_init__(self) -> None:
        if self.grouping not in GROUPINGS:
            raise ValueError(f"grouping must be one of {GROUPINGS}")
        if self.exploration not in EXPLORATIONS:
            raise ValueError(f"exploration must be one of {EXPLORATIONS}")
        if self.reward not in REWARD_MODES:
            raise ValueError(f"reward must be one of {REWARD_MODES}")
        if min(self.episodes, self.steps) < 0 or self.early_stop_patience < 1:
            raise ValueError("loop bounds must be non-negative")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(standardize=self.standardize)

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name in _TUPLE_FLOAT_FIELDS:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if name in _TUPLE_INT_FIELDS:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name in _BOOL_FIELDS:
        return raw.lower() in ("1", "true", "yes", "on")
    if name in _OPT_INT_FIELDS:
        return None if raw.lower() in ("", "none", "auto") else int(raw)
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    return raw


_TUPLE_FLOAT_FIELDS = {"lambda_grid"}
_TUPLE_INT_FIELDS = {"hidden"}
_BOOL_FIELDS = {"ensemble", "standardize", "literal_negative_reward"}
_OPT_INT_FIELDS = {"buffer_cap", "feature_cap", "k_g"}
_INT_FIELDS = {"episodes", "steps", "early_stop_patience", "seed", "ensemble_runs",
               "batch_size", "target_update", "pair_budget", "binary_batch",
               "min_per_group", "trees_fast", "trees_final", "max_depth",
               "final_folds"}
_FLOAT_FIELDS = {"early_stop_delta", "tau", "alpha", "lambda_div", "lambda_comp",
                 "dropout", "lr", "gamma", "val_frac"}


def load_config_file(path: str) -> dict:
    """Read `[section] key = value` overrides; section names are cosmetic."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    known = {f.name for f in fields(RunConfig)}
    overrides = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            if key not in known:
                raise ValueError(f"{path}: unknown config key {key!r}")
            overrides[key] = _parse_value(key, raw)
    return overrides


def build_config(file_path: str | None = None, **cli_overrides) -> RunConfig:
    """Defaults, overridden by the config file, overridden by CLI values."""
    cfg = RunConfig()
    if file_path:
        cfg = cfg.with_overrides(**load_config_file(file_path))
    return cfg.with_overrides(**cli_overrides)
