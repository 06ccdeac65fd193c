"""Shaped reward components and the adaptive exploration scheduler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .graph import CausalGroups
from .ops import Recipe

ALPHA_DEFAULT = 0.5
LAMBDA_DIV = 0.05
LAMBDA_COMP = 0.001
ROLE_WEIGHTS = {"direct": 1.0, "indirect": 0.6, "other": 0.2}
COMPLEXITY_PER_FEATURE = 0.001
COMPLEXITY_PER_DEPTH = 0.01
ENTROPY_WINDOW = 20
BASELINE_FLOOR = 1e-6

DEFAULT_WEIGHTS = (0.5, 0.3, 0.2)
IMPROVING_WEIGHTS = (0.7, 0.2, 0.1)
DEGRADING_WEIGHTS = (0.4, 0.3, 0.3)
TREND_THRESHOLD = 0.01

STRATEGIES = ("causal", "mi", "random")


class StrategyWeights(NamedTuple):
    w_causal: float
    w_mi: float
    w_random: float


@dataclass
class RewardBreakdown:
    r_perf: float
    psi: float
    entropy: float
    complexity: float
    total: float
    alpha: float = ALPHA_DEFAULT
    lambda_div: float = LAMBDA_DIV
    lambda_comp: float = LAMBDA_COMP


def perf_reward(score_t: float, score_prev: float, baseline: float) -> float:
    """Asymmetric scored delta: x100 amplification on gains, x10 on losses."""
    denom = max(baseline, BASELINE_FLOOR)
    delta = score_t - score_prev
    if delta > 0:
        return 100.0 * delta / denom
    return -10.0 * abs(delta / denom)


def causal_bonus(recipes: Sequence[Recipe], roles: Sequence[str],
                 importances: Sequence[float],
                 weights: dict[str, float] | None = None) -> float:
    """Importance-weighted mean role weight over the generated features."""
    weights = weights or ROLE_WEIGHTS
    imps = np.asarray(list(importances), dtype=float)
    if len(recipes) == 0 or imps.sum() <= 0:
        return 0.0
    imps = imps / imps.sum()
    return float(sum(weights[r] * w for r, w in zip(roles, imps)))


def entropy_bonus(window: Sequence[int]) -> float:
    """Shannon entropy (nats) of the action distribution in the sliding window."""
    if not window:
        return 0.0
    _, counts = np.unique(np.asarray(window), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def complexity_penalty(recipes: Sequence[Recipe]) -> float:
    """0.001 per generated feature plus 0.01 per unit of expression depth."""
    return COMPLEXITY_PER_FEATURE * len(recipes) + \
        COMPLEXITY_PER_DEPTH * sum(r.depth for r in recipes)


def total_reward(r_perf: float, psi: float, entropy: float, complexity: float,
                 alpha: float = ALPHA_DEFAULT, lambda_div: float = LAMBDA_DIV,
                 lambda_comp: float = LAMBDA_COMP,
                 literal_negative: bool = False) -> float:
    """Compose the shaped reward.

    Positive performance rewards are amplified by (1 + alpha psi). Negative
    ones are attenuated by the same factor (division), so causal relevance
    reduces penalties; `literal_negative` switches to multiplying both
    branches instead.
    """
    mod = 1.0 + alpha * psi
    if r_perf >= 0 or literal_negative:
        core = r_perf * mod
    else:
        core = r_perf / mod
    return core + lambda_div * entropy - lambda_comp * complexity


def compute_reward(score_t: float, score_prev: float, baseline: float,
                   recipes: Sequence[Recipe], roles: Sequence[str],
                   importances: Sequence[float], window: Sequence[int],
                   alpha: float = ALPHA_DEFAULT, lambda_div: float = LAMBDA_DIV,
                   lambda_comp: float = LAMBDA_COMP,
                   literal_negative: bool = False) -> RewardBreakdown:
    r_perf = perf_reward(score_t, score_prev, baseline)
    psi = causal_bonus(recipes, roles, importances)
    ent = entropy_bonus(window)
    comp = complexity_penalty(recipes)
    total = total_reward(r_perf, psi, ent, comp, alpha, lambda_div, lambda_comp,
                         literal_negative)
    return RewardBreakdown(r_perf, psi, ent, comp, total, alpha, lambda_div, lambda_comp)


def adapt_weights(history: Sequence[float], episode: int) -> StrategyWeights:
    """Strategy weights from the recent score trend.

    Episodes 1-5 (or too little history) use the defaults; a trend above
    +0.01 leans causal, below -0.01 leans exploratory, otherwise defaults.
    The trend is the mean of the last five consecutive score differences.
    """
    if episode <= 5 or len(history) < 6:
        return StrategyWeights(*DEFAULT_WEIGHTS)
    tail = list(history)[-6:]
    trend = float(np.mean(np.diff(tail)))
    if trend > TREND_THRESHOLD:
        return StrategyWeights(*IMPROVING_WEIGHTS)
    if trend < -TREND_THRESHOLD:
        return StrategyWeights(*DEGRADING_WEIGHTS)
    return StrategyWeights(*DEFAULT_WEIGHTS)


def pick_strategy(weights: StrategyWeights, rng: np.random.Generator) -> str:
    return STRATEGIES[int(rng.choice(len(STRATEGIES), p=np.asarray(weights)))]


UNARY_DIRECT_PROB = 0.7
PAIR_BOOST_COMBOS = {("direct", "indirect"), ("direct", "direct")}
MI_TOP_K = 3


def _nonempty_pool(groups: CausalGroups, preferred: str) -> list[int]:
    """The preferred screened pool, else the first non-empty by causal priority."""
    if groups.screened.get(preferred):
        return groups.screened[preferred]
    for role in ("direct", "indirect", "other"):
        if groups.screened.get(role):
            return groups.screened[role]
    raise ValueError("all screened groups are empty")


def _mi_top_pool(groups: CausalGroups, role: str) -> list[int]:
    pool = _nonempty_pool(groups, role)
    k = min(MI_TOP_K, len(pool))
    return sorted(pool, key=lambda f: (-groups.mi_scores.get(f, 0.0), f))[:k]


def causal_hierarchical_sample(groups: CausalGroups, arity: int, strategy: str,
                               chosen_primary: str, rng: np.random.Generator,
                               chosen_secondary: str | None = None
                               ) -> tuple[int, ...]:
    """Concrete feature selection within the agent-chosen groups.

    causal: unary sources come from the direct pool with probability 0.7,
    else the other pool (renormalized when one is empty); binary pairs come
    from the chosen groups with weights boosted x2 for (direct, indirect)
    and (direct, direct) combinations. mi: uniform over the top-k
    (k = min(3, |group|)) MI features of the chosen group(s). random:
    uniform over the chosen group(s).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if arity == 1:
        if strategy == "causal":
            direct = groups.screened.get("direct", [])
            other = groups.screened.get("other", [])
            if direct and other:
                pool = direct if rng.random() < UNARY_DIRECT_PROB else other
            else:
                pool = direct or other or _nonempty_pool(groups, chosen_primary)
        elif strategy == "mi":
            pool = _mi_top_pool(groups, chosen_primary)
        else:
            pool = _nonempty_pool(groups, chosen_primary)
        return (int(pool[rng.integers(len(pool))]),)

    if chosen_secondary is None:
        raise ValueError("binary sampling needs a secondary group")
    if strategy == "mi":
        p1 = _mi_top_pool(groups, chosen_primary)
        p2 = _mi_top_pool(groups, chosen_secondary)
        weights1 = weights2 = None
    else:
        p1 = _nonempty_pool(groups, chosen_primary)
        p2 = _nonempty_pool(groups, chosen_secondary)
        if strategy == "causal":
            weights1 = [groups.mi_scores.get(f, 0.0) for f in p1]
            weights2 = [groups.mi_scores.get(f, 0.0) for f in p2]
            if (chosen_primary, chosen_secondary) in PAIR_BOOST_COMBOS:
                weights1 = [2.0 * w for w in weights1]
        else:
            weights1 = weights2 = None

    def draw(pool, weights):
        if weights is None or sum(weights) <= 0:
            return int(pool[rng.integers(len(pool))])
        p = np.asarray(weights) / sum(weights)
        return int(pool[int(rng.choice(len(pool), p=p))])

    return draw(p1, weights1), draw(p2, weights2)
