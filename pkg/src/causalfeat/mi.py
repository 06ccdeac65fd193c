"""Histogram mutual information shared by screening, pruning, and samplers."""
from __future__ import annotations

import numpy as np

N_BINS = 10


def discretize(x: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Equal-frequency bin codes; columns with few distinct values pass through.

    Quantile edges are deduplicated, so tied values always share a bin and a
    constant column collapses to a single code.
    """
    x = np.asarray(x, dtype=float)
    uniq = np.unique(x)
    if len(uniq) <= n_bins:
        return np.searchsorted(uniq, x)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_info(a_codes: np.ndarray, b_codes: np.ndarray) -> float:
    """Plug-in MI (nats) between two integer code vectors."""
    n = len(a_codes)
    joint: dict[tuple[int, int], int] = {}
    for pair in zip(a_codes.tolist(), b_codes.tolist()):
        joint[pair] = joint.get(pair, 0) + 1
    pa: dict[int, int] = {}
    pb: dict[int, int] = {}
    for (a, b), c in joint.items():
        pa[a] = pa.get(a, 0) + c
        pb[b] = pb.get(b, 0) + c
    mi = 0.0
    for (a, b), c in joint.items():
        mi += (c / n) * np.log(c * n / (pa[a] * pb[b]))
    return max(float(mi), 0.0)


def mi_with_target(x: np.ndarray, y_codes: np.ndarray) -> float:
    return mutual_info(discretize(x), y_codes)


def target_codes(y: np.ndarray, task: str) -> np.ndarray:
    """Class labels are used as-is; regression targets are binned."""
    if task == "classification":
        return y.astype(int)
    return discretize(y)


def abs_pearson(x: np.ndarray, y: np.ndarray) -> float:
    """|Pearson correlation|, zero when either side is constant."""
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(abs(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy)))
