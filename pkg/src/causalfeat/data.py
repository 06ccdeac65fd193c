"""Tabular data handling: CSV ingestion, splits, task metrics, synthetic SCM generation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"

# Cell spellings treated as missing (case-insensitive, after stripping).
MISSING_TOKENS = {"", "na", "nan", "null", "?"}

NONLINEARITIES = ("none", "quadratic", "exponential", "mixed")


class DataError(ValueError):
    """Unusable input: bad file, malformed column, or invalid request."""


@dataclass
class Dataset:
    """An in-memory tabular task: features X (n, d), target y (n,)."""

    X: np.ndarray
    y: np.ndarray
    task: str
    feature_names: list[str]
    class_count: int = 1
    missing_rate: float = 0.0

    def __post_init__(self) -> None:
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError("X must be (n, d) with y of length n")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise DataError("non-finite values after ingestion")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise DataError(f"unknown task {self.task!r}")
        if self.task == CLASSIFICATION:
            labels = self.y.astype(int)
            if not np.array_equal(labels.astype(float), self.y):
                raise DataError("classification targets must be integer labels")
            if self.class_count < 1 or labels.min() < 0 or labels.max() >= self.class_count:
                raise DataError("labels must lie in [0, class_count)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class SplitPlan:
    """Disjoint train/val/test row indices plus optional k-fold pairs."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    folds: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    seed: int = 0


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _parse_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path: str, target_column: str, task: str) -> Dataset:
    """Load a comma-separated file with a header row into a Dataset.

    Numeric columns keep their values; missing cells are mean-imputed.
    Non-numeric columns are integer-encoded in first-appearance order with
    mode imputation. Rows whose target cell is missing are dropped.
    """
    if task not in (CLASSIFICATION, REGRESSION):
        raise DataError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not found in header")
    tgt_col = header.index(target_column)
    for rno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {rno} has {len(row)} fields, expected {len(header)}")
    body = [row for row in rows[1:] if not _is_missing(row[tgt_col])]
    if not body:
        raise DataError(f"{path}: zero usable rows")
    n = len(body)

    feature_cols = [j for j in range(len(header)) if j != tgt_col]
    X = np.empty((n, len(feature_cols)))
    n_missing = 0
    for out_j, j in enumerate(feature_cols):
        cells = [row[j].strip() for row in body]
        missing = np.array([_is_missing(c) for c in cells])
        n_missing += int(missing.sum())
        observed = [c for c, m in zip(cells, missing) if not m]
        if not observed:
            raise DataError(f"{path}: column {header[j]!r} has no observed values")
        values = [_parse_float(c) for c in observed]
        if all(v is not None for v in values):
            col = np.full(n, np.mean(values))
            col[~missing] = values
        else:
            codes: dict[str, int] = {}
            counts: dict[str, int] = {}
            for c in observed:
                codes.setdefault(c, len(codes))
                counts[c] = counts.get(c, 0) + 1
            mode = max(codes, key=lambda c: (counts[c], -codes[c]))
            col = np.array([float(codes[c]) if not m else float(codes[mode])
                            for c, m in zip(cells, missing)])
        X[:, out_j] = col
    missing_rate = n_missing / (n * len(feature_cols)) if feature_cols else 0.0

    tgt_cells = [row[tgt_col].strip() for row in body]
    tgt_values = [_parse_float(c) for c in tgt_cells]
    if task == REGRESSION:
        for rno, v in enumerate(tgt_values):
            if v is None:
                raise DataError(
                    f"{path}: row {rno + 2}, column {target_column!r}: "
                    f"cannot parse {tgt_cells[rno]!r} as a number")
        y = np.array(tgt_values)
        class_count = 1
    else:
        if all(v is not None for v in tgt_values):
            classes = sorted(set(tgt_values))
            lut = {c: i for i, c in enumerate(classes)}
            y = np.array([float(lut[v]) for v in tgt_values])
        else:
            codes = {}
            for c in tgt_cells:
                codes.setdefault(c, len(codes))
            y = np.array([float(codes[c]) for c in tgt_cells])
            classes = list(codes)
        class_count = len(classes)

    names = [header[j] for j in feature_cols]
    return Dataset(X, y, task, names, class_count=class_count, missing_rate=missing_rate)


def split_stratified(ds: Dataset, val_frac: float, folds: int = 0, seed: int = 0,
                     *, test_frac: float = 0.0) -> SplitPlan:
    """Deterministic seeded split; stratified by class for classification.

    Per-class allocations are rounded so each part stays within one sample
    of the global proportions. `folds > 0` additionally produces k-fold
    (train, test) index pairs over all rows.
    """
    if not 0.0 < val_frac < 1.0:
        raise DataError("val_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if ds.task == CLASSIFICATION:
        strata = [np.flatnonzero(ds.y == c) for c in np.unique(ds.y)]
    else:
        strata = [np.arange(ds.n)]
    if folds > 0:
        short = [len(g) for g in strata if len(g) < folds]
        if short:
            raise DataError(f"a class has {min(short)} members, fewer than {folds} folds")

    train_parts, val_parts, test_parts = [], [], []
    fold_members: list[list[np.ndarray]] = [[] for _ in range(folds)]
    for grp in strata:
        perm = rng.permutation(grp)
        n_test = int(round(test_frac * len(grp)))
        n_val = int(round(val_frac * len(grp)))
        test_parts.append(perm[:n_test])
        val_parts.append(perm[n_test:n_test + n_val])
        train_parts.append(perm[n_test + n_val:])
        for i, idx in enumerate(perm):
            if folds > 0:
                fold_members[i % folds].append(np.array([idx]))

    def _cat(parts):
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=int)

    fold_pairs = []
    for k in range(folds):
        test_k = _cat(fold_members[k])
        mask = np.ones(ds.n, dtype=bool)
        mask[test_k] = False
        fold_pairs.append((np.flatnonzero(mask), test_k))
    return SplitPlan(_cat(train_parts), _cat(val_parts), _cat(test_parts),
                     folds=fold_pairs, seed=seed)


def macro_f1(pred, truth) -> float:
    """Unweighted mean per-class F1 over the classes present in `truth`."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError("pred and truth must have equal length")
    scores = []
    for c in np.unique(truth):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def one_minus_rae(pred, truth) -> float:
    """1 - relative absolute error; negative for models worse than the mean."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise DataError("pred and truth must have equal length")
    denom = np.abs(truth - truth.mean()).sum()
    if denom == 0.0:
        raise DataError("truth is constant; RAE undefined")
    return float(1.0 - np.abs(truth - pred).sum() / denom)


@dataclass
class ScmSpec:
    """Shape of a synthetic linear-Gaussian SCM with an optional nonlinear target."""

    d: int
    n: int
    expected_degree: float = 2.0
    weight_range: tuple[float, float] = (0.5, 2.0)
    noise_std: float = 1.0
    target_parent_count: int = 3
    nonlinearity: str = "none"

    def __post_init__(self) -> None:
        lo, hi = self.weight_range
        if self.d < 2 or self.n < 1:
            raise DataError("need d >= 2 and n >= 1")
        if self.expected_degree < 0 or not 0 < lo <= hi or self.noise_std <= 0:
            raise DataError("invalid degree, weight range, or noise level")
        if not 1 <= self.target_parent_count <= self.d:
            raise DataError("target_parent_count must lie in [1, d]")
        if self.nonlinearity not in NONLINEARITIES:
            raise DataError(f"nonlinearity must be one of {NONLINEARITIES}")


def _target_signal(cols: list[np.ndarray], kind: str, weights: np.ndarray) -> np.ndarray:
    """Combine parent columns into the target signal for one nonlinearity kind."""
    if kind == "none":
        return sum(w * c for w, c in zip(weights, cols))
    if kind == "quadratic":
        out = cols[0] ** 2
        i = 1
        while i + 1 < len(cols):
            out = out + cols[i] * cols[i + 1]
            i += 2
        if i < len(cols):
            out = out + cols[i]
        return out
    if kind == "exponential":
        out = np.exp(0.5 * cols[0])
        if len(cols) > 1:
            out = out + np.log(np.abs(cols[1]) + 1.0)
        for c in cols[2:]:
            out = out + c
        return out
    # mixed: square + sine + one product, linear leftovers
    out = cols[0] ** 2
    if len(cols) > 1:
        out = out + np.sin(np.pi * cols[1])
    if len(cols) > 3:
        out = out + cols[2] * cols[3]
    elif len(cols) == 3:
        out = out + cols[2]
    for c in cols[4:]:
        out = out + c
    return out


def generate_scm(spec: ScmSpec, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Sample a seeded SCM dataset plus its ground-truth adjacency.

    Features follow an Erdos-Renyi DAG drawn over a random topological order
    with edge probability expected_degree / (d - 1); weights are uniform on
    +-[lo, hi] and noise is N(0, noise_std^2). The target is generated from
    `target_parent_count` uniformly chosen parents. The returned adjacency is
    (d + 1) x (d + 1) with the target as the last node.
    """
    d, n = spec.d, spec.n
    lo, hi = spec.weight_range
    rng = np.random.default_rng(seed)
    order = rng.permutation(d)
    p_edge = spec.expected_degree / (d - 1)
    W = np.zeros((d + 1, d + 1))
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p_edge:
                w = rng.uniform(lo, hi)
                if rng.random() < 0.5:
                    w = -w
                W[order[a], order[b]] = w

    parents = np.sort(rng.choice(d, size=spec.target_parent_count, replace=False))
    if spec.nonlinearity == "none":
        signs = np.where(rng.random(len(parents)) < 0.5, -1.0, 1.0)
        t_weights = rng.uniform(lo, hi, size=len(parents)) * signs
    else:
        t_weights = np.ones(len(parents))
    W[parents, d] = t_weights

    X = np.zeros((n, d))
    for a in range(d):
        j = order[a]
        X[:, j] = X @ W[:d, j] + spec.noise_std * rng.standard_normal(n)
    y = _target_signal([X[:, p] for p in parents], spec.nonlinearity, t_weights)
    y = y + spec.noise_std * rng.standard_normal(n)

    names = [f"x{j + 1}" for j in range(d)]
    ds = Dataset(X, y, REGRESSION, names)
    return ds, W
