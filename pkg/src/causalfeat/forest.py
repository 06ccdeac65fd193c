"""Deterministic random forest (CART) used as the downstream scorer.

Trees use Gini impurity for classification and variance reduction for
regression, midpoint thresholds between sorted unique values, and break
gain ties toward the lower feature id and lower threshold. Feature ids are
canonical positions, so training is invariant to column permutation when a
remapping is supplied. Everything is seeded and bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, SplitPlan, macro_f1, one_minus_rae

GAIN_TOL = 1e-12


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_split: int = 2


@dataclass
class _Tree:
    feature: list[int] = field(default_factory=list)   # canonical id, -1 for leaf
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)   # class label or mean


@dataclass
class ForestModel:
    trees: list[_Tree]
    task: str
    config: ForestConfig
    n_features: int
    classes: np.ndarray
    importances: np.ndarray
    feature_ids: np.ndarray  # canonical id per column
    col_of: dict[int, int]   # canonical id -> column position


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split_multi(Xn: np.ndarray, y_enc: np.ndarray, task: str, n_classes: int):
    """Best (column position, threshold, gain) across candidate columns.

    Columns must be in ascending canonical order. One sort plus a prefix-sum
    scan per node; ties break toward the first (lowest-id) column and, within
    a column, the lowest threshold (argmax returns the first maximum).
    """
    n, m = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    valid = xs[1:] > xs[:-1]  # midpoint exists between distinct values
    if not valid.any():
        return None
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    if task == CLASSIFICATION:
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y_enc.astype(int)] = 1.0
        sorted_oh = onehot[order]            # (n, m, C)
        csum = sorted_oh.cumsum(axis=0)
        total = csum[-1, 0]                  # identical for every column
        left = csum[:-1]
        right = total[None, None, :] - left
        gl = 1.0 - ((left / nl[..., None]) ** 2).sum(axis=2)
        gr = 1.0 - ((right / nr[..., None]) ** 2).sum(axis=2)
        parent = 1.0 - ((total / n) ** 2).sum()
        gain = parent - (nl * gl + nr * gr) / n
    else:
        ys = y_enc[order]                    # (n, m)
        csum = ys.cumsum(axis=0)
        csq = (ys * ys).cumsum(axis=0)
        total, total_sq = csum[-1, 0], csq[-1, 0]
        sl, ql = csum[:-1], csq[:-1]
        vl = ql / nl - (sl / nl) ** 2
        vr = (total_sq - ql) / nr - ((total - sl) / nr) ** 2
        parent = total_sq / n - (total / n) ** 2
        gain = parent - (nl * vl + nr * vr) / n
    gain[~valid] = -np.inf
    row_best = gain.argmax(axis=0)           # per column: first max
    col_gain = gain[row_best, np.arange(m)]
    col = int(np.argmax(col_gain))           # across columns: first max
    if not col_gain[col] > GAIN_TOL:
        return None
    i = int(row_best[col])
    thr = 0.5 * (xs[i, col] + xs[i + 1, col])
    return col, float(thr), float(col_gain[col])


def _build_tree(X: np.ndarray, y: np.ndarray, task: str, cfg: ForestConfig,
                rng: np.random.Generator, n_classes: int, canon_order: np.ndarray,
                importances: np.ndarray, feature_ids: np.ndarray) -> _Tree:
    tree = _Tree()
    n_feat = X.shape[1]
    m = int(np.ceil(np.sqrt(n_feat)))

    def leaf_value(idx: np.ndarray) -> float:
        if task == CLASSIFICATION:
            counts = np.bincount(y[idx].astype(int), minlength=n_classes)
            return float(np.argmax(counts))  # lowest label wins ties
        return float(y[idx].mean())

    def impurity(idx: np.ndarray) -> float:
        if task == CLASSIFICATION:
            return _gini(np.bincount(y[idx].astype(int), minlength=n_classes))
        return float(y[idx].var())

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(tree.feature)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(leaf_value(idx))
        if depth >= cfg.max_depth or len(idx) < cfg.min_split or impurity(idx) <= 0:
            return node
        # sample candidate features in canonical order, evaluate ascending
        pick = rng.choice(n_feat, size=m, replace=False)
        candidates = canon_order[np.sort(pick)]
        res = _best_split_multi(X[np.ix_(idx, candidates)], y[idx], task, n_classes)
        if res is None:
            return node
        col_pos, thr, _gain = res
        col = int(candidates[col_pos])
        mask = X[idx, col] <= thr
        left_idx, right_idx = idx[mask], idx[~mask]
        if len(left_idx) == 0 or len(right_idx) == 0:
            return node
        importances[feature_ids[col]] += len(idx) * impurity(idx) \
            - len(left_idx) * impurity(left_idx) - len(right_idx) * impurity(right_idx)
        tree.feature[node] = int(feature_ids[col])
        tree.threshold[node] = thr
        tree.left[node] = grow(left_idx, depth + 1)
        tree.right[node] = grow(right_idx, depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


def fit(X: np.ndarray, y: np.ndarray, task: str, config: ForestConfig | None = None,
        seed: int = 0, feature_ids: np.ndarray | None = None) -> ForestModel:
    """Train a bootstrap forest. `feature_ids` gives each column a canonical
    identity so tie-breaking survives column permutation."""
    config = config or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2 or d < 1:
        raise ValueError("need at least 2 rows and 1 feature")
    if feature_ids is None:
        feature_ids = np.arange(d)
    feature_ids = np.asarray(feature_ids)
    col_of = {int(f): j for j, f in enumerate(feature_ids)}
    canon_order = np.array(sorted(range(d), key=lambda j: feature_ids[j]))
    classes = np.unique(y.astype(int)) if task == CLASSIFICATION else np.empty(0, dtype=int)
    n_classes = int(classes.max()) + 1 if task == CLASSIFICATION else 0

    importances = np.zeros(int(feature_ids.max()) + 1)
    trees = []
    children = np.random.SeedSequence(seed).spawn(config.n_trees)
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n)
        trees.append(_build_tree(X[idx], y[idx], task, config, rng, n_classes,
                                 canon_order, importances, feature_ids))
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return ForestModel(trees, task, config, d, classes, importances,
                       feature_ids, col_of)


def _tree_predict(tree: _Tree, X: np.ndarray, col_of: dict[int, int]) -> np.ndarray:
    out = np.empty(X.shape[0])
    active = {0: np.arange(X.shape[0])}
    while active:
        node, idx = active.popitem()
        if tree.feature[node] < 0:
            out[idx] = tree.value[node]
            continue
        col = col_of[tree.feature[node]]
        mask = X[idx, col] <= tree.threshold[node]
        if mask.any():
            active[tree.left[node]] = idx[mask]
        if (~mask).any():
            active[tree.right[node]] = idx[~mask]
    return out


def predict(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Majority vote (ties -> lowest label) or mean across trees."""
    X = np.asarray(X, dtype=float)
    votes = np.stack([_tree_predict(t, X, model.col_of) for t in model.trees])
    if model.task == CLASSIFICATION:
        n_classes = int(votes.max()) + 1
        counts = np.stack([np.bincount(votes[:, i].astype(int), minlength=n_classes)
                           for i in range(X.shape[0])])
        return counts.argmax(axis=1).astype(float)
    return votes.mean(axis=0)


def feature_importances(model: ForestModel) -> np.ndarray:
    """Normalized total impurity decrease per canonical feature id."""
    return model.importances.copy()


def score(model: ForestModel, X: np.ndarray, y: np.ndarray) -> float:
    pred = predict(model, X)
    if model.task == CLASSIFICATION:
        return macro_f1(pred.astype(int), np.asarray(y).astype(int))
    return one_minus_rae(pred, y)


def evaluate(features: np.ndarray, y: np.ndarray, task: str, split: SplitPlan,
             seed: int = 0, config: ForestConfig | None = None) -> float:
    """Fit on the train indices, score on the validation indices."""
    model = fit(features[split.train_idx], np.asarray(y)[split.train_idx], task,
                config, seed)
    return score(model, features[split.val_idx], np.asarray(y)[split.val_idx])


def evaluate_cv(features: np.ndarray, y: np.ndarray, task: str,
                folds: list[tuple[np.ndarray, np.ndarray]], seed: int = 0,
                config: ForestConfig | None = None) -> float:
    """Mean score over k-fold (train, test) index pairs."""
    y = np.asarray(y)
    scores = []
    for k, (tr, te) in enumerate(folds):
        model = fit(features[tr], y[tr], task, config, seed + k)
        scores.append(score(model, features[te], y[te]))
    return float(np.mean(scores))
