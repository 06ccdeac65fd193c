"""Transformation operator library, recipe trees, pair sampling, and pruning."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import mi as _mi

EPS = 1e-8
CLIP = 1e6
VARIANCE_FLOOR = 1e-8
ROLE_PRIORITY = {"direct": 0, "indirect": 1, "other": 2}


class Operator(NamedTuple):
    id: int
    name: str
    arity: int


UNARY_NAMES = ("sqrt", "square", "cube", "sin", "cos", "tanh", "reciprocal",
               "exp", "log", "sigmoid", "standardize")
BINARY_NAMES = ("add", "sub", "mul", "div")
OPERATORS = tuple(Operator(i, name, 1) for i, name in enumerate(UNARY_NAMES)) + \
    tuple(Operator(len(UNARY_NAMES) + i, name, 2) for i, name in enumerate(BINARY_NAMES))
OP_COUNT = len(OPERATORS)
_BY_NAME = {op.name: op for op in OPERATORS}


def op_by(key: int | str) -> Operator:
    if isinstance(key, str):
        if key not in _BY_NAME:
            raise ValueError(f"unknown operator {key!r}")
        return _BY_NAME[key]
    if not 0 <= key < OP_COUNT:
        raise ValueError(f"operator id {key} out of range")
    return OPERATORS[key]


def _guard(values: np.ndarray) -> np.ndarray:
    """Replace non-finite results with 0, then clip to +-1e6."""
    values = np.where(np.isfinite(values), values, 0.0)
    return np.clip(values, -CLIP, CLIP)


def apply_unary(op: int | str, x: np.ndarray) -> np.ndarray:
    """Guarded elementwise transform; always finite and within +-1e6."""
    op = op_by(op)
    if op.arity != 1:
        raise ValueError(f"{op.name} is not unary")
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        if op.name == "sqrt":
            r = np.sqrt(np.abs(x))
        elif op.name == "square":
            r = x * x
        elif op.name == "cube":
            r = x * x * x
        elif op.name == "sin":
            r = np.sin(x)
        elif op.name == "cos":
            r = np.cos(x)
        elif op.name == "tanh":
            r = np.tanh(x)
        elif op.name == "reciprocal":
            r = np.sign(x) / np.maximum(np.abs(x), EPS)
        elif op.name == "exp":
            r = np.exp(x)
        elif op.name == "log":
            r = np.log(np.abs(x) + EPS)
        elif op.name == "sigmoid":
            r = 1.0 / (1.0 + np.exp(-x))  # overflow saturates to 0 under the guard
        elif op.name == "standardize":
            r = (x - x.mean()) / max(float(x.std()), EPS)
        else:  # pragma: no cover
            raise AssertionError(op.name)
    return _guard(r)


def apply_binary(op: int | str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Guarded elementwise combination of two equal-length columns."""
    op = op_by(op)
    if op.arity != 2:
        raise ValueError(f"{op.name} is not binary")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    with np.errstate(all="ignore"):
        if op.name == "add":
            r = x + y
        elif op.name == "sub":
            r = x - y
        elif op.name == "mul":
            r = x * y
        elif op.name == "div":
            r = x * np.sign(y) / np.maximum(np.abs(y), EPS)
        else:  # pragma: no cover
            raise AssertionError(op.name)
    return _guard(r)


@dataclass(frozen=True)
class Recipe:
    """Expression tree reconstructing a feature from raw columns.

    `op` is "src" for a leaf (with `col` set) or an operator name with one
    or two children.
    """

    op: str
    col: int = -1
    children: tuple["Recipe", ...] = ()

    @property
    def depth(self) -> int:
        if self.op == "src":
            return 0
        return 1 + max(c.depth for c in self.children)

    def source_columns(self) -> set[int]:
        if self.op == "src":
            return {self.col}
        out: set[int] = set()
        for c in self.children:
            out |= c.source_columns()
        return out


def source(col: int) -> Recipe:
    return Recipe("src", col=col)


def unary(op: int | str, child: Recipe) -> Recipe:
    return Recipe(op_by(op).name, children=(child,))


def binary(op: int | str, left: Recipe, right: Recipe) -> Recipe:
    return Recipe(op_by(op).name, children=(left, right))


def op_depth(recipe: Recipe) -> int:
    return recipe.depth


def recipe_role(recipe: Recipe, role_of: dict[int, str]) -> str:
    """Highest-priority role among the source leaves (direct > indirect > other)."""
    roles = [role_of.get(c, "other") for c in recipe.source_columns()]
    return min(roles, key=lambda r: ROLE_PRIORITY[r])


def apply_recipe(recipe: Recipe, X: np.ndarray) -> np.ndarray:
    if recipe.op == "src":
        if not 0 <= recipe.col < X.shape[1]:
            raise ValueError(f"source column {recipe.col} out of range")
        return np.array(X[:, recipe.col], dtype=float)
    if len(recipe.children) == 1:
        return apply_unary(recipe.op, apply_recipe(recipe.children[0], X))
    return apply_binary(recipe.op, apply_recipe(recipe.children[0], X),
                        apply_recipe(recipe.children[1], X))


def serialize_recipe(recipe: Recipe) -> str:
    if recipe.op == "src":
        return f"src:{recipe.col}"
    return f"{recipe.op}({', '.join(serialize_recipe(c) for c in recipe.children)})"


class RecipeParseError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


def parse_recipe(text: str) -> Recipe:
    """Parse prefix notation, e.g. ``div(src:3, log(src:7))``."""
    recipe, pos = _parse_expr(text, 0)
    pos = _skip_ws(text, pos)
    if pos != len(text):
        raise RecipeParseError("trailing input", pos)
    return recipe


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def _parse_expr(text: str, pos: int) -> tuple[Recipe, int]:
    pos = _skip_ws(text, pos)
    start = pos
    while pos < len(text) and (text[pos].isalnum() or text[pos] in "_"):
        pos += 1
    token = text[start:pos]
    if not token:
        raise RecipeParseError("expected operator or source", pos)
    if token == "src":
        if pos >= len(text) or text[pos] != ":":
            raise RecipeParseError("expected ':' after 'src'", pos)
        pos += 1
        dstart = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if pos == dstart:
            raise RecipeParseError("expected column index", pos)
        return source(int(text[dstart:pos])), pos
    if token not in _BY_NAME:
        raise RecipeParseError(f"unknown operator {token!r}", start)
    op = _BY_NAME[token]
    if pos >= len(text) or text[pos] != "(":
        raise RecipeParseError("expected '('", pos)
    pos += 1
    children = []
    for k in range(op.arity):
        child, pos = _parse_expr(text, pos)
        children.append(child)
        pos = _skip_ws(text, pos)
        expect = "," if k + 1 < op.arity else ")"
        if pos >= len(text) or text[pos] != expect:
            raise RecipeParseError(f"expected {expect!r}", pos)
        pos += 1
    return Recipe(op.name, children=tuple(children)), pos


def sample_pairs(c1, c2, budget_cap: int = 50, relevance: dict[int, float] | None = None,
                 seed: int | None = None, rng: np.random.Generator | None = None,
                 boost: float = 1.0) -> list[tuple[int, int]]:
    """Weighted sampling of feature pairs without replacement.

    Pair weight is relevance(f1) * relevance(f2) * boost, uniform when every
    relevance is zero. Budget is min(budget_cap, |c1| * |c2|).
    """
    c1, c2 = list(c1), list(c2)
    if not c1 or not c2:
        raise ValueError("pair pools must be non-empty")
    if rng is None:
        rng = np.random.default_rng(seed)
    pairs = [(a, b) for a in c1 for b in c2]
    rel = relevance or {}
    weights = np.array([max(rel.get(a, 0.0), 0.0) * max(rel.get(b, 0.0), 0.0) * boost
                        for a, b in pairs])
    if weights.sum() <= 0:
        weights = np.ones(len(pairs))
    budget = min(budget_cap, len(pairs))
    chosen = []
    w = weights.astype(float)
    for _ in range(budget):
        p = w / w.sum()
        k = int(rng.choice(len(pairs), p=p))
        chosen.append(pairs[k])
        w[k] = 0.0
    return chosen


def prune_features(recipes: list[Recipe], columns: np.ndarray, y: np.ndarray,
                   task: str, cap: int, roles: list[str] | None = None,
                   min_per_group: int = 1) -> list[int]:
    """Two-stage pruning: variance floor, then MI-ranked retention.

    Source recipes (depth 0) are never pruned. Among generated survivors the
    top of the MI ranking fills the remaining budget, with at least
    `min_per_group` kept per causal role whenever that role has survivors.
    Returns retained column indices in ascending order.
    """
    m = len(recipes)
    if columns.shape[1] != m:
        raise ValueError("columns and recipes disagree")
    original = [i for i in range(m) if recipes[i].op == "src"]
    if cap < len(original):
        raise ValueError("cap below original feature count")
    generated = [i for i in range(m) if recipes[i].op != "src"]
    survivors = [i for i in generated if float(columns[:, i].var()) >= VARIANCE_FLOOR]

    y_codes = _mi.target_codes(np.asarray(y), task)
    scores = {i: _mi.mi_with_target(columns[:, i], y_codes) for i in survivors}
    ranked = sorted(survivors, key=lambda i: (-scores[i], i))
    budget = cap - len(original)
    keep = ranked[:budget]

    if roles is not None and keep:
        role_list = {i: roles[i] for i in survivors}
        present = sorted({role_list[i] for i in survivors}, key=lambda r: ROLE_PRIORITY[r])
        for role in present:
            have = [i for i in keep if role_list[i] == role]
            if len(have) >= min_per_group:
                continue
            candidates = [i for i in ranked if role_list[i] == role and i not in keep]
            for cand in candidates[:min_per_group - len(have)]:
                evict = [i for i in reversed(keep)
                         if sum(1 for j in keep if role_list[j] == role_list[i]) > min_per_group]
                if not evict:
                    break
                keep.remove(evict[0])
                keep.append(cand)
    return sorted(original + keep)
