"""Small deterministic regression backends.

Two interchangeable fitters live here: a ridge-regularized linear least
squares solve and a depth-limited boosted regression tree ensemble. Both fit
plain numeric matrices, carry no hidden randomness, and round-trip through
dicts so trained models can be stored in a JSON model bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np


class FittedRegressor(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray: ...

    def to_dict(self) -> dict[str, Any]: ...


@dataclass(frozen=True)
class LinearModel:
    coef: tuple[float, ...]
    intercept: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ np.asarray(self.coef) + self.intercept

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "linear", "coef": list(self.coef), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LinearModel":
        return cls(coef=tuple(float(c) for c in d["coef"]), intercept=float(d["intercept"]))


class LinearBackend:
    """Least squares with a small L2 penalty on the slopes.

    The intercept is left unpenalized by centering the data first, so exact
    linear relationships are recovered up to the (tiny) ridge term.
    """

    name = "linear"

    def __init__(self, ridge: float = 1e-8):
        if ridge < 0:
            raise ValueError("ridge penalty must be >= 0")
        self.ridge = ridge

    def fit(self, X: np.ndarray, y: np.ndarray) -> LinearModel:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be 2d with one row per target value")
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Xc = X - x_mean
        yc = y - y_mean
        gram = Xc.T @ Xc + self.ridge * np.eye(X.shape[1])
        try:
            coef = np.linalg.solve(gram, Xc.T @ yc)
        except np.linalg.LinAlgError:
            coef, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
        intercept = y_mean - float(x_mean @ coef)
        return LinearModel(coef=tuple(float(c) for c in coef), intercept=intercept)


# ---------------------------------------------------------------------------
# Regression trees


def _fit_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> dict[str, Any]:
    """Greedy SSE-minimizing tree. Splits are deterministic: the scan order is
    fixed and ties keep the first (feature, threshold) found."""
    n = y.shape[0]
    if max_depth == 0 or n < 2 * min_leaf or float(np.ptp(y)) == 0.0:
        return {"value": float(y.mean())}

    best_gain = 0.0
    best: tuple[int, float] | None = None
    total_sum = float(y.sum())
    total_sq = float((y * y).sum())
    base_sse = total_sq - total_sum * total_sum / n

    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        # candidate split after position i (1-based count on the left)
        for i in range(min_leaf, n - min_leaf + 1):
            if i < n and xs[i - 1] == xs[i]:
                continue  # cannot separate equal feature values
            left_n = i
            right_n = n - i
            ls, lq = csum[i - 1], csq[i - 1]
            rs, rq = total_sum - ls, total_sq - lq
            sse = (lq - ls * ls / left_n) + (rq - rs * rs / right_n)
            gain = base_sse - sse
            if gain > best_gain + 1e-12:
                best_gain = gain
                best = (j, float((xs[i - 1] + xs[i]) / 2.0))

    if best is None:
        return {"value": float(y.mean())}
    j, thr = best
    mask = X[:, j] <= thr
    return {
        "feature": j,
        "threshold": thr,
        "left": _fit_tree(X[mask], y[mask], max_depth - 1, min_leaf),
        "right": _fit_tree(X[~mask], y[~mask], max_depth - 1, min_leaf),
    }


def _tree_predict(node: dict[str, Any], X: np.ndarray) -> np.ndarray:
    if "value" in node:
        return np.full(X.shape[0], node["value"])
    mask = X[:, node["feature"]] <= node["threshold"]
    out = np.empty(X.shape[0])
    if mask.any():
        out[mask] = _tree_predict(node["left"], X[mask])
    if (~mask).any():
        out[~mask] = _tree_predict(node["right"], X[~mask])
    return out


@dataclass(frozen=True)
class BoostedTreesModel:
    base: float
    learning_rate: float
    trees: tuple[dict[str, Any], ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2d")
        pred = np.full(X.shape[0], self.base)
        for tree in self.trees:
            pred += self.learning_rate * _tree_predict(tree, X)
        return pred

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "tree",
            "base": self.base,
            "learning_rate": self.learning_rate,
            "trees": list(self.trees),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BoostedTreesModel":
        return cls(
            base=float(d["base"]),
            learning_rate=float(d["learning_rate"]),
            trees=tuple(d["trees"]),
        )


class TreeBackend:
    """Gradient boosting on squared error with depth-limited trees."""

    name = "tree"

    def __init__(
        self,
        n_estimators: int = 40,
        max_depth: int = 3,
        learning_rate: float = 0.3,
        min_samples_leaf: int = 5,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X: np.ndarray, y: np.ndarray) -> BoostedTreesModel:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        base = float(y.mean())
        residual = y - base
        trees: list[dict[str, Any]] = []
        for _ in range(self.n_estimators):
            if float(np.abs(residual).max(initial=0.0)) < 1e-12:
                break
            tree = _fit_tree(X, residual, self.max_depth, self.min_samples_leaf)
            trees.append(tree)
            residual = residual - self.learning_rate * _tree_predict(tree, X)
        return BoostedTreesModel(
            base=base, learning_rate=self.learning_rate, trees=tuple(trees)
        )


BACKENDS = {"linear": LinearBackend, "tree": TreeBackend}


def get_backend(name: str, **kwargs):
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown regression backend {name!r}, expected one of {sorted(BACKENDS)}"
        ) from None
    return cls(**kwargs)


def regressor_from_dict(d: dict[str, Any]) -> FittedRegressor:
    kind = d.get("kind")
    if kind == "linear":
        return LinearModel.from_dict(d)
    if kind == "tree":
        return BoostedTreesModel.from_dict(d)
    raise ValueError(f"unknown fitted regressor kind {kind!r}")
