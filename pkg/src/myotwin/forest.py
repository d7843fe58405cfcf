"""Random forest regression from first principles.

Trees greedily minimize the summed within-child squared deviation (variance
reduction); the forest bags bootstrap resamples and averages tree
predictions. All features are considered at every split (bagging only, no
per-split feature subsampling). Candidate thresholds are midpoints between
consecutive sorted unique feature values; score ties are broken toward the
lower feature index, then the lower threshold.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ToolkitError
from .validation import as_1d_array, as_2d_array, check_fitted

# Relative tolerance treating two split scores as tied, so that exact
# mathematical ties are not broken by floating-point summation order.
_TIE_RTOL = 1e-12

# Hyperparameter grid used by the reference tuning runs.
DEFAULT_SEARCH_GRID = {
    "n_estimators": (100, 200, 300),
    "max_depth": (4, 6, 8, 10),
    "min_samples_split": (2, 5, 10),
    "min_samples_leaf": (1, 2, 4),
}


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 300
    max_depth: int = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ToolkitError("invalid-params", "n_estimators must be >= 1")
        if self.max_depth < 0:
            raise ToolkitError("invalid-params", "max_depth must be >= 0 (0 = leaf-only)")
        if self.min_samples_split < 2:
            raise ToolkitError("invalid-params", "min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ToolkitError("invalid-params", "min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (value)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[TreeNode, ...]
    params: ForestParams
    n_features: int


def _best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int):
    """Scan all (feature, midpoint threshold) candidates; return the
    (feature, threshold, score) minimizing summed child SSE, or None."""
    n = len(y)
    best = None
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind="stable")
        xs = X[order, feature]
        ys = y[order]
        csum = np.cumsum(ys)
        csum_sq = np.cumsum(ys**2)
        total = csum[-1]
        total_sq = csum_sq[-1]
        for k in range(min_samples_leaf, n - min_samples_leaf + 1):
            if k >= n or xs[k] == xs[k - 1]:
                continue
            left_sse = csum_sq[k - 1] - csum[k - 1] ** 2 / k
            right_sum = total - csum[k - 1]
            right_sse = (total_sq - csum_sq[k - 1]) - right_sum**2 / (n - k)
            score = left_sse + right_sse
            if best is None or score < best[2] - _TIE_RTOL * max(1.0, abs(best[2])):
                threshold = (xs[k - 1] + xs[k]) / 2.0
                best = (feature, threshold, score)
    return best


def _build_tree(X, y, params: ForestParams, depth: int) -> TreeNode:
    n = len(y)
    if (
        depth >= params.max_depth
        or n < params.min_samples_split
        or np.all(y == y[0])
    ):
        return TreeNode(value=float(np.mean(y)))
    split = _best_split(X, y, params.min_samples_leaf)
    if split is None:
        return TreeNode(value=float(np.mean(y)))
    feature, threshold, _ = split
    mask = X[:, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_build_tree(X[mask], y[mask], params, depth + 1),
        right=_build_tree(X[~mask], y[~mask], params, depth + 1),
    )


def fit_tree(features, targets, params: ForestParams, rng=None) -> TreeNode:
    """Fit one regression tree. Splitting is deterministic (no per-split
    randomness); ``rng`` is accepted for interface symmetry with bagging."""
    X = as_2d_array(features)
    y = as_1d_array(targets, "targets")
    if len(y) == 0 or X.shape[0] == 0:
        raise ToolkitError("empty-input", "cannot fit a tree on zero rows")
    if X.shape[0] != len(y):
        raise ToolkitError("length-mismatch", f"{X.shape[0]} rows vs {len(y)} targets")
    return _build_tree(X, y, params, depth=0)


def predict_tree(node: TreeNode, features) -> np.ndarray:
    X = as_2d_array(features)
    out = np.empty(X.shape[0])
    for i, row in enumerate(X):
        cur = node
        while not cur.is_leaf:
            cur = cur.left if row[cur.feature] <= cur.threshold else cur.right
        out[i] = cur.value
    return out


def fit_forest(features, targets, params: ForestParams) -> ForestModel:
    """Bag ``n_estimators`` trees on bootstrap resamples (n draws with
    replacement); per-tree RNG derives from (seed, tree index)."""
    X = as_2d_array(features)
    y = as_1d_array(targets, "targets")
    if len(y) == 0:
        raise ToolkitError("empty-input", "cannot fit a forest on zero rows")
    if X.shape[0] != len(y):
        raise ToolkitError("length-mismatch", f"{X.shape[0]} rows vs {len(y)} targets")
    n = len(y)
    trees = []
    for t in range(params.n_estimators):
        rng = np.random.default_rng([params.seed, t])
        idx = rng.integers(0, n, size=n)
        trees.append(fit_tree(X[idx], y[idx], params, rng))
    return ForestModel(trees=tuple(trees), params=params, n_features=X.shape[1])


def predict(model: ForestModel, features) -> np.ndarray:
    """Forest prediction: arithmetic mean of the trees' predictions."""
    X = as_2d_array(features)
    if X.shape[1] != model.n_features:
        raise ToolkitError(
            "feature-width-mismatch",
            f"model expects {model.n_features} features, got {X.shape[1]}",
        )
    votes = np.stack([predict_tree(tree, X) for tree in model.trees])
    return votes.mean(axis=0)


def grid_combinations(grid: dict) -> list[dict]:
    """All grid points, in deterministic key-canonical order."""
    keys = ("n_estimators", "max_depth", "min_samples_split", "min_samples_leaf")
    unknown = set(grid) - set(keys)
    if unknown:
        raise ToolkitError("invalid-params", f"unknown grid keys: {sorted(unknown)}")
    values = [tuple(grid.get(k, (getattr(ForestParams(), k),))) for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def randomized_search_cv(grid: dict, n_iter: int, k_folds: int, features, targets, seed: int = 0):
    """Sample ``n_iter`` distinct grid combinations, score each by mean
    k-fold validation MSE, return (best ForestParams, score table).

    Ties go to the combination sampled earlier.
    """
    X = as_2d_array(features)
    y = as_1d_array(targets, "targets")
    n = len(y)
    if k_folds < 2 or k_folds > n:
        raise ToolkitError("invalid-folds", f"k_folds must be in [2, {n}], got {k_folds}")
    combos = grid_combinations(grid)
    if n_iter > len(combos):
        raise ToolkitError(
            "n-iter-exceeds-grid", f"n_iter {n_iter} exceeds the {len(combos)}-point grid"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(combos), size=n_iter, replace=False)

    perm = rng.permutation(n)
    fold_sizes = [n // k_folds + (1 if f < n % k_folds else 0) for f in range(k_folds)]
    folds = []
    start = 0
    for size in fold_sizes:
        folds.append(perm[start : start + size])
        start += size

    table = []
    best_idx = None
    for rank, combo_idx in enumerate(chosen):
        combo = combos[combo_idx]
        params = ForestParams(seed=seed, **combo)
        fold_mse = []
        for f in range(k_folds):
            val_idx = folds[f]
            train_idx = np.concatenate([folds[g] for g in range(k_folds) if g != f])
            model = fit_forest(X[train_idx], y[train_idx], params)
            pred = predict(model, X[val_idx])
            fold_mse.append(float(np.mean((pred - y[val_idx]) ** 2)))
        record = dict(combo)
        record["mean_mse"] = float(np.mean(fold_mse))
        record["fold_mse"] = fold_mse
        table.append(record)
        if best_idx is None or record["mean_mse"] < table[best_idx]["mean_mse"]:
            best_idx = rank
    best = table[best_idx]
    best_params = ForestParams(
        seed=seed,
        **{k: best[k] for k in ("n_estimators", "max_depth", "min_samples_split", "min_samples_leaf")},
    )
    return best_params, table


# --- serialization: preorder node lists ------------------------------------

def tree_to_preorder(node: TreeNode) -> list[dict]:
    out = []

    def visit(n: TreeNode):
        if n.is_leaf:
            out.append({"value": n.value})
        else:
            out.append({"feature": n.feature, "threshold": n.threshold})
            visit(n.left)
            visit(n.right)

    visit(node)
    return out


def preorder_to_tree(nodes: list[dict]) -> TreeNode:
    cursor = iter(nodes)

    def build() -> TreeNode:
        record = next(cursor)
        if "value" in record:
            return TreeNode(value=float(record["value"]))
        return TreeNode(
            feature=int(record["feature"]),
            threshold=float(record["threshold"]),
            left=build(),
            right=build(),
        )

    tree = build()
    if next(cursor, None) is not None:
        raise ToolkitError("incompatible-artifact", "trailing nodes in preorder tree list")
    return tree


class RandomForest(RegressorMixin, BaseEstimator):
    """Estimator wrapper around fit_forest/predict."""

    def __init__(self, n_estimators=300, max_depth=10, min_samples_split=2, min_samples_leaf=1, seed=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed
        self.model_ = None

    def fit(self, X, y):
        params = ForestParams(
            n_estimators=self.n_estimators,
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            min_samples_leaf=self.min_samples_leaf,
            seed=self.seed,
        )
        self.model_ = fit_forest(X, y, params)
        return self

    def predict(self, X):
        check_fitted(self, "model_")
        return predict(self.model_, X)
