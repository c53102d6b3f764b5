"""CART-style regression trees and the leave-one-out evaluation protocol.

Fitting is fully deterministic: splits scan features in index order and
thresholds in ascending order, keeping the first strict improvement, and
every reduction (leaf means, within-node squared error) runs over values
sorted into a canonical order, so permuting the training rows reproduces
the exact same tree bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ParseError, ValidationError
from .grid import SCORED_TISSUES, TissueClass

MODEL_SCHEMA_VERSION = 1


class ModelFormatError(ParseError):
    """A serialized model file is malformed or has the wrong version."""


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class TreeParams:
    """Stopping rules; ``max_depth=None`` disables the depth limit."""

    max_depth: int | None = 5
    min_samples_leaf: int = 2
    min_variance_gain: float = 1e-12

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValidationError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")


def _canonical_sum(values: np.ndarray) -> float:
    return float(np.sort(values).sum())


def _leaf(y: np.ndarray) -> Leaf:
    return Leaf(value=_canonical_sum(y) / y.size)


def _node_sse(y: np.ndarray) -> float:
    ys = np.sort(y)
    total = float(ys.sum())
    return max(float((ys * ys).sum()) - total * total / ys.size, 0.0)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest-SSE split as (children_sse, feature, threshold), or None."""
    n = y.size
    best = None
    for f in range(X.shape[1]):
        xf = X[:, f]
        order = np.lexsort((y, xf))  # canonical: by value, then target
        xs = xf[order]
        ys = y[order]
        cut = np.nonzero(xs[:-1] != xs[1:])[0]  # split after sorted index i
        cut = cut[(cut + 1 >= min_leaf) & (n - cut - 1 >= min_leaf)]
        if cut.size == 0:
            continue
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        n_left = cut + 1.0
        n_right = n - n_left
        sse_left = csq[cut] - csum[cut] ** 2 / n_left
        sse_right = (csq[-1] - csq[cut]) - (csum[-1] - csum[cut]) ** 2 / n_right
        children = np.maximum(sse_left, 0.0) + np.maximum(sse_right, 0.0)
        pos = int(np.argmin(children))  # first minimum: lowest threshold wins
        if best is None or children[pos] < best[0]:
            threshold = (xs[cut[pos]] + xs[cut[pos] + 1]) / 2.0
            if threshold >= xs[cut[pos] + 1]:
                # adjacent floats: the midpoint rounded up and would route
                # both groups left, so pin it to the last left value
                threshold = xs[cut[pos]]
            best = (float(children[pos]), f, float(threshold))
    return best


def _grow(X: np.ndarray, y: np.ndarray, params: TreeParams, depth: int) -> TreeNode:
    n = y.size
    if params.max_depth is not None and depth >= params.max_depth:
        return _leaf(y)
    if n < 2 * params.min_samples_leaf:
        return _leaf(y)
    best = _best_split(X, y, params.min_samples_leaf)
    if best is None:
        return _leaf(y)
    children_sse, feature, threshold = best
    gain = (_node_sse(y) - children_sse) / n
    if gain < params.min_variance_gain:
        return _leaf(y)
    go_left = X[:, feature] <= threshold
    return Split(
        feature=feature,
        threshold=threshold,
        left=_grow(X[go_left], y[go_left], params, depth + 1),
        right=_grow(X[~go_left], y[~go_left], params, depth + 1),
    )


def fit_tree(X, y, params: TreeParams = TreeParams()) -> TreeNode:
    """Fit one regression tree by greedy variance reduction."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValidationError(f"feature matrix {X.shape} does not match {y.size} targets")
    if y.size == 0:
        raise ValidationError("cannot fit a tree on an empty training set")
    if not np.all(np.isfinite(X)):
        raise ValidationError("feature matrix contains NaN or infinite values")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValidationError("targets must lie in [0, 1]")
    return _grow(X, y, params, depth=0)


def predict(tree: TreeNode, x) -> float:
    """Route a feature vector to its leaf; boundary values go left."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    node = tree
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


def loo_evaluate(X, Y, params: TreeParams = TreeParams()) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out predictions for every subject and tissue.

    ``X`` is (n, n_features) and ``Y`` (n, n_tissues) of actual Dice values.
    Returns (predicted, actual), both (n, n_tissues).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ValidationError(f"target matrix {Y.shape} does not match features {X.shape}")
    if X.shape[0] < 2:
        raise ValidationError("leave-one-out needs at least 2 subjects")
    if np.any(~np.isfinite(Y)):
        raise ValidationError("every subject needs complete Dice targets for leave-one-out")

    n = X.shape[0]
    predicted = np.empty_like(Y)
    for i in range(n):
        keep = np.arange(n) != i
        for t in range(Y.shape[1]):
            tree = fit_tree(X[keep], Y[keep, t], params)
            predicted[i, t] = predict(tree, X[i])
    return predicted, Y.copy()


@dataclass(frozen=True)
class TissueModelSet:
    """One fitted tree per scored tissue."""

    trees: dict[TissueClass, TreeNode]

    def __post_init__(self):
        missing = [t.name for t in SCORED_TISSUES if t not in self.trees]
        if missing:
            raise ValidationError(f"model set missing trees for {missing}")

    def predict(self, x) -> np.ndarray:
        """Predicted Dice per tissue in the frozen order."""
        return np.array([predict(self.trees[t], x) for t in SCORED_TISSUES])


def fit_tissue_models(X, Y, params: TreeParams = TreeParams()) -> TissueModelSet:
    """Fit the five per-tissue trees on the full training set."""
    Y = np.asarray(Y, dtype=np.float64)
    return TissueModelSet(
        trees={
            t: fit_tree(X, Y[:, idx], params) for idx, t in enumerate(SCORED_TISSUES)
        }
    )


def _node_to_json(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(doc, where: str) -> TreeNode:
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{where}: tree node must be an object")
    if "value" in doc:
        return Leaf(value=float(doc["value"]))
    try:
        return Split(
            feature=int(doc["feature"]),
            threshold=float(doc["threshold"]),
            left=_node_from_json(doc["left"], where),
            right=_node_from_json(doc["right"], where),
        )
    except KeyError as exc:
        raise ModelFormatError(f"{where}: tree node missing key {exc}") from exc


def save_models(models: TissueModelSet, path) -> None:
    """Serialize the model set as JSON; floats keep full precision."""
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "trees": {t.name.lower(): _node_to_json(models.trees[t]) for t in SCORED_TISSUES},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_models(path) -> TissueModelSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: expected a JSON object")
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"{path}: schema version {version!r} does not match expected {MODEL_SCHEMA_VERSION}"
        )
    trees_doc = doc.get("trees")
    if not isinstance(trees_doc, dict):
        raise ModelFormatError(f"{path}: missing 'trees' object")
    trees = {}
    for t in SCORED_TISSUES:
        key = t.name.lower()
        if key not in trees_doc:
            raise ModelFormatError(f"{path}: missing tree for tissue {key!r}")
        trees[t] = _node_from_json(trees_doc[key], f"{path}:{key}")
    return TissueModelSet(trees=trees)
