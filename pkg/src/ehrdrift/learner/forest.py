"""Random-forest binary classifier grown from scratch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .._seeding import derive_seed
from . import _kernels


class TrainingError(ValueError):
    pass


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 100
    max_depth: Optional[int] = None  # None = grow until pure / min leaf
    min_samples_leaf: int = 1
    max_features_fraction: float = 0.33
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if not 0 < self.max_features_fraction <= 1:
            raise ValueError("max_features_fraction must lie in (0, 1]")

    def describe(self) -> str:
        depth = "none" if self.max_depth is None else str(self.max_depth)
        return (f"n_trees={self.n_trees};max_depth={depth};"
                f"min_samples_leaf={self.min_samples_leaf};"
                f"max_features_fraction={self.max_features_fraction:g};"
                f"bootstrap={int(self.bootstrap)}")


@dataclass
class Tree:
    feature: np.ndarray    # -1 at leaves
    threshold: np.ndarray  # rows with x <= threshold go left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # positive-class fraction of samples at the node
    count: np.ndarray      # (bootstrap-weighted) samples at the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0


@dataclass
class ForestModel:
    trees: list
    n_columns: int
    seed: int
    hyperparams: HyperParams
    degenerate: bool = False
    _packed: Optional[tuple] = field(default=None, repr=False, compare=False)

    def packed(self):
        """Concatenate all trees into flat arrays for the traversal kernel."""
        if self._packed is None:
            offs = np.cumsum([0] + [t.n_nodes for t in self.trees])
            shift = lambda a, o: np.where(a >= 0, a + o, -1)  # noqa: E731
            self._packed = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offs)]),
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offs)]),
                np.concatenate([t.value for t in self.trees]),
                offs[:-1].astype(np.int64),
            )
        return self._packed

    def to_text(self) -> str:
        """Flat debugging dump, one node per line.

        ``tree node split column threshold left right`` for internal nodes and
        ``tree node leaf fraction count`` for leaves.
        """
        lines = [f"# forest n_trees={len(self.trees)} n_columns={self.n_columns} "
                 f"seed={self.seed} degenerate={int(self.degenerate)}"]
        for ti, t in enumerate(self.trees):
            for i in range(t.n_nodes):
                if t.feature[i] < 0:
                    lines.append(f"{ti} {i} leaf {float(t.value[i])!r} {int(t.count[i])}")
                else:
                    lines.append(f"{ti} {i} split {int(t.feature[i])} {float(t.threshold[i])!r} "
                                 f"{int(t.left[i])} {int(t.right[i])}")
        return "\n".join(lines) + "\n"


@dataclass
class EncodedMatrix:
    """Per-column integer codes into the sorted distinct values of ``X``.

    Any subset of rows can be fitted against the same encoding: split search
    only visits codes present in a node, so thresholds are identical to those
    from encoding the subset alone.
    """

    codes: np.ndarray
    uniq: np.ndarray
    offsets: np.ndarray
    n_unique: np.ndarray

    @classmethod
    def from_matrix(cls, X) -> "EncodedMatrix":
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise TrainingError("training data must be a non-empty 2-D matrix with at least one column")
        codes, uniq, offsets, n_unique = _kernels.encode_columns(X)
        if n_unique.max() <= np.iinfo(np.int16).max:
            # halves the memory traffic of split search
            codes = codes.astype(np.int16)
        return cls(codes, uniq, offsets, n_unique)

    @property
    def n_columns(self) -> int:
        return self.codes.shape[0]


def n_candidate_columns(fraction: float, n_columns: int) -> int:
    return max(1, min(n_columns, math.ceil(fraction * n_columns - 1e-9)))


def _constant_model(prevalence: float, n: int, n_columns: int, hp: HyperParams, seed: int) -> ForestModel:
    leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                np.array([float(prevalence)]), np.array([n]))
    return ForestModel([leaf], n_columns, seed, hp, degenerate=True)


def fit_encoded(enc: EncodedMatrix, y, rows, hp: HyperParams, seed: int) -> ForestModel:
    """Fit on ``rows`` of an already encoded matrix; ``y`` is indexed by row."""
    y = np.asarray(y).astype(np.int8)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size < 2:
        raise TrainingError("need at least two training rows")
    prevalence = float(y[rows].mean())
    if prevalence in (0.0, 1.0):
        return _constant_model(prevalence, rows.size, enc.n_columns, hp, seed)
    m = n_candidate_columns(hp.max_features_fraction, enc.n_columns)
    max_depth = -1 if hp.max_depth is None else hp.max_depth
    trees = []
    for t in range(hp.n_trees):
        tree_seed = np.uint64(derive_seed(seed, "tree", t))
        arrays = _kernels.grow_tree(enc.codes, enc.uniq, enc.offsets, enc.n_unique, y, rows,
                                    hp.bootstrap, max_depth, hp.min_samples_leaf, m, tree_seed)
        trees.append(Tree(*arrays))
    return ForestModel(trees, enc.n_columns, seed, hp)


def fit_forest(X, y, hp: HyperParams, seed: int) -> ForestModel:
    """Grow ``hp.n_trees`` Gini trees; deterministic given ``seed``.

    A single-class ``y`` yields a one-leaf model predicting the prevalence,
    flagged ``degenerate``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise TrainingError("training data must be a non-empty 2-D matrix with at least one column")
    if y.shape != (X.shape[0],):
        raise TrainingError(f"label vector has shape {y.shape}, expected ({X.shape[0]},)")
    if not np.all((y == 0) | (y == 1)):
        raise TrainingError("labels must be binary 0/1")
    enc = EncodedMatrix.from_matrix(X)
    return fit_encoded(enc, y, np.arange(X.shape[0]), hp, seed)


def predict_proba(model: ForestModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_columns:
        raise PredictionError(f"expected {model.n_columns} columns, got shape {X.shape}")
    return _kernels.predict_forest(X, *model.packed())
