"""Stratified k-fold cross-validation and random hyperparameter search."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import metrics
from .._seeding import derive_seed, rng
from .forest import EncodedMatrix, HyperParams, TrainingError, fit_encoded, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    n_trees: Sequence[int] = (50, 100, 200)
    max_depth: Sequence[Optional[int]] = (4, 8, 16, None)
    min_samples_leaf: Sequence[int] = (1, 5, 20)
    max_features_fraction: Sequence[float] = (0.1, 0.33, 1.0)
    bootstrap: Sequence[bool] = (True,)
    n_iter: int = 12

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_samples_leaf", "max_features_fraction", "bootstrap"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"search space has no candidates for {name}")
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")

    def grid(self) -> list[HyperParams]:
        return [HyperParams(*combo) for combo in itertools.product(
            self.n_trees, self.max_depth, self.min_samples_leaf,
            self.max_features_fraction, self.bootstrap)]

    def sample(self, seed: int) -> list[HyperParams]:
        """``n_iter`` uniformly drawn combinations, without replacement while
        the grid is large enough."""
        grid = self.grid()
        gen = rng(seed, "search-sample")
        if self.n_iter <= len(grid):
            idx = gen.choice(len(grid), size=self.n_iter, replace=False)
        else:
            idx = gen.integers(0, len(grid), size=self.n_iter)
        return [grid[i] for i in idx]


# desk-scale preset for smoke runs and the acceptance suite
FAST_SPACE = SearchSpace(n_trees=(30,), max_depth=(6, 8), min_samples_leaf=(10,),
                         max_features_fraction=(0.05, 0.1), n_iter=2)


def stratified_folds(y, k: int, seed: int) -> list[np.ndarray]:
    """Shuffled, class-stratified partition of ``range(len(y))`` into ``k`` folds."""
    y = np.asarray(y)
    gen = rng(seed, "folds")
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        gen.shuffle(idx)
        # deal round-robin, continuing where the previous class stopped
        for i, row in enumerate(idx):
            folds[(offset + i) % k].append(row)
        offset = (offset + len(idx)) % k
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def _check_cv_labels(y, k: int):
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if min(n_pos, n_neg) < k:
        raise TrainingError(f"cross-validation needs >= {k} members per class, "
                            f"got {n_pos} positive / {n_neg} negative")


def cross_val_auroc_encoded(enc: EncodedMatrix, X, y, rows, hp: HyperParams, k: int, seed: int,
                            folds=None) -> float:
    y = np.asarray(y)
    rows = np.asarray(rows, dtype=np.int64)
    if folds is None:
        _check_cv_labels(y[rows], k)
        folds = stratified_folds(y[rows], k, seed)
    scores = []
    for f, held in enumerate(folds):
        train_mask = np.ones(rows.size, dtype=bool)
        train_mask[held] = False
        model = fit_encoded(enc, y, rows[train_mask], hp, derive_seed(seed, "fold", f))
        held_rows = rows[held]
        s = predict_proba(model, X[held_rows])
        scores.append(metrics.auroc(s, y[held_rows]))
    return float(np.mean(scores))


def cross_val_auroc(X, y, hp: HyperParams, k: int = 5, seed: int = 0) -> float:
    """Mean held-out AUROC over ``k`` stratified folds."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    enc = EncodedMatrix.from_matrix(X)
    return cross_val_auroc_encoded(enc, X, y, np.arange(len(y)), hp, k, seed)


@dataclass
class SearchResult:
    best: HyperParams
    best_score: float
    candidates: list = field(default_factory=list)
    scores: list = field(default_factory=list)


def random_search_encoded(enc: EncodedMatrix, X, y, rows, space: SearchSpace, k: int,
                          seed: int) -> SearchResult:
    y = np.asarray(y)
    rows = np.asarray(rows, dtype=np.int64)
    _check_cv_labels(y[rows], k)
    folds = stratified_folds(y[rows], k, seed)
    candidates = space.sample(seed)
    scores: list = []
    errors = []
    for i, hp in enumerate(candidates):
        try:
            scores.append(cross_val_auroc_encoded(enc, X, y, rows, hp, k,
                                                  derive_seed(seed, "candidate", i), folds=folds))
        except (TrainingError, metrics.MetricError) as exc:
            log.warning("candidate %s failed: %s", hp.describe(), exc)
            errors.append(exc)
            scores.append(None)
    valid = [(s, i) for i, s in enumerate(scores) if s is not None]
    if not valid:
        raise TrainingError(f"all {len(candidates)} search candidates failed: {errors[0]}")
    # earliest sampled wins ties
    best_score = max(s for s, _ in valid)
    best_i = min(i for s, i in valid if s == best_score)
    return SearchResult(candidates[best_i], best_score, candidates, scores)


def random_search(X, y, space: SearchSpace, k: int = 5, seed: int = 0) -> tuple[HyperParams, float]:
    """Pick the sampled candidate with the highest mean CV AUROC."""
    X = np.asarray(X, dtype=np.float64)
    enc = EncodedMatrix.from_matrix(X)
    res = random_search_encoded(enc, X, y, np.arange(len(y)), space, k, seed)
    return res.best, res.best_score
