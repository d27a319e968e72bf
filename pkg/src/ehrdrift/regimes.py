"""Training regimes and their evaluation records.

Four ways of choosing training data for a test year:

* ``year_agnostic``: stratified 80/20 split of all years pooled;
* ``one_time``: a fixed early window (2001-2002 by default), one model per
  repeat scored on every later year;
* ``continuous``: every year before the test year;
* ``short_term``: only the year immediately before the test year.

Plus the saturation sweep (``one_time`` at several training fractions) and
single-concept ablations (Item-ID, one concept's item ids only).

Seeds: the train/test partition of a repeat depends on
``(master_seed, regime, task, test_year, repeat, fraction)`` but not on the
representation, so Item-ID and aggregated runs see the same stays and their
AUROCs can be paired. The model seed adds the representation and feature.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import multiprocessing as mp
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import metrics
from ._seeding import derive_seed, rng
from .learner import EncodedMatrix, FAST_SPACE, SearchSpace, TrainingError, fit_encoded, predict_proba
from .learner.search import random_search_encoded
from .pipeline import (AGGREGATED, ITEMID, AggregationMap, GridCache, PipelineError,
                       check_aligned, filter_cohort)

log = logging.getLogger(__name__)

YEAR_AGNOSTIC = "year_agnostic"
ONE_TIME = "one_time"
CONTINUOUS = "continuous"
SHORT_TERM = "short_term"
KINDS = (YEAR_AGNOSTIC, ONE_TIME, CONTINUOUS, SHORT_TERM)
TASKS = ("mortality", "los")

SIGNIFICANCE = 0.01
MIN_TRAIN_STAYS = 10

RESULT_COLUMNS = ["task", "representation", "regime", "train_years", "test_year", "repeat",
                  "train_fraction", "feature", "auroc", "auprc", "n_train", "n_test", "seed",
                  "status", "best_params"]
COMPARISON_COLUMNS = ["task", "regime", "test_year", "n_effective", "statistic", "p_value",
                      "significant"]


class RegimeError(ValueError):
    pass


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class RegimeSpec:
    kind: str
    task: str = "mortality"
    representation: str = AGGREGATED
    test_years: tuple = ()
    train_years: tuple = (2001, 2002)  # used by one_time only
    n_repeats: int = 20
    train_fraction: float = 1.0
    feature_subset: Optional[tuple] = None  # concept names
    master_seed: int = 0
    search: SearchSpace = FAST_SPACE
    cv_folds: int = 5
    test_fraction: float = 0.2           # year_agnostic hold-out share
    repeats: Optional[tuple] = None      # subset of repeat indices to run

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RegimeError(f"unknown regime kind {self.kind!r}")
        if self.task not in TASKS:
            raise RegimeError(f"unknown task {self.task!r}")
        if self.representation not in (ITEMID, AGGREGATED):
            raise RegimeError(f"unknown representation {self.representation!r}")
        if self.n_repeats < 1:
            raise RegimeError("n_repeats must be positive")
        if not 0 < self.train_fraction <= 1:
            raise RegimeError("train_fraction must lie in (0, 1]")
        if self.kind == ONE_TIME:
            if not self.train_years:
                raise RegimeError("one_time needs train_years")
            if self.test_years and min(self.test_years) <= max(self.train_years):
                raise RegimeError("one_time train_years must precede every test year")

    def repeat_indices(self) -> list:
        if self.repeats is None:
            return list(range(self.n_repeats))
        # a restriction selects from the regular repeats, never beyond them
        return sorted(set(self.repeats) & set(range(self.n_repeats)))

    def replace(self, **changes) -> "RegimeSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class EvalRecord:
    task: str
    representation: str
    regime: str
    train_years: tuple
    test_year: Optional[int]  # None for the pooled year-agnostic split
    repeat: int
    auroc: float
    auprc: float
    n_train: int
    n_test: int
    seed: int
    best_params: str = ""
    train_fraction: float = 1.0
    feature: Optional[str] = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def sort_key(self):
        return (self.task, self.representation, self.regime, self.train_fraction,
                self.feature or "", -1 if self.test_year is None else self.test_year, self.repeat)

    def row(self) -> dict:
        return {
            "task": self.task,
            "representation": self.representation,
            "regime": self.regime,
            "train_years": format_years(self.train_years),
            "test_year": "all" if self.test_year is None else str(self.test_year),
            "repeat": self.repeat,
            "train_fraction": repr(float(self.train_fraction)),
            "feature": self.feature or "",
            "auroc": _fmt(self.auroc),
            "auprc": _fmt(self.auprc),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "status": self.status,
            "best_params": self.best_params,
        }


def _fmt(x: float) -> str:
    return "" if x is None or math.isnan(x) else repr(float(x))


def format_years(years: Sequence[int]) -> str:
    years = sorted(set(int(y) for y in years))
    if not years:
        return ""
    if len(years) > 1 and years == list(range(years[0], years[-1] + 1)):
        return f"{years[0]}-{years[-1]}"
    return ";".join(str(y) for y in years)


def parse_years(text: str) -> tuple:
    text = str(text).strip()
    if not text:
        return ()
    out = []
    for part in text.replace(",", ";").split(";"):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


# ---------------------------------------------------------------- cohort

class Cohort:
    """Filtered stays and events plus lazily built grids per representation."""

    def __init__(self, stays: pd.DataFrame, events: pd.DataFrame, agg_map: AggregationMap,
                 changeover_year: Optional[int] = None):
        kept = filter_cohort(stays)
        if len(kept) < len(stays):
            log.info("inclusion filter removed %d of %d stays", len(stays) - len(kept), len(stays))
        self.stays = kept.sort_values("stay_id", kind="mergesort").reset_index(drop=True)
        self.events = events
        self.agg_map = agg_map
        self.changeover_year = changeover_year
        self.years = self.stays["admit_year"].to_numpy(dtype=np.int64)
        self._grids: dict = {}

    def grids(self, representation: str) -> GridCache:
        if representation not in self._grids:
            self._grids[representation] = GridCache(self.stays, self.events, representation,
                                                    self.agg_map if representation == AGGREGATED else None)
        return self._grids[representation]

    def labels(self, task: str) -> np.ndarray:
        if task == "mortality":
            return self.stays["mortality"].to_numpy(dtype=np.int64)
        return (self.stays["los_days"].to_numpy(dtype=float) >= 3.0).astype(np.int64)

    def rows_in_years(self, years) -> np.ndarray:
        return np.flatnonzero(np.isin(self.years, list(years)))

    @property
    def all_years(self) -> list:
        return sorted(set(self.years.tolist()))


# ---------------------------------------------------------------- sampling

def stratified_subsample(rows: np.ndarray, labels: np.ndarray, fraction: float,
                         gen: np.random.Generator) -> np.ndarray:
    """``floor(fraction * len(rows))`` rows keeping the positive share.

    The positive count is ``round(fraction * positives)``, so it stays within
    one of the exact proportional count.
    """
    rows = np.asarray(rows)
    if fraction >= 1.0:
        return np.sort(rows)
    y = labels[rows]
    pos, neg = rows[y == 1], rows[y == 0]
    n_total = int(math.floor(fraction * len(rows) + 1e-9))
    n_pos = min(len(pos), n_total, int(round(fraction * len(pos))))
    n_neg = min(len(neg), n_total - n_pos)
    n_pos = n_total - n_neg
    pick = np.concatenate([gen.permutation(pos)[:n_pos], gen.permutation(neg)[:n_neg]])
    return np.sort(pick)


def stratified_split(rows: np.ndarray, labels: np.ndarray, test_fraction: float,
                     gen: np.random.Generator):
    """Per-class random split; each class sends ``round(test_fraction * n_c)`` to test."""
    train, test = [], []
    for cls in (0, 1):
        r = gen.permutation(rows[labels[rows] == cls])
        n_test = int(round(test_fraction * len(r)))
        test.append(r[:n_test])
        train.append(r[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


# ---------------------------------------------------------------- one unit

def _restrict(cohort: Cohort, spec: RegimeSpec):
    if spec.feature_subset is None:
        return None
    missing = [c for c in spec.feature_subset if c not in cohort.agg_map]
    if missing:
        raise RegimeError(f"unknown concept {missing[0]!r}")
    if spec.representation == AGGREGATED:
        return list(spec.feature_subset)
    return sorted(i for c in spec.feature_subset for i in cohort.agg_map.itemids(c))


def partition_seed(spec: RegimeSpec, repeat: int, test_year: Optional[int]) -> int:
    return derive_seed(spec.master_seed, spec.kind, spec.task, test_year, repeat,
                       float(spec.train_fraction))


def model_seed(spec: RegimeSpec, part_seed: int) -> int:
    feature = ",".join(spec.feature_subset) if spec.feature_subset else None
    return derive_seed(part_seed, spec.representation, feature)


def _fit_and_score(cohort: Cohort, spec: RegimeSpec, train_rows, test_sets, repeat: int,
                   train_years, seed: int) -> list:
    """Select, fit and score one model; one record per ``(test_year, rows)``."""
    feature = ",".join(spec.feature_subset) if spec.feature_subset else None

    def record(test_year, n_test, auroc=float("nan"), auprc=float("nan"), status="ok", params=""):
        return EvalRecord(spec.task, spec.representation, spec.kind, tuple(train_years), test_year,
                          repeat, auroc, auprc, int(len(train_rows)), int(n_test), seed, params,
                          spec.train_fraction, feature, status)

    y_all = cohort.labels(spec.task)
    try:
        if len(train_rows) < MIN_TRAIN_STAYS:
            raise TrainingError(f"only {len(train_rows)} training stays")
        if len(np.unique(y_all[train_rows])) < 2:
            raise TrainingError("single-class training labels")
        grids = cohort.grids(spec.representation)
        columns = grids.universe(train_rows, _restrict(cohort, spec))
        fill = grids.fill_stats(train_rows, columns)
        train = grids.matrix(train_rows, fill)
        X = train.values
        y = y_all[train_rows]
        enc = EncodedMatrix.from_matrix(X)
        all_rows = np.arange(len(y))
        search = random_search_encoded(enc, X, y, all_rows, spec.search, spec.cv_folds,
                                       derive_seed(seed, "search"))
        model = fit_encoded(enc, y, all_rows, search.best, derive_seed(seed, "final"))
    except (TrainingError, PipelineError, metrics.MetricError) as exc:
        log.warning("%s/%s/%s repeat %d degenerate: %s", spec.task, spec.representation,
                    spec.kind, repeat, exc)
        return [record(ty, len(rows), status=f"degenerate: {exc}") for ty, rows in test_sets]

    params = search.best.describe()
    out = []
    for test_year, rows in test_sets:
        test = grids.matrix(rows, fill)
        check_aligned(train, test)
        scores = predict_proba(model, test.values)
        labels = y_all[rows]
        try:
            out.append(record(test_year, len(rows), metrics.auroc(scores, labels),
                              metrics.auprc(scores, labels), params=params))
        except metrics.MetricError as exc:
            out.append(record(test_year, len(rows), status=f"degenerate: {exc}", params=params))
    return out


def _unit(cohort: Cohort, spec: RegimeSpec, repeat: int, test_year: Optional[int]) -> list:
    """Records for one (spec, repeat[, test year]) cell of the experiment grid."""
    y = cohort.labels(spec.task)
    if spec.kind == YEAR_AGNOSTIC:
        pseed = partition_seed(spec, repeat, None)
        gen = rng(pseed, "split")
        train, test = stratified_split(np.arange(len(y)), y, spec.test_fraction, gen)
        train = stratified_subsample(train, y, spec.train_fraction, gen)
        return _fit_and_score(cohort, spec, train, [(None, test)], repeat, cohort.all_years,
                              model_seed(spec, pseed))
    if spec.kind == ONE_TIME:
        pseed = partition_seed(spec, repeat, None)
        pool = cohort.rows_in_years(spec.train_years)
        train = stratified_subsample(pool, y, spec.train_fraction, rng(pseed, "subsample"))
        tests = [(ty, cohort.rows_in_years([ty])) for ty in spec.test_years]
        if len(train) == 0:
            raise RegimeError(f"empty training pool for years {spec.train_years}")
        return _fit_and_score(cohort, spec, train, tests, repeat, spec.train_years,
                              model_seed(spec, pseed))
    if spec.kind in (CONTINUOUS, SHORT_TERM):
        pseed = partition_seed(spec, repeat, test_year)
        if spec.kind == CONTINUOUS:
            train_years = [yr for yr in cohort.all_years if yr < test_year]
        else:
            train_years = [test_year - 1]
        pool = cohort.rows_in_years(train_years)
        if len(pool) == 0:
            raise RegimeError(f"no stays before test year {test_year}")
        train = stratified_subsample(pool, y, spec.train_fraction, rng(pseed, "subsample"))
        tests = [(test_year, cohort.rows_in_years([test_year]))]
        return _fit_and_score(cohort, spec, train, tests, repeat, train_years,
                              model_seed(spec, pseed))
    raise RegimeError(f"unknown regime kind {spec.kind!r}")


def units_for(spec: RegimeSpec) -> list:
    if spec.kind in (CONTINUOUS, SHORT_TERM):
        return [(spec, r, ty) for ty in spec.test_years for r in spec.repeat_indices()]
    return [(spec, r, None) for r in spec.repeat_indices()]


# ---------------------------------------------------------------- execution

_WORKER_COHORT: Optional[Cohort] = None


def _run_in_worker(unit):
    spec, repeat, test_year = unit
    return _unit(_WORKER_COHORT, spec, repeat, test_year)


def execute(cohort: Cohort, units: list, jobs: int = 1) -> list:
    """Run experiment-grid cells, serially or across forked workers.

    Output is sorted by :meth:`EvalRecord.sort_key`, so it does not depend on
    ``jobs`` or on completion order.
    """
    global _WORKER_COHORT
    records: list = []
    if jobs <= 1 or len(units) <= 1:
        for spec, repeat, test_year in units:
            records.extend(_unit(cohort, spec, repeat, test_year))
    else:
        # grids are built before forking so workers share them copy-on-write
        for rep in sorted({u[0].representation for u in units}):
            cohort.grids(rep)
        _WORKER_COHORT = cohort
        try:
            with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("fork")) as pool:
                for recs in pool.map(_run_in_worker, units):
                    records.extend(recs)
        finally:
            _WORKER_COHORT = None
    return sorted(records, key=EvalRecord.sort_key)


def _check_kind(spec: RegimeSpec, kind: str):
    if spec.kind != kind:
        raise RegimeError(f"expected a {kind} spec, got {spec.kind}")


def _check_prior_years(cohort: Cohort, spec: RegimeSpec):
    first = min(cohort.all_years)
    for ty in spec.test_years:
        if ty <= first:
            raise RegimeError(f"test year {ty} has no earlier year to train on")


def run_year_agnostic(cohort: Cohort, spec: RegimeSpec, jobs: int = 1) -> list:
    _check_kind(spec, YEAR_AGNOSTIC)
    return execute(cohort, units_for(spec), jobs)


def run_one_time(cohort: Cohort, spec: RegimeSpec, jobs: int = 1) -> list:
    _check_kind(spec, ONE_TIME)
    return execute(cohort, units_for(spec), jobs)


def run_continuous(cohort: Cohort, spec: RegimeSpec, jobs: int = 1) -> list:
    _check_kind(spec, CONTINUOUS)
    _check_prior_years(cohort, spec)
    return execute(cohort, units_for(spec), jobs)


def run_short_term(cohort: Cohort, spec: RegimeSpec, jobs: int = 1) -> list:
    _check_kind(spec, SHORT_TERM)
    _check_prior_years(cohort, spec)
    return execute(cohort, units_for(spec), jobs)


def saturation_specs(spec: RegimeSpec, fractions: Sequence[float]) -> list:
    _check_kind(spec, ONE_TIME)
    for f in fractions:
        if not 0 < f <= 1:
            raise RegimeError(f"fraction {f} outside (0, 1]")
    return [spec.replace(train_fraction=float(f)) for f in fractions]


def run_saturation(cohort: Cohort, spec: RegimeSpec, fractions: Sequence[float], jobs: int = 1) -> list:
    """The one-time regime once per training fraction."""
    units = [u for s in saturation_specs(spec, fractions) for u in units_for(s)]
    return execute(cohort, units, jobs)


def ablation_specs(cohort: Cohort, spec: RegimeSpec, concepts: Sequence[str],
                   n_repeats: Optional[int] = 5) -> list:
    _check_kind(spec, ONE_TIME)
    out = []
    for c in concepts:
        if c not in cohort.agg_map:
            raise RegimeError(f"unknown concept {c!r}")
        changes = dict(representation=ITEMID, feature_subset=(c,))
        if n_repeats is not None:
            changes["n_repeats"] = n_repeats
        out.append(spec.replace(**changes))
    return out


def run_ablation(cohort: Cohort, spec: RegimeSpec, concepts: Sequence[str],
                 n_repeats: Optional[int] = 5, jobs: int = 1) -> list:
    """Item-ID one-time models restricted to a single concept's item ids."""
    units = [u for s in ablation_specs(cohort, spec, concepts, n_repeats) for u in units_for(s)]
    return execute(cohort, units, jobs)


def run(cohort: Cohort, spec: RegimeSpec, jobs: int = 1) -> list:
    return {YEAR_AGNOSTIC: run_year_agnostic, ONE_TIME: run_one_time,
            CONTINUOUS: run_continuous, SHORT_TERM: run_short_term}[spec.kind](cohort, spec, jobs)


# ---------------------------------------------------------------- comparison

@dataclass
class YearComparison:
    test_year: Optional[int]
    result: Optional[metrics.TestResult]
    error: Optional[str] = None
    threshold: float = SIGNIFICANCE

    @property
    def significant(self) -> bool:
        return self.result is not None and self.result.p_value < self.threshold


def compare(records_a: Sequence[EvalRecord], records_b: Sequence[EvalRecord],
            threshold: float = SIGNIFICANCE) -> list:
    """Per test year, Wilcoxon signed-rank test on AUROCs paired by repeat.

    Pairs with a degenerate side are left out, so ``n_effective`` reflects
    them. A year whose differences are all zero yields ``error`` set and no
    result.
    """
    def index(records):
        out = {}
        for r in records:
            key = (r.test_year, r.repeat)
            if key in out:
                raise ComparisonError(f"duplicate record for test year {r.test_year}, repeat {r.repeat}")
            out[key] = r
        return out

    ia, ib = index(records_a), index(records_b)
    if set(ia) != set(ib):
        extra = sorted(set(ia) ^ set(ib), key=lambda k: (-1 if k[0] is None else k[0], k[1]))
        raise ComparisonError(f"unpaired records, e.g. test year/repeat {extra[0]}")
    by_year = defaultdict(list)
    for key in ia:
        by_year[key[0]].append(key)
    out = []
    for year in sorted(by_year, key=lambda y: -1 if y is None else y):
        keys = sorted(by_year[year], key=lambda k: k[1])
        a = np.array([ia[k].auroc for k in keys], dtype=float)
        b = np.array([ib[k].auroc for k in keys], dtype=float)
        keep = ~(np.isnan(a) | np.isnan(b))
        try:
            if not keep.any():
                raise metrics.MetricError("no non-degenerate pairs")
            res = metrics.wilcoxon_signed_rank(a[keep], b[keep])
            out.append(YearComparison(year, res, None, threshold))
        except metrics.MetricError as exc:
            out.append(YearComparison(year, None, str(exc), threshold))
    return out


def comparison_rows(task: str, regime: str, comparisons: Sequence[YearComparison]) -> list:
    rows = []
    for c in comparisons:
        r = c.result
        rows.append({
            "task": task,
            "regime": regime,
            "test_year": "all" if c.test_year is None else str(c.test_year),
            "n_effective": "" if r is None else r.n_effective,
            "statistic": "" if r is None else repr(float(r.statistic)),
            "p_value": "" if r is None else repr(float(r.p_value)),
            "significant": int(c.significant),
        })
    return rows


def representation_comparisons(records: Sequence[EvalRecord], threshold: float = SIGNIFICANCE) -> list:
    """Aggregated vs Item-ID for each (task, regime) run under both, full training data."""
    groups = defaultdict(lambda: defaultdict(list))
    for r in records:
        if r.feature is None and r.train_fraction == 1.0:
            groups[(r.task, r.regime)][r.representation].append(r)
    rows = []
    for (task, regime) in sorted(groups):
        reps = groups[(task, regime)]
        if AGGREGATED in reps and ITEMID in reps:
            rows.extend(comparison_rows(task, regime, compare(reps[AGGREGATED], reps[ITEMID], threshold)))
    return rows


def records_frame(records: Sequence[EvalRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in sorted(records, key=EvalRecord.sort_key)],
                        columns=RESULT_COLUMNS)


def mean_auroc(records: Sequence[EvalRecord], years=None) -> float:
    vals = [r.auroc for r in records if r.ok and (years is None or r.test_year in years)]
    return float(np.mean(vals)) if vals else float("nan")


def mean_by_year(records: Sequence[EvalRecord]) -> dict:
    acc = defaultdict(list)
    for r in records:
        if r.ok:
            acc[r.test_year].append(r.auroc)
    return {y: float(np.mean(v)) for y, v in acc.items()}
