"""From raw chart events to fixed-width feature rows.

Events are averaged into 24 hourly buckets per stay, keyed either by raw
item id or by clinical concept (pooling every item id the concept covers),
then expanded into three channels per bucket: forward-filled value,
observation mask, and hours since the last observation.

The Item-ID column universe is whatever item ids the *training* stays
recorded. Test stays charted under a different vocabulary therefore arrive
with all-empty masks; this is the degradation mechanism under study, not a
bug.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

HOURS = 24
CHANNELS = ("value", "mask", "delta")
ITEMID = "itemid"
AGGREGATED = "aggregated"
REPRESENTATIONS = (ITEMID, AGGREGATED)
DEMOGRAPHICS = ("age",)
LOS_THRESHOLD_DAYS = 3.0


class PipelineError(ValueError):
    pass


class AggregationMap:
    """Concept name -> disjoint, non-empty set of item ids."""

    def __init__(self, entries: Mapping[str, Iterable[int]]):
        self.entries: dict = {}
        owner: dict = {}
        for name in sorted(entries):
            ids = frozenset(int(i) for i in entries[name])
            if not ids:
                raise PipelineError(f"concept {name!r} has no item ids")
            for i in ids:
                if i in owner:
                    raise PipelineError(f"item id {i} mapped to both {owner[i]!r} and {name!r}")
                owner[i] = name
            self.entries[str(name)] = ids
        self._owner = owner

    @property
    def concepts(self) -> list:
        return sorted(self.entries)

    def concept_of(self, itemid: int) -> Optional[str]:
        return self._owner.get(int(itemid))

    def itemids(self, concept: str) -> frozenset:
        return self.entries[concept]

    def __contains__(self, concept) -> bool:
        return concept in self.entries

    def __eq__(self, other) -> bool:
        return isinstance(other, AggregationMap) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"AggregationMap({len(self.entries)} concepts, {len(self._owner)} item ids)"

    def to_frame(self) -> pd.DataFrame:
        rows = [(c, i) for c in self.concepts for i in sorted(self.entries[c])]
        return pd.DataFrame(rows, columns=["concept", "itemid"])

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "AggregationMap":
        entries: dict = {}
        for concept, itemid in zip(df["concept"], df["itemid"]):
            entries.setdefault(str(concept), set()).add(int(itemid))
        return cls(entries)


Keying = Union[str, AggregationMap]


def _representation(keying: Keying) -> str:
    if isinstance(keying, AggregationMap):
        return AGGREGATED
    if keying == ITEMID:
        return ITEMID
    raise PipelineError(f"unknown keying {keying!r}")


# ---------------------------------------------------------------- cohort filter

def filter_cohort(stays: pd.DataFrame) -> pd.DataFrame:
    """Keep first ICU stays of patients older than 15 with >= 36 ICU hours.

    When a ``subject_id`` column is present, only the lowest ``stay_id`` per
    subject survives. Input order is preserved.
    """
    keep = (stays["age"] > 15) & (stays["icu_hours"] >= 36)
    if "subject_id" in stays.columns:
        first = stays.groupby("subject_id")["stay_id"].transform("min")
        keep &= stays["stay_id"] == first
    return stays.loc[keep]


def los_label(los_days) -> np.ndarray:
    return (np.asarray(los_days, dtype=float) >= LOS_THRESHOLD_DAYS).astype(np.int64)


# ---------------------------------------------------------------- hourly grids

@dataclass
class HourlyGrid:
    stay_id: int
    columns: list
    cells: np.ndarray  # (24, n_columns), NaN where nothing was recorded
    dropped: int = 0   # events whose item id had no column

    def column(self, key) -> np.ndarray:
        return self.cells[:, self.columns.index(key)]


@dataclass
class ImputedGrid:
    stay_id: int
    columns: list
    value: np.ndarray
    mask: np.ndarray
    delta: np.ndarray


@dataclass
class FillStats:
    """Per-column default used before a column's first observation."""

    columns: list
    defaults: dict = field(default_factory=dict)

    def vector(self) -> np.ndarray:
        missing = [c for c in self.columns if c not in self.defaults]
        if missing:
            raise PipelineError(f"no fill default for column {missing[0]!r}")
        return np.array([self.defaults[c] for c in self.columns], dtype=np.float64)


def _column_index(events: pd.DataFrame, keying: Keying, columns: Sequence) -> np.ndarray:
    """Column position of every event, -1 when the event has no column."""
    itemids = events["itemid"].to_numpy(dtype=np.int64)
    if _representation(keying) == ITEMID:
        keys = np.asarray(columns, dtype=np.int64)
        if keys.size == 0:
            return np.full(len(itemids), -1, dtype=np.int64)
        order = np.argsort(keys)
        sorted_keys = keys[order]
        pos = np.clip(np.searchsorted(sorted_keys, itemids), 0, len(keys) - 1)
        return np.where(sorted_keys[pos] == itemids, order[pos], -1)
    col_of = {c: i for i, c in enumerate(columns)}
    lookup = {i: col_of.get(c, -1) for i, c in keying._owner.items()}
    uniq, inv = np.unique(itemids, return_inverse=True)
    return np.array([lookup.get(int(u), -1) for u in uniq], dtype=np.int64)[inv]


def default_columns(events: pd.DataFrame, keying: Keying) -> list:
    """Item ids present in ``events`` (numeric order) or the map's concepts."""
    if _representation(keying) == ITEMID:
        return [int(i) for i in np.unique(events["itemid"].to_numpy(dtype=np.int64))]
    return keying.concepts


def hourly_tensor(stay_ids, events: pd.DataFrame, keying: Keying, columns: Sequence):
    """Hourly means for many stays at once.

    Returns ``(cells, dropped)`` with ``cells`` of shape
    ``(len(stay_ids), 24, len(columns))``. Values inside a bucket are summed
    in sorted order, so event order never changes a cell.
    """
    stay_ids = np.asarray(stay_ids, dtype=np.int64)
    n, k = len(stay_ids), len(columns)
    cells = np.full((n, HOURS, k), np.nan)
    if len(events) == 0 or n == 0 or k == 0:
        return cells, 0
    ev_stay = events["stay_id"].to_numpy(dtype=np.int64)
    order = np.argsort(stay_ids, kind="mergesort")
    pos = np.clip(np.searchsorted(stay_ids[order], ev_stay), 0, n - 1)
    known_stay = stay_ids[order][pos] == ev_stay
    row = order[pos]
    col = _column_index(events, keying, columns)
    hour = events["hour"].to_numpy(dtype=np.int64)
    if np.any((hour < 0) | (hour >= HOURS)):
        raise PipelineError("event hour outside [0, 24)")
    val = events["value"].to_numpy(dtype=np.float64)
    dropped = int(np.sum(known_stay & (col < 0)))
    ok = known_stay & (col >= 0)
    flat = (row[ok] * HOURS + hour[ok]) * k + col[ok]
    val = val[ok]
    srt = np.lexsort((val, flat))
    flat, val = flat[srt], val[srt]
    size = n * HOURS * k
    sums = np.bincount(flat, weights=val, minlength=size)
    counts = np.bincount(flat, minlength=size)
    seen = counts > 0
    out = cells.reshape(-1)
    out[seen] = sums[seen] / counts[seen]
    return cells, dropped


def bucket_hourly(events: pd.DataFrame, stay_id: int, keying: Keying,
                  columns: Optional[Sequence] = None) -> HourlyGrid:
    """Average one stay's events into hourly buckets.

    ``keying`` is ``"itemid"`` or an :class:`AggregationMap`; under a map, all
    member item ids recorded in the same hour are pooled before averaging and
    events of unmapped item ids are dropped and counted.
    """
    ev = events[events["stay_id"] == stay_id]
    if columns is None:
        columns = default_columns(ev, keying)
    cells, dropped = hourly_tensor([stay_id], ev, keying, columns)
    if dropped:
        log.debug("stay %s: dropped %d events without a column", stay_id, dropped)
    return HourlyGrid(int(stay_id), list(columns), cells[0], dropped)


# ---------------------------------------------------------------- imputation

def _forward_fill(cells: np.ndarray):
    """Forward-filled values (NaN before first sighting), mask and delta.

    ``cells`` has hours on axis -2. ``delta`` counts hours since the last
    observation, with hour -1 as the reference when nothing was seen yet.
    """
    mask = ~np.isnan(cells)
    hours = np.arange(HOURS).reshape((HOURS, 1))
    last = np.where(mask, hours, -1)
    last = np.maximum.accumulate(last, axis=-2)
    delta = (hours - last).astype(np.int64)
    ffill = np.take_along_axis(np.where(mask, cells, np.nan), np.maximum(last, 0), axis=-2)
    ffill[last < 0] = np.nan
    return ffill, mask, delta


def impute_simple(grid: HourlyGrid, fill: FillStats) -> ImputedGrid:
    missing = [c for c in grid.columns if c not in fill.defaults]
    if missing:
        raise PipelineError(f"no fill default for column {missing[0]!r}")
    defaults = np.array([fill.defaults[c] for c in grid.columns], dtype=np.float64)
    ffill, mask, delta = _forward_fill(grid.cells)
    value = np.where(np.isnan(ffill), defaults, ffill)
    return ImputedGrid(grid.stay_id, list(grid.columns), value, mask.astype(np.int64), delta)


def compute_fill_stats(grids: Sequence[HourlyGrid]) -> FillStats:
    """Mean of observed hourly cells per column over the given training grids."""
    if not grids:
        raise PipelineError("fill statistics need at least one training grid")
    columns = list(grids[0].columns)
    for g in grids[1:]:
        if list(g.columns) != columns:
            raise PipelineError("training grids disagree on column order")
    stacked = np.stack([g.cells for g in grids])
    return _fill_from_cells(stacked, columns)


def _fill_from_cells(cells: np.ndarray, columns: Sequence) -> FillStats:
    mask = ~np.isnan(cells)
    n_obs = mask.sum(axis=(0, 1))
    total = np.where(mask, cells, 0.0).sum(axis=(0, 1))
    mean = np.divide(total, n_obs, out=np.zeros(len(columns)), where=n_obs > 0)
    return FillStats(list(columns), {c: float(m) for c, m in zip(columns, mean)})


# ---------------------------------------------------------------- matrices

def feature_names(columns: Sequence) -> list:
    names = [f"{key}_h{t:02d}_{ch}" for key in columns for t in range(HOURS) for ch in CHANNELS]
    return names + list(DEMOGRAPHICS)


@dataclass
class FeatureMatrix:
    stay_ids: np.ndarray
    columns: list          # grid column keys
    column_names: list     # flattened feature names
    values: np.ndarray     # (n_stays, 72 * len(columns) + 1)
    mortality: np.ndarray
    los: np.ndarray
    dropped_events: int = 0

    def label(self, task: str) -> np.ndarray:
        if task == "mortality":
            return self.mortality
        if task == "los":
            return self.los
        raise PipelineError(f"unknown task {task!r}")

    def channel(self, name: str) -> np.ndarray:
        """View of one channel as ``(n_stays, n_columns, 24)``."""
        k = len(self.columns)
        grid = self.values[:, : k * HOURS * 3].reshape(len(self.values), k, HOURS, 3)
        return grid[..., CHANNELS.index(name)]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.column_names)
        df.insert(0, "stay_id", self.stay_ids)
        df["mortality"] = self.mortality
        df["los"] = self.los
        return df


def _flatten(ffill, mask, delta, defaults, age) -> np.ndarray:
    value = np.where(np.isnan(ffill), defaults, ffill)
    stacked = np.stack([value, mask.astype(np.float64), delta.astype(np.float64)], axis=-1)
    # (n, 24, k, 3) -> (n, k, 24, 3): column-major by key, then hour, then channel
    flat = stacked.transpose(0, 2, 1, 3).reshape(len(value), -1)
    return np.concatenate([flat, np.asarray(age, dtype=np.float64).reshape(-1, 1)], axis=1)


def build_matrix(stays: pd.DataFrame, events: pd.DataFrame, representation: str,
                 agg_map: Optional[AggregationMap], fill: FillStats) -> FeatureMatrix:
    """One flattened feature row per stay, in the order of ``stays``.

    ``fill.columns`` fixes the column universe; events outside it are
    dropped (and counted), which is how test-time unknown item ids vanish.
    """
    keying: Keying = ITEMID if representation == ITEMID else agg_map
    if representation == AGGREGATED and agg_map is None:
        raise PipelineError("the aggregated representation needs an aggregation map")
    if representation not in REPRESENTATIONS:
        raise PipelineError(f"unknown representation {representation!r}")
    stay_ids = stays["stay_id"].to_numpy(dtype=np.int64)
    cells, dropped = hourly_tensor(stay_ids, events, keying, fill.columns)
    if dropped:
        log.info("dropped %d events outside the %d-column universe", dropped, len(fill.columns))
    ffill, mask, delta = _forward_fill(cells)
    values = _flatten(ffill, mask, delta, fill.vector(), stays["age"].to_numpy())
    return FeatureMatrix(stay_ids, list(fill.columns), feature_names(fill.columns), values,
                         stays["mortality"].to_numpy(dtype=np.int64),
                         los_label(stays["los_days"]), dropped)


def check_aligned(train: FeatureMatrix, test: FeatureMatrix) -> None:
    if train.column_names != test.column_names:
        raise PipelineError("train and test matrices have different column universes")


class GridCache:
    """Hourly grids of a whole cohort under one representation, built once.

    Item-ID grids hold every item id in the cohort; selecting a training
    universe later is a column subset, equivalent to building with that
    universe and dropping the rest.
    """

    def __init__(self, stays: pd.DataFrame, events: pd.DataFrame, representation: str,
                 agg_map: Optional[AggregationMap] = None):
        if representation == AGGREGATED and agg_map is None:
            raise PipelineError("the aggregated representation needs an aggregation map")
        self.representation = representation
        self.agg_map = agg_map
        keying: Keying = ITEMID if representation == ITEMID else agg_map
        self.stays = stays.reset_index(drop=True)
        self.stay_ids = self.stays["stay_id"].to_numpy(dtype=np.int64)
        self.columns = default_columns(events, keying)
        cells, self.dropped = hourly_tensor(self.stay_ids, events, keying, self.columns)
        self.ffill, mask, delta = _forward_fill(cells)
        self.mask = mask
        self.delta = delta.astype(np.int8)
        self.age = self.stays["age"].to_numpy(dtype=np.float64)
        self.mortality = self.stays["mortality"].to_numpy(dtype=np.int64)
        self.los = los_label(self.stays["los_days"])
        self._col_pos = {c: i for i, c in enumerate(self.columns)}

    def rows_where(self, selector) -> np.ndarray:
        return np.flatnonzero(np.asarray(selector))

    def observed_columns(self, rows, restrict: Optional[Iterable] = None) -> list:
        """Columns with at least one observation among ``rows``."""
        seen = self.mask[rows].any(axis=(0, 1))
        cols = [c for c, s in zip(self.columns, seen) if s]
        if restrict is not None:
            allowed = set(restrict)
            cols = [c for c in cols if c in allowed]
        return cols

    def universe(self, train_rows, restrict: Optional[Iterable] = None) -> list:
        if self.representation == ITEMID:
            return self.observed_columns(train_rows, restrict)
        cols = list(self.columns)
        if restrict is not None:
            allowed = set(restrict)
            cols = [c for c in cols if c in allowed]
        return cols

    def _select(self, rows, columns):
        idx = [self._col_pos.get(c, -1) for c in columns]
        have = np.array([i >= 0 for i in idx], dtype=bool)
        safe = np.array([max(i, 0) for i in idx], dtype=np.int64)
        ffill = self.ffill[rows][:, :, safe]
        mask = self.mask[rows][:, :, safe]
        delta = self.delta[rows][:, :, safe].astype(np.int64)
        if not have.all():
            # columns absent from the cohort entirely are never observed
            ffill[:, :, ~have] = np.nan
            mask[:, :, ~have] = False
            delta[:, :, ~have] = np.arange(1, HOURS + 1).reshape(1, HOURS, 1)
        return ffill, mask, delta

    def fill_stats(self, train_rows, columns) -> FillStats:
        ffill, mask, _ = self._select(train_rows, columns)
        cells = np.where(mask, ffill, np.nan)
        return _fill_from_cells(cells, columns)

    def matrix(self, rows, fill: FillStats) -> FeatureMatrix:
        rows = np.asarray(rows, dtype=np.int64)
        ffill, mask, delta = self._select(rows, fill.columns)
        values = _flatten(ffill, mask, delta, fill.vector(), self.age[rows])
        return FeatureMatrix(self.stay_ids[rows], list(fill.columns), feature_names(fill.columns),
                             values, self.mortality[rows], self.los[rows])
