"""Synthetic ICU cohorts whose recording vocabulary switches at a changeover year.

Every stay carries a latent severity ``s ~ U(0, 1)`` that drives the
informative bedside concepts, in-hospital mortality and length of stay.
Each concept is recorded under one set of item ids before the changeover
year and a disjoint set afterwards, the way a hospital's charting system
swap renumbers the same measurement.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from ._seeding import derive_seed

log = logging.getLogger(__name__)

HOURS = 24
MAX_PER_YEAR = 99_999

STAY_COLUMNS = ["stay_id", "admit_year", "age", "icu_hours", "mortality", "los_days"]
EVENT_COLUMNS = ["stay_id", "itemid", "hour", "value"]
ORACLE_COLUMNS = ["stay_id", "latent_severity"]


class ConfigError(ValueError):
    """Invalid cohort configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class IcuStay:
    stay_id: int
    admit_year: int
    age: int
    icu_hours: float
    mortality: int
    los_days: float
    latent_severity: Optional[float] = None  # oracle only; never a feature


@dataclass(frozen=True)
class ChartEvent:
    stay_id: int
    itemid: int
    hour: int
    value: float


def stays_frame(stays) -> pd.DataFrame:
    """Frame of :class:`IcuStay` records (the severity column only if every stay has one)."""
    stays = list(stays)
    cols = STAY_COLUMNS + (["latent_severity"] if stays and all(
        s.latent_severity is not None for s in stays) else [])
    return pd.DataFrame([[getattr(s, c) for c in cols] for s in stays], columns=cols)


def events_frame(events) -> pd.DataFrame:
    return pd.DataFrame([[e.stay_id, e.itemid, e.hour, e.value] for e in events], columns=EVENT_COLUMNS)


def stay_records(stays: pd.DataFrame) -> list:
    sev = "latent_severity" in stays.columns
    return [IcuStay(int(r.stay_id), int(r.admit_year), int(r.age), float(r.icu_hours), int(r.mortality),
                    float(r.los_days), float(r.latent_severity) if sev else None)
            for r in stays.itertuples(index=False)]


def event_records(events: pd.DataFrame) -> list:
    return [ChartEvent(int(r.stay_id), int(r.itemid), int(r.hour), float(r.value))
            for r in events.itertuples(index=False)]


@dataclass
class ConceptSpec:
    name: str
    pre_era_itemids: tuple
    post_era_itemids: tuple
    baseline: float
    severity_slope: float
    noise_sd: float
    obs_prob_pre: float
    obs_prob_post: float
    unit_scale_post: float = 1.0
    role: str = "informative"  # "dominant" (GCS analog) | "informative" | "noise"

    def __post_init__(self):
        self.pre_era_itemids = tuple(sorted(int(i) for i in self.pre_era_itemids))
        self.post_era_itemids = tuple(sorted(int(i) for i in self.post_era_itemids))

    @property
    def itemids(self) -> tuple:
        return self.pre_era_itemids + self.post_era_itemids


@dataclass
class SynthConfig:
    year_start: int = 2001
    year_end: int = 2012
    changeover_year: int = 2008
    patients_per_year: int = 500
    concepts: list = field(default_factory=list)
    mortality_steepness: float = 6.0
    mortality_midpoint: float = 0.7
    los_base_days: float = 1.5
    los_severity_scale: float = 3.0
    master_seed: int = 42
    value_decimals: Optional[int] = 4

    @property
    def years(self) -> list:
        return list(range(self.year_start, self.year_end + 1))

    def concept(self, name: str) -> ConceptSpec:
        for c in self.concepts:
            if c.name == name:
                return c
        raise KeyError(name)

    def concepts_with_role(self, role: str) -> list:
        return [c for c in self.concepts if c.role == role]

    def validate(self) -> None:
        if self.year_start > self.year_end:
            raise ConfigError("year_end", f"{self.year_end} precedes year_start {self.year_start}")
        if not self.year_start <= self.changeover_year <= self.year_end + 1:
            raise ConfigError("changeover_year",
                              f"{self.changeover_year} outside [{self.year_start}, {self.year_end + 1}]")
        if not 0 < self.patients_per_year <= MAX_PER_YEAR:
            raise ConfigError("patients_per_year", f"must lie in [1, {MAX_PER_YEAR}]")
        if not 0 < self.mortality_midpoint < 1:
            raise ConfigError("mortality_midpoint", "must lie in (0, 1)")
        if self.los_base_days < 1.5:
            raise ConfigError("los_base_days", "must be >= 1.5 so every stay lasts at least 1.5 days")
        if self.los_severity_scale <= 0:
            raise ConfigError("los_severity_scale", "must be positive")
        if not self.concepts:
            raise ConfigError("concepts", "at least one concept is required")
        seen: dict = {}
        names = set()
        for c in self.concepts:
            where = f"concepts[{c.name}]"
            if c.name in names:
                raise ConfigError(where, "duplicate concept name")
            names.add(c.name)
            if not c.pre_era_itemids:
                raise ConfigError(f"{where}.pre_era_itemids", "empty itemid set")
            if not c.post_era_itemids:
                raise ConfigError(f"{where}.post_era_itemids", "empty itemid set")
            for era, ids in (("pre_era_itemids", c.pre_era_itemids), ("post_era_itemids", c.post_era_itemids)):
                if len(set(ids)) != len(ids):
                    raise ConfigError(f"{where}.{era}", "repeated itemid")
                for i in ids:
                    if i <= 0:
                        raise ConfigError(f"{where}.{era}", f"itemid {i} is not positive")
                    if i in seen:
                        raise ConfigError(f"{where}.{era}", f"itemid {i} already used by {seen[i]}")
                    seen[i] = f"{c.name}.{era}"
            if c.noise_sd < 0:
                raise ConfigError(f"{where}.noise_sd", "must be nonnegative")
            for attr in ("obs_prob_pre", "obs_prob_post"):
                if not 0 <= getattr(c, attr) <= 1:
                    raise ConfigError(f"{where}.{attr}", "must be a probability")
            if c.unit_scale_post <= 0:
                raise ConfigError(f"{where}.unit_scale_post", "must be positive")
            if c.role not in ("dominant", "informative", "noise"):
                raise ConfigError(f"{where}.role", f"unknown role {c.role!r}")
        if not any(abs(c.severity_slope) > c.noise_sd for c in self.concepts):
            raise ConfigError("concepts", "no concept has |severity_slope| > noise_sd; "
                                          "an informative concept is required")

    def aggregation_map(self) -> dict:
        """Concept name -> all item ids recording it, across both eras."""
        return {c.name: frozenset(c.itemids) for c in self.concepts}


def _c(name, pre, post, baseline, slope, sd, p_pre, p_post, scale=1.0, role="informative"):
    return ConceptSpec(name, tuple(pre), tuple(post), baseline, slope, sd, p_pre, p_post, scale, role)


def default_concepts() -> list:
    # item ids borrow real-world numbering from an old and a new charting system
    return [
        _c("gcs_total", (198, 226755, 227013), (220739,), 15.0, -12.0, 1.0, 0.75, 0.75, role="dominant"),
        _c("heart_rate", (211, 1332), (220045,), 80.0, 25.0, 12.0, 0.9, 0.9),
        _c("resp_rate", (615, 618), (220210,), 16.0, 8.0, 4.0, 0.85, 0.85),
        _c("sys_bp", (51, 455, 6701), (220179,), 125.0, -30.0, 15.0, 0.8, 0.8),
        _c("spo2", (646, 834), (220277,), 98.0, -5.0, 2.5, 0.8, 0.8),
        _c("temperature", (678, 679), (223761,), 98.4, 2.0, 1.2, 0.5, 0.5),
        _c("lactate", (818, 1531), (225668,), 1.2, 3.0, 1.0, 0.2, 0.2),
        _c("creatinine", (791, 1525, 3750), (220615,), 1.0, 1.5, 0.8, 0.15, 0.15),
        _c("wbc", (861, 1127, 1542), (220546,), 9.0, 5.0, 4.0, 0.15, 0.15),
        _c("fio2", (190, 3420), (223835,), 0.4, 0.3, 0.15, 0.3, 0.3),
        _c("sodium", (837, 1536), (220645,), 139.0, 0.0, 3.0, 0.15, 0.15, role="noise"),
        _c("glucose", (807, 811, 1529), (220621,), 130.0, 0.0, 30.0, 0.3, 0.3, role="noise"),
        _c("potassium", (829, 1535), (227442,), 4.1, 0.0, 0.4, 0.15, 0.15, role="noise"),
        _c("hemoglobin", (814, 3759), (220228,), 11.0, 0.0, 1.5, 0.15, 0.15, role="noise"),
        _c("weight", (580, 763, 3580), (224639,), 80.0, 0.0, 15.0, 0.1, 0.15, 2.2046, role="noise"),
    ]


def default_config() -> SynthConfig:
    """Twelve years (2001-2012) of 500 stays, switching vocabulary in 2008.

    Fifteen concepts: one dominant GCS analog, nine moderately informative
    vitals and labs, five pure-noise measurements (weight additionally
    switches from kilograms to pounds-scaled units after the changeover).
    """
    return SynthConfig(concepts=default_concepts())


def year_seed(master_seed: int, year: int) -> int:
    return derive_seed(master_seed, "year", year)


def _generate_year(cfg: SynthConfig, year: int):
    gen = np.random.default_rng(year_seed(cfg.master_seed, year))
    n = cfg.patients_per_year
    post = year >= cfg.changeover_year
    stay_id = year * 100_000 + np.arange(1, n + 1)

    severity = gen.uniform(0.0, 1.0, n)
    age = gen.integers(16, 91, n)
    logit = cfg.mortality_steepness * (severity - cfg.mortality_midpoint)
    mortality = (gen.uniform(size=n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    los_days = cfg.los_base_days + gen.exponential(cfg.los_severity_scale * severity + 0.5)
    icu_hours = np.maximum(36.0, 24.0 * los_days * gen.uniform(0.3, 1.0, n))

    ev_stay, ev_item, ev_hour, ev_val = [], [], [], []
    hours = np.arange(HOURS)
    for c in cfg.concepts:
        ids = np.asarray(c.post_era_itemids if post else c.pre_era_itemids)
        p_obs = c.obs_prob_post if post else c.obs_prob_pre
        true = c.baseline + c.severity_slope * severity[:, None] + gen.normal(0.0, 1.0, (n, HOURS)) * c.noise_sd
        observed = gen.uniform(size=(n, HOURS)) < p_obs
        pick = ids[gen.integers(0, len(ids), (n, HOURS))]
        if post:
            true = true * c.unit_scale_post
        r, t = np.nonzero(observed)
        ev_stay.append(stay_id[r])
        ev_item.append(pick[r, t])
        ev_hour.append(hours[t])
        ev_val.append(true[r, t])

    stays = pd.DataFrame({
        "stay_id": stay_id,
        "admit_year": np.full(n, year, dtype=np.int64),
        "age": age.astype(np.int64),
        "icu_hours": icu_hours,
        "mortality": mortality,
        "los_days": los_days,
        "latent_severity": severity,
    })
    events = pd.DataFrame({
        "stay_id": np.concatenate(ev_stay).astype(np.int64),
        "itemid": np.concatenate(ev_item).astype(np.int64),
        "hour": np.concatenate(ev_hour).astype(np.int64),
        "value": np.concatenate(ev_val).astype(np.float64),
    })
    return stays, events


def _finish(stays: pd.DataFrame, events: pd.DataFrame, decimals: Optional[int]):
    if decimals is not None:
        for frame, cols in ((stays, ["icu_hours", "los_days"]), (events, ["value"])):
            for col in cols:
                frame[col] = frame[col].round(decimals)
    stays = stays.sort_values("stay_id", kind="mergesort").reset_index(drop=True)
    events = events.sort_values(["stay_id", "hour", "itemid"], kind="mergesort").reset_index(drop=True)
    return stays, events


def generate_year(cfg: SynthConfig, year: int):
    """One admission year; seeded only by ``(master_seed, year)``."""
    cfg.validate()
    if year not in cfg.years:
        raise ConfigError("year", f"{year} outside [{cfg.year_start}, {cfg.year_end}]")
    return _finish(*_generate_year(cfg, year), cfg.value_decimals)


def generate_cohort(cfg: SynthConfig):
    """Generate ``(stays, events)`` frames for every configured year.

    ``stays`` holds ``stay_id, admit_year, age, icu_hours, mortality,
    los_days`` plus the oracle-only ``latent_severity`` column; ``events``
    holds ``stay_id, itemid, hour, value`` sorted by stay, hour, item id.
    Years are generated independently, so concatenating per-year output in
    any order and sorting reproduces this result exactly.
    """
    cfg.validate()
    parts = [_generate_year(cfg, y) for y in cfg.years]
    stays = pd.concat([p[0] for p in parts], ignore_index=True)
    events = pd.concat([p[1] for p in parts], ignore_index=True)
    return _finish(stays, events, cfg.value_decimals)


def with_overrides(cfg: SynthConfig, **changes) -> SynthConfig:
    return dataclasses.replace(cfg, **changes)
