"""CSV reading, writing and validation for cohorts and aggregation maps."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .pipeline import AggregationMap, PipelineError, filter_cohort
from .synthdata import EVENT_COLUMNS, ORACLE_COLUMNS, STAY_COLUMNS


class IngestionError(ValueError):
    """Schema violation in an input file; message cites file and data row."""


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    # "\n" line endings and repr-precision floats keep output byte-stable
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def write_cohort(out_dir, stays: pd.DataFrame, events: pd.DataFrame) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"stays": out / "stays.csv", "events": out / "events.csv", "oracle": out / "oracle.csv"}
    _write_csv(stays[STAY_COLUMNS], paths["stays"])
    _write_csv(events[EVENT_COLUMNS], paths["events"])
    if "latent_severity" in stays.columns:
        _write_csv(stays[ORACLE_COLUMNS], paths["oracle"])
    else:
        paths.pop("oracle")
    return paths


def write_map(path, agg_map: AggregationMap) -> None:
    _write_csv(agg_map.to_frame(), Path(path))


def _read(path, required: list, kind: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: cannot parse {kind} file: {exc}") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing column(s) {', '.join(missing)}")
    return df


def _convert(df: pd.DataFrame, path, column: str, kind: str) -> np.ndarray:
    """Column as int64 or float64; the first bad cell is reported by data row."""
    raw = df[column]
    num = pd.to_numeric(raw, errors="coerce")
    bad = num.isna().to_numpy()
    if kind == "int":
        bad |= ~np.isclose(num.fillna(0), np.round(num.fillna(0)))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        # data row numbers are 1-based and exclude the header line
        raise IngestionError(f"{path}: row {i + 1}: column {column!r} has invalid value {raw.iloc[i]!r}")
    if kind == "int":
        return num.to_numpy(dtype=np.int64)
    # pandas' fast parser can be off by an ulp; Python's float() round-trips exactly
    return np.array([float(v) for v in raw], dtype=np.float64)


def read_stays(path) -> pd.DataFrame:
    df = _read(path, STAY_COLUMNS, "stays")
    out = pd.DataFrame({
        "stay_id": _convert(df, path, "stay_id", "int"),
        "admit_year": _convert(df, path, "admit_year", "int"),
        "age": _convert(df, path, "age", "int"),
        "icu_hours": _convert(df, path, "icu_hours", "float"),
        "mortality": _convert(df, path, "mortality", "int"),
        "los_days": _convert(df, path, "los_days", "float"),
    })
    if "subject_id" in df.columns:
        out["subject_id"] = _convert(df, path, "subject_id", "int")
    bad = ~np.isin(out["mortality"], [0, 1])
    if bad.any():
        raise IngestionError(f"{path}: row {int(np.flatnonzero(bad)[0]) + 1}: mortality must be 0 or 1")
    dup = out["stay_id"].duplicated().to_numpy()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise IngestionError(f"{path}: row {i + 1}: duplicate stay_id {out['stay_id'].iloc[i]}")
    return out


def read_events(path) -> pd.DataFrame:
    df = _read(path, EVENT_COLUMNS, "events")
    out = pd.DataFrame({
        "stay_id": _convert(df, path, "stay_id", "int"),
        "itemid": _convert(df, path, "itemid", "int"),
        "hour": _convert(df, path, "hour", "int"),
        "value": _convert(df, path, "value", "float"),
    })
    bad = ((out["hour"] < 0) | (out["hour"] >= 24)).to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestionError(f"{path}: row {i + 1}: hour {out['hour'].iloc[i]} outside [0, 24)")
    bad = (out["itemid"] <= 0).to_numpy()
    if bad.any():
        raise IngestionError(f"{path}: row {int(np.flatnonzero(bad)[0]) + 1}: itemid must be positive")
    return out


def read_map(path) -> AggregationMap:
    df = _read(path, ["concept", "itemid"], "aggregation map")
    itemids = _convert(df, path, "itemid", "int")
    try:
        return AggregationMap.from_frame(pd.DataFrame({"concept": df["concept"], "itemid": itemids}))
    except PipelineError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def read_oracle(path) -> pd.DataFrame:
    df = _read(path, ORACLE_COLUMNS, "oracle")
    return pd.DataFrame({"stay_id": _convert(df, path, "stay_id", "int"),
                         "latent_severity": _convert(df, path, "latent_severity", "float")})


@dataclass
class ValidationReport:
    n_stays: int = 0
    n_events: int = 0
    n_excluded: int = 0
    n_unmapped_events: int = 0
    unmapped_itemids: list = field(default_factory=list)
    n_orphan_events: int = 0
    warnings: list = field(default_factory=list)

    def lines(self) -> list:
        out = [f"stays: {self.n_stays}", f"events: {self.n_events}",
               f"excluded by inclusion filter: {self.n_excluded}",
               f"unmapped events: {self.n_unmapped_events} "
               f"({len(self.unmapped_itemids)} distinct item ids)",
               f"events of unknown stays: {self.n_orphan_events}"]
        out += [f"warning: {w}" for w in self.warnings]
        return out


def validate_files(stays_path, events_path, map_path) -> ValidationReport:
    """Fatal on schema errors (:class:`IngestionError`); coverage gaps are warnings."""
    stays = read_stays(stays_path)
    events = read_events(events_path)
    agg_map = read_map(map_path)
    rep = ValidationReport(n_stays=len(stays), n_events=len(events))
    rep.n_excluded = len(stays) - len(filter_cohort(stays))
    mapped = events["itemid"].map(lambda i: agg_map.concept_of(i) is not None).to_numpy(dtype=bool)
    rep.n_unmapped_events = int((~mapped).sum())
    rep.unmapped_itemids = sorted(int(i) for i in np.unique(events["itemid"][~mapped]))
    rep.n_orphan_events = int((~events["stay_id"].isin(stays["stay_id"])).sum())
    if rep.n_unmapped_events:
        rep.warnings.append(f"{rep.n_unmapped_events} events carry {len(rep.unmapped_itemids)} "
                            f"item id(s) absent from the map: {rep.unmapped_itemids[:10]}")
    if rep.n_orphan_events:
        rep.warnings.append(f"{rep.n_orphan_events} events reference stays not in {os.fspath(stays_path)}")
    return rep
