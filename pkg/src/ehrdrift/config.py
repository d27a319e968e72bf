"""Sectioned ``key = value`` configuration files for cohorts and runs.

Synthetic cohort file::

    [cohort]
    year_start = 2001
    changeover_year = 2008
    ...
    [concept:gcs_total]
    pre_era_itemids = 198, 226755, 227013
    post_era_itemids = 220739
    baseline = 15
    ...

Without any ``[concept:*]`` section the fifteen default concepts are used.
Every file is echoed back with all defaults written out.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .learner import FAST_SPACE, SearchSpace
from .regimes import KINDS, TASKS, parse_years
from .synthdata import ConceptSpec, SynthConfig, default_concepts

SATURATION = "saturation"
ABLATION = "ablation"
RUN_REGIMES = KINDS + (SATURATION, ABLATION)


class ConfigFileError(ValueError):
    pass


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p.optionxform = str
    return p


def _load(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"{path}: config file not found")
    p = _parser()
    try:
        p.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
    return p


def _convert(path, section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(";", ",").split(",") if x.strip())
        if kind == "floats":
            return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())
        if kind == "names":
            return tuple(x.strip() for x in raw.replace(";", ",").split(",") if x.strip())
        if kind == "years":
            return parse_years(raw)
        if kind == "depths":
            return tuple(None if x.strip().lower() in ("none", "unbounded") else int(x)
                         for x in raw.replace(";", ",").split(",") if x.strip())
        if kind == "optint":
            return None if raw.strip().lower() in ("", "none") else int(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigFileError(f"{path}: [{section}] {key} = {raw!r} is not valid ({exc})") from exc


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join("none" if v is None else _fmt(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_section(path, p, section: str, schema: dict, target: dict) -> None:
    for key, raw in p.items(section):
        if key not in schema:
            raise ConfigFileError(f"{path}: [{section}] unknown key {key!r}")
        target[key] = _convert(path, section, key, raw, schema[key])


# ---------------------------------------------------------------- synthetic cohort

_COHORT_KEYS = {
    "year_start": int, "year_end": int, "changeover_year": int, "patients_per_year": int,
    "mortality_steepness": float, "mortality_midpoint": float, "los_base_days": float,
    "los_severity_scale": float, "master_seed": int, "value_decimals": "optint",
}
_CONCEPT_KEYS = {
    "pre_era_itemids": "ints", "post_era_itemids": "ints", "baseline": float,
    "severity_slope": float, "noise_sd": float, "obs_prob_pre": float, "obs_prob_post": float,
    "unit_scale_post": float, "role": str,
}


def load_synth_config(path) -> SynthConfig:
    p = _load(path)
    values: dict = {}
    concepts = []
    for section in p.sections():
        if section == "cohort":
            _read_section(path, p, section, _COHORT_KEYS, values)
        elif section.startswith("concept:"):
            fields: dict = {}
            _read_section(path, p, section, _CONCEPT_KEYS, fields)
            required = [k for k in _CONCEPT_KEYS if k not in ("unit_scale_post", "role")]
            missing = [k for k in required if k not in fields]
            if missing:
                raise ConfigFileError(f"{path}: [{section}] missing key {missing[0]!r}")
            concepts.append(ConceptSpec(name=section.split(":", 1)[1].strip(), **fields))
        else:
            raise ConfigFileError(f"{path}: unknown section [{section}]")
    cfg = SynthConfig(concepts=concepts or default_concepts(), **values)
    cfg.validate()
    return cfg


def dump_synth_config(cfg: SynthConfig) -> str:
    p = _parser()
    p["cohort"] = {k: _fmt(getattr(cfg, k)) for k in _COHORT_KEYS}
    for c in cfg.concepts:
        p[f"concept:{c.name}"] = {k: _fmt(getattr(c, k)) for k in _CONCEPT_KEYS}
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    synth_config: Optional[Path] = None   # None + no stays/events: default synthetic cohort
    stays: Optional[Path] = None
    events: Optional[Path] = None
    map: Optional[Path] = None
    changeover_year: Optional[int] = None
    tasks: tuple = ("mortality",)
    representations: tuple = ("itemid", "aggregated")
    regimes: tuple = ("year_agnostic", "one_time", "continuous", "short_term")
    master_seed: int = 0
    n_repeats: int = 20
    train_years: tuple = (2001, 2002)
    one_time_test_years: tuple = ()       # empty: every year after train_years
    rolling_test_years: tuple = ()        # empty: every year but the first
    fractions: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    ablation_concepts: tuple = ()         # empty: every concept in the map
    ablation_repeats: int = 5
    cv_folds: int = 5
    test_fraction: float = 0.2
    only_test_years: tuple = ()           # restrict the grid (reproducibility spot checks)
    only_repeats: tuple = ()
    search: SearchSpace = field(default_factory=lambda: FAST_SPACE)
    search_preset: str = "fast"

    def validate(self) -> None:
        if (self.stays is None) != (self.events is None):
            raise ConfigFileError("[cohort] stays and events must be given together")
        if self.stays is not None and self.map is None:
            raise ConfigFileError("[cohort] an ingested cohort needs a map file")
        for name in ("synth_config", "stays", "events", "map"):
            pth = getattr(self, name)
            if pth is not None and not Path(pth).is_file():
                raise ConfigFileError(f"[cohort] {name}: file not found: {pth}")
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigFileError(f"[experiment] tasks: unknown task {t!r}")
        for r in self.representations:
            if r not in ("itemid", "aggregated"):
                raise ConfigFileError(f"[experiment] representations: unknown representation {r!r}")
        for r in self.regimes:
            if r not in RUN_REGIMES:
                raise ConfigFileError(f"[experiment] regimes: unknown regime {r!r}")
        if not (self.tasks and self.representations and self.regimes):
            raise ConfigFileError("[experiment] need at least one task, representation and regime")
        if self.n_repeats < 1 or self.ablation_repeats < 1:
            raise ConfigFileError("[experiment] repeat counts must be positive")
        for f in self.fractions:
            if not 0 < f <= 1:
                raise ConfigFileError(f"[experiment] fractions: {f} outside (0, 1]")


_COHORT_RUN_KEYS = {"synth_config": str, "stays": str, "events": str, "map": str,
                    "changeover_year": "optint"}
_EXPERIMENT_KEYS = {
    "tasks": "names", "representations": "names", "regimes": "names", "master_seed": int,
    "n_repeats": int, "train_years": "years", "one_time_test_years": "years",
    "rolling_test_years": "years", "fractions": "floats", "ablation_concepts": "names",
    "ablation_repeats": int, "cv_folds": int, "test_fraction": float,
    "only_test_years": "years", "only_repeats": "ints",
}
_SEARCH_KEYS = {"preset": str, "n_trees": "ints", "max_depth": "depths", "min_samples_leaf": "ints",
                "max_features_fraction": "floats", "bootstrap": bool, "n_iter": int}


def load_run_config(path) -> RunConfig:
    p = _load(path)
    base = Path(path).resolve().parent
    cohort: dict = {}
    exp: dict = {}
    search: dict = {}
    for section in p.sections():
        if section == "cohort":
            _read_section(path, p, section, _COHORT_RUN_KEYS, cohort)
        elif section == "experiment":
            _read_section(path, p, section, _EXPERIMENT_KEYS, exp)
        elif section == "search":
            _read_section(path, p, section, _SEARCH_KEYS, search)
        else:
            raise ConfigFileError(f"{path}: unknown section [{section}]")
    for key in ("synth_config", "stays", "events", "map"):
        if cohort.get(key) and cohort[key].lower() != "none":
            pth = Path(cohort[key])
            cohort[key] = pth if pth.is_absolute() else base / pth
        else:
            cohort.pop(key, None)
    if "bootstrap" in search:
        search["bootstrap"] = (search["bootstrap"],)
    preset = search.pop("preset", "fast")
    if preset not in ("fast", "default"):
        raise ConfigFileError(f"{path}: [search] preset must be 'fast' or 'default'")
    space = FAST_SPACE if preset == "fast" else SearchSpace()
    try:
        space = dataclasses.replace(space, **search)
    except ValueError as exc:
        raise ConfigFileError(f"{path}: [search] {exc}") from exc
    cfg = RunConfig(**cohort, **exp, search=space, search_preset=preset)
    try:
        cfg.validate()
    except ConfigFileError as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
    return cfg


def dump_run_config(cfg: RunConfig) -> str:
    p = _parser()
    p["cohort"] = {k: _fmt(getattr(cfg, k)) for k in _COHORT_RUN_KEYS}
    p["experiment"] = {k: _fmt(getattr(cfg, k)) for k in _EXPERIMENT_KEYS}
    s = cfg.search
    p["search"] = {"preset": cfg.search_preset, "n_trees": _fmt(s.n_trees), "max_depth": _fmt(s.max_depth),
                   "min_samples_leaf": _fmt(s.min_samples_leaf),
                   "max_features_fraction": _fmt(s.max_features_fraction),
                   "bootstrap": _fmt(s.bootstrap), "n_iter": _fmt(s.n_iter)}
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue()
