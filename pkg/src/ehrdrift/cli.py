"""``ehrdrift`` command line: synth, run, report, validate.

Exit status: 0 success, 2 usage, 3 config, 4 ingestion, 5 runtime or report failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import cohortio, config, regimes, report
from .pipeline import AggregationMap, PipelineError
from .synthdata import ConfigError, default_config, generate_cohort

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INGEST = 4
EXIT_RUNTIME = 5

log = logging.getLogger("ehrdrift")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _jobs(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehrdrift", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", type=Path, help="config file (defaults apply when omitted)")
        sp.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
        sp.add_argument("--seed", type=_seed, help="override the config's master_seed")
        sp.add_argument("--jobs", type=_jobs, default=1, help="worker processes (output is unaffected)")

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    common(s, "cohort")
    r = sub.add_parser("run", help="run the experiment grid from a run config")
    common(r, "results")
    rp = sub.add_parser("report", help="summary table and SVG charts from results.csv")
    common(rp, "report")
    rp.add_argument("--results", type=Path, help="results.csv (default: results.csv beside --config or in cwd)")
    rp.add_argument("--comparisons", type=Path, help="comparisons.csv; recomputed from results when omitted")
    rp.add_argument("--charts", default=",".join(report.CHARTS),
                    help="comma list of: " + ", ".join(report.CHARTS))
    rp.add_argument("--threshold", type=float, default=regimes.SIGNIFICANCE, help="significance threshold")
    rp.add_argument("--changeover-year", type=int, help="year to mark with a vertical rule")
    v = sub.add_parser("validate", help="check ingested stays/events/map CSVs")
    common(v, ".")
    v.add_argument("--stays", type=Path)
    v.add_argument("--events", type=Path)
    v.add_argument("--map", type=Path)
    return p


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = config.load_synth_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.validate()
    stays, events = generate_cohort(cfg)
    paths = cohortio.write_cohort(args.out, stays, events)
    cohortio.write_map(args.out / "map.csv", AggregationMap(cfg.aggregation_map()))
    (args.out / "synth_config.ini").write_text(config.dump_synth_config(cfg), encoding="utf-8")
    print(f"wrote {len(stays)} stays and {len(events)} events to {args.out} "
          f"({', '.join(p.name for p in paths.values())}, map.csv, synth_config.ini)")
    return EXIT_OK


# ---------------------------------------------------------------- run

def load_cohort(cfg: config.RunConfig) -> regimes.Cohort:
    if cfg.stays is not None:
        stays = cohortio.read_stays(cfg.stays)
        events = cohortio.read_events(cfg.events)
        agg_map = cohortio.read_map(cfg.map)
        return regimes.Cohort(stays, events, agg_map, cfg.changeover_year)
    synth = config.load_synth_config(cfg.synth_config) if cfg.synth_config else default_config()
    stays, events = generate_cohort(synth)
    agg_map = cohortio.read_map(cfg.map) if cfg.map else AggregationMap(synth.aggregation_map())
    changeover = cfg.changeover_year if cfg.changeover_year is not None else synth.changeover_year
    return regimes.Cohort(stays, events, agg_map, changeover)


def _restrict_years(years: Sequence[int], only: Sequence[int]) -> tuple:
    return tuple(y for y in years if not only or y in only)


def experiment_units(cfg: config.RunConfig, cohort: regimes.Cohort) -> list:
    """Every grid cell the config asks for, as (spec, repeat, test_year) units."""
    years = cohort.all_years
    if not years:
        raise regimes.RegimeError("cohort has no stays after the inclusion filter")
    one_time_years = cfg.one_time_test_years or tuple(y for y in years if y > max(cfg.train_years))
    rolling_years = cfg.rolling_test_years or tuple(years[1:])
    only = cfg.only_test_years
    repeats = cfg.only_repeats or None
    units = []
    for task in cfg.tasks:
        base = regimes.RegimeSpec(regimes.ONE_TIME, task=task, train_years=cfg.train_years,
                                  test_years=_restrict_years(one_time_years, only),
                                  n_repeats=cfg.n_repeats, master_seed=cfg.master_seed,
                                  search=cfg.search, cv_folds=cfg.cv_folds,
                                  test_fraction=cfg.test_fraction, repeats=repeats)
        for kind in cfg.regimes:
            if kind == config.ABLATION:
                concepts = cfg.ablation_concepts or tuple(cohort.agg_map.concepts)
                specs = regimes.ablation_specs(cohort, base, concepts, cfg.ablation_repeats)
            else:
                specs = []
                for rep in cfg.representations:
                    spec = base.replace(representation=rep)
                    if kind == config.SATURATION:
                        specs += regimes.saturation_specs(spec, cfg.fractions)
                    elif kind == regimes.YEAR_AGNOSTIC:
                        # the pooled split has no test year; a year restriction excludes it
                        specs += [] if only else [spec.replace(kind=kind, test_years=())]
                    elif kind == regimes.ONE_TIME:
                        specs.append(spec)
                    else:
                        test_years = _restrict_years(rolling_years, only)
                        spec = spec.replace(kind=kind, test_years=test_years)
                        if test_years and min(test_years) <= years[0]:
                            raise regimes.RegimeError(f"test year {min(test_years)} has no earlier "
                                                      f"year to train on")
                        specs.append(spec)
            for s in specs:
                if s.kind == regimes.ONE_TIME and not s.test_years:
                    continue
                units.extend(regimes.units_for(s))
    # a spec listed twice (e.g. one_time and saturation at fraction 1.0) runs once
    seen, out = set(), []
    for u in units:
        if u not in seen:
            seen.add(u)
            out.append(u)
    return out


def _label(r: regimes.EvalRecord) -> str:
    if r.feature:
        return f"ablation[{r.feature}]"
    if r.train_fraction != 1.0:
        return f"saturation[{r.train_fraction:g}]"
    return r.regime


def summary_lines(records: Sequence[regimes.EvalRecord]) -> list:
    groups = defaultdict(list)
    for r in records:
        groups[(r.task, r.representation, _label(r))].append(r)
    lines = []
    for (task, rep, label), recs in sorted(groups.items()):
        ok = [r.auroc for r in recs if r.ok]
        mean = f"{np.mean(ok):.3f}" if ok else "nan"
        lines.append(f"{task} {rep} {label}: {len(recs)} records, {len(recs) - len(ok)} degenerate, "
                     f"mean AUROC {mean}")
    return lines


def cmd_run(args) -> int:
    cfg = config.load_run_config(args.config) if args.config else config.RunConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    cohort = load_cohort(cfg)
    units = experiment_units(cfg, cohort)
    if not units:
        raise CliError(EXIT_CONFIG, "the configured experiment grid is empty")
    log.info("running %d grid cells on %d stays with %d job(s)", len(units), len(cohort.stays), args.jobs)
    records = regimes.execute(cohort, units, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    regimes.records_frame(records).to_csv(out / "results.csv", index=False, lineterminator="\n")
    pd.DataFrame(regimes.representation_comparisons(records), columns=regimes.COMPARISON_COLUMNS) \
        .to_csv(out / "comparisons.csv", index=False, lineterminator="\n")
    (out / "run_config.ini").write_text(config.dump_run_config(cfg), encoding="utf-8")
    for line in summary_lines(records):
        print(line)
    return EXIT_OK


# ---------------------------------------------------------------- report / validate

def cmd_report(args) -> int:
    results = args.results
    if results is None:
        results = (args.config.parent if args.config else Path(".")) / "results.csv"
    charts = tuple(c.strip() for c in args.charts.split(",") if c.strip())
    comparisons = args.comparisons
    written = report.write_report(results, args.out, charts, args.threshold, args.changeover_year,
                                  comparisons)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    paths = {"stays": args.stays, "events": args.events, "map": args.map}
    if args.config is not None:
        cfg = config.load_run_config(args.config)
        for k in paths:
            paths[k] = paths[k] or getattr(cfg, k)
    missing = [k for k, v in paths.items() if v is None]
    if missing:
        raise CliError(EXIT_USAGE, f"validate needs --{missing[0]} (or a run config naming it)")
    rep = cohortio.validate_files(paths["stays"], paths["events"], paths["map"])
    for line in rep.lines():
        print(line)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "report": cmd_report, "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (config.ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except cohortio.IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (report.ReportError, regimes.RegimeError, regimes.ComparisonError, PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
