"""Summary tables and static SVG charts from ``results.csv``."""

from __future__ import annotations

import math
from html import escape
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import metrics
from .regimes import (COMPARISON_COLUMNS, CONTINUOUS, ONE_TIME, RESULT_COLUMNS, SHORT_TERM,
                      SIGNIFICANCE, YEAR_AGNOSTIC, EvalRecord, compare, parse_years)

SUMMARY_COLUMNS = ["task", "representation", "regime", "train_fraction", "feature", "test_year",
                   "n", "n_ok", "n_degenerate", "mean_auroc", "se_auroc", "mean_auprc", "se_auprc"]
CHARTS = ("regime", "saturation", "ablation")
SERIES_COLORS = {"itemid": "#c0392b", "aggregated": "#2471a3", "pre-changeover": "#2471a3",
                 "post-changeover": "#c0392b"}


class ReportError(ValueError):
    pass


def read_results(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"{path}: results file not found")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in RESULT_COLUMNS if c not in df.columns]
    if missing:
        raise ReportError(f"{path}: missing column(s) {', '.join(missing)}")
    if df.empty:
        raise ReportError(f"{path}: no result rows")
    for col in ("auroc", "auprc", "train_fraction"):
        try:
            # exact decimal parsing so recomputed statistics match the writer's floats
            df[col] = [float(v) if v != "" else float("nan") for v in df[col]]
        except ValueError as exc:
            raise ReportError(f"{path}: column {col!r}: {exc}") from exc
    df["repeat"] = df["repeat"].astype(int)
    return df


def _se(values: np.ndarray) -> float:
    return metrics.standard_error(values) if len(values) >= 2 else float("nan")


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of AUROC/AUPRC per experiment cell and test year.

    Degenerate repeats are counted, never silently dropped from ``n``.
    """
    if results.empty:
        raise ReportError("no result rows to summarize")
    keys = ["task", "representation", "regime", "train_fraction", "feature", "test_year"]
    rows = []
    for key, grp in results.groupby(keys, sort=True):
        ok = grp[grp["status"] == "ok"]
        au, ap = ok["auroc"].to_numpy(), ok["auprc"].to_numpy()
        rows.append(dict(zip(keys, key), n=len(grp), n_ok=len(ok), n_degenerate=len(grp) - len(ok),
                         mean_auroc=float(au.mean()) if len(au) else float("nan"), se_auroc=_se(au),
                         mean_auprc=float(ap.mean()) if len(ap) else float("nan"), se_auprc=_se(ap)))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def _records(df: pd.DataFrame) -> list:
    out = []
    for r in df.itertuples(index=False):
        out.append(EvalRecord(r.task, r.representation, r.regime, parse_years(r.train_years),
                              None if r.test_year == "all" else int(r.test_year), int(r.repeat),
                              float(r.auroc), float(r.auprc), int(r.n_train), int(r.n_test),
                              int(r.seed), r.best_params, float(r.train_fraction),
                              r.feature or None, r.status))
    return out


def comparison_pvalues(results: pd.DataFrame, task: str, regime: str) -> dict:
    """Test year -> Wilcoxon p-value for aggregated vs Item-ID AUROCs."""
    sel = results[(results["task"] == task) & (results["regime"] == regime)
                  & (results["feature"] == "") & (results["train_fraction"] == 1.0)]
    a = sel[sel["representation"] == "aggregated"]
    b = sel[sel["representation"] == "itemid"]
    if a.empty or b.empty:
        return {}
    out = {}
    for c in compare(_records(a), _records(b)):
        if c.result is not None:
            out[c.test_year] = c.result.p_value
    return out


def read_comparisons(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in COMPARISON_COLUMNS if c not in df.columns]
    if missing:
        raise ReportError(f"{path}: missing column(s) {', '.join(missing)}")
    return df


# ---------------------------------------------------------------- SVG

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 40, 50


class _Axes:
    def __init__(self, x_min, x_max, y_min=0.4, y_max=1.0):
        pad = 0.5 if x_max == x_min else (x_max - x_min) * 0.05
        self.x0, self.x1 = x_min - pad, x_max + pad
        self.y0, self.y1 = y_min, y_max

    def x(self, v) -> float:
        return LEFT + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)

    def y(self, v) -> float:
        v = min(max(v, self.y0), self.y1)
        return HEIGHT - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)


def _frame(title: str, ax: _Axes, x_ticks: Sequence, x_label: str, body: list,
           tick_labels: Optional[Sequence[str]] = None) -> str:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>']
    out += body
    x_axis_y = HEIGHT - BOTTOM
    out.append(f'<line class="axis" x1="{LEFT}" y1="{x_axis_y}" x2="{WIDTH - RIGHT}" y2="{x_axis_y}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{x_axis_y}" stroke="black"/>')
    labels = tick_labels or [str(t) for t in x_ticks]
    for t, lab in zip(x_ticks, labels):
        x = ax.x(t)
        out.append(f'<line x1="{x:.1f}" y1="{x_axis_y}" x2="{x:.1f}" y2="{x_axis_y + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{x_axis_y + 16}" text-anchor="middle">{escape(lab)}</text>')
    for k in range(int(round((ax.y1 - ax.y0) / 0.1)) + 1):
        v = ax.y0 + 0.1 * k
        y = ax.y(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{(TOP + x_axis_y) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(TOP + x_axis_y) / 2:.1f})">mean AUROC (± SE)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(name: str, ax: _Axes, xs, means, ses, index: int) -> list:
    color = SERIES_COLORS.get(name, ["#117a65", "#7d3c98", "#b9770e"][index % 3])
    pts = " ".join(f"{ax.x(x):.1f},{ax.y(m):.1f}" for x, m in zip(xs, means))
    out = [f'<polyline class="series" data-series="{escape(name)}" points="{pts}" '
           f'fill="none" stroke="{color}" stroke-width="2"/>']
    for x, m, se in zip(xs, means, ses):
        se = 0.0 if math.isnan(se) else se
        px = ax.x(x)
        out.append(f'<line class="errorbar" data-series="{escape(name)}" x1="{px:.1f}" y1="{ax.y(m - se):.1f}" '
                   f'x2="{px:.1f}" y2="{ax.y(m + se):.1f}" stroke="{color}"/>')
        out.append(f'<circle cx="{px:.1f}" cy="{ax.y(m):.1f}" r="2.5" fill="{color}"/>')
    ly = TOP + 16 * index + 10
    out.append(f'<line x1="{WIDTH - RIGHT + 12}" y1="{ly}" x2="{WIDTH - RIGHT + 32}" y2="{ly}" '
               f'stroke="{color}" stroke-width="2"/>')
    out.append(f'<text x="{WIDTH - RIGHT + 36}" y="{ly + 4}">{escape(name)}</text>')
    return out


def regime_chart(summary: pd.DataFrame, task: str, regime: str, pvalues: Optional[dict] = None,
                 threshold: float = SIGNIFICANCE, changeover_year: Optional[int] = None,
                 baseline: Optional[float] = None) -> str:
    """Per-test-year AUROC, one polyline per representation.

    Test years whose paired p-value is below ``threshold`` are shaded.
    """
    sel = summary[(summary["task"] == task) & (summary["regime"] == regime)
                  & (summary["feature"] == "") & (summary["train_fraction"] == 1.0)
                  & (summary["test_year"] != "all")].copy()
    if sel.empty:
        raise ReportError(f"no results for task {task!r}, regime {regime!r}")
    sel["year"] = sel["test_year"].astype(int)
    years = sorted(sel["year"].unique())
    ax = _Axes(min(years), max(years))
    body = []
    for year, p in sorted((pvalues or {}).items(), key=lambda kv: -1 if kv[0] is None else kv[0]):
        if year is not None and year in years and p < threshold:
            x0, x1 = ax.x(year - 0.5), ax.x(year + 0.5)
            body.append(f'<rect class="significant" data-year="{year}" x="{x0:.1f}" y="{TOP}" '
                        f'width="{x1 - x0:.1f}" height="{HEIGHT - TOP - BOTTOM}" fill="#d5d8dc" '
                        f'fill-opacity="0.6"/>')
    if changeover_year is not None and min(years) - 0.5 <= changeover_year - 0.5 <= max(years) + 0.5:
        x = ax.x(changeover_year - 0.5)
        body.append(f'<line class="changeover" x1="{x:.1f}" y1="{TOP}" x2="{x:.1f}" y2="{HEIGHT - BOTTOM}" '
                    f'stroke="black" stroke-dasharray="4,3"/>')
    if baseline is not None and not math.isnan(baseline):
        y = ax.y(baseline)
        body.append(f'<line class="baseline" x1="{LEFT}" y1="{y:.1f}" x2="{WIDTH - RIGHT}" y2="{y:.1f}" '
                    f'stroke="#7f8c8d" stroke-dasharray="2,2"/>')
        body.append(f'<text x="{WIDTH - RIGHT + 12}" y="{y + 4:.1f}">year-agnostic</text>')
    for i, (rep, grp) in enumerate(sorted(sel.groupby("representation"), key=lambda kv: kv[0])):
        grp = grp.sort_values("year")
        body += _series(rep, ax, grp["year"], grp["mean_auroc"], grp["se_auroc"], i)
    return _frame(f"{task}: {regime.replace('_', ' ')}", ax, years, "test year", body)


def saturation_chart(summary: pd.DataFrame, task: str, test_year: Optional[int] = None) -> str:
    """AUROC against training fraction on one test year (the last by default)."""
    sel = summary[(summary["task"] == task) & (summary["regime"] == ONE_TIME) & (summary["feature"] == "")
                  & (summary["test_year"] != "all")].copy()
    sel["year"] = sel["test_year"].astype(int)
    sel = sel[sel["train_fraction"] < 1.0]
    if sel.empty:
        raise ReportError(f"no saturation results for task {task!r}")
    test_year = int(sel["year"].max()) if test_year is None else test_year
    sel = sel[sel["year"] == test_year]
    fr = sorted(sel["train_fraction"].unique())
    ax = _Axes(min(fr), max(fr))
    body = []
    for i, (rep, grp) in enumerate(sorted(sel.groupby("representation"), key=lambda kv: kv[0])):
        grp = grp.sort_values("train_fraction")
        body += _series(rep, ax, grp["train_fraction"], grp["mean_auroc"], grp["se_auroc"], i)
    return _frame(f"{task}: training-set saturation, test year {test_year}", ax, fr,
                  "training fraction", body, [f"{f:g}" for f in fr])


def ablation_chart(results: pd.DataFrame, task: str, changeover_year: Optional[int] = None) -> str:
    """Single-concept AUROC per concept, averaged over pre- and post-changeover test years."""
    sel = results[(results["task"] == task) & (results["feature"] != "") & (results["status"] == "ok")
                  & (results["test_year"] != "all")].copy()
    if sel.empty:
        raise ReportError(f"no ablation results for task {task!r}")
    sel["year"] = sel["test_year"].astype(int)
    features = sorted(sel["feature"].unique())
    if changeover_year is None:
        eras = {"all test years": sel}
    else:
        eras = {"pre-changeover": sel[sel["year"] < changeover_year],
                "post-changeover": sel[sel["year"] >= changeover_year]}
    ax = _Axes(0, len(features) - 1)
    body = []
    for i, (name, part) in enumerate(eras.items()):
        if part.empty:
            continue
        xs, means, ses = [], [], []
        for k, f in enumerate(features):
            # one value per repeat: mean over the era's test years
            per_rep = part[part["feature"] == f].groupby("repeat")["auroc"].mean().to_numpy()
            if len(per_rep):
                xs.append(k)
                means.append(per_rep.mean())
                ses.append(_se(per_rep))
        body += _series(name, ax, xs, means, ses, i)
    return _frame(f"{task}: single-concept Item-ID models", ax, list(range(len(features))),
                  "concept", body, features)


def write_report(results_path, out_dir, charts: Sequence[str] = CHARTS, threshold: float = SIGNIFICANCE,
                 changeover_year: Optional[int] = None, comparisons_path=None) -> list:
    if not 0 < threshold < 1:
        raise ReportError("significance threshold must lie in (0, 1)")
    for c in charts:
        if c not in CHARTS:
            raise ReportError(f"unknown chart {c!r}")
    results = read_results(results_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(results)
    written = [out / "summary.csv"]
    summary.to_csv(written[0], index=False, lineterminator="\n")
    comp = read_comparisons(comparisons_path) if comparisons_path else None
    for task in sorted(results["task"].unique()):
        if "regime" in charts:
            base = summary[(summary["task"] == task) & (summary["regime"] == YEAR_AGNOSTIC)
                           & (summary["representation"] == "aggregated") & (summary["feature"] == "")
                           & (summary["train_fraction"] == 1.0)]["mean_auroc"]
            baseline = float(base.iloc[0]) if len(base) else None
            for regime in (ONE_TIME, CONTINUOUS, SHORT_TERM):
                if not ((results["task"] == task) & (results["regime"] == regime)
                        & (results["feature"] == "") & (results["train_fraction"] == 1.0)).any():
                    continue
                if comp is not None:
                    sel = comp[(comp["task"] == task) & (comp["regime"] == regime) & (comp["p_value"] != "")]
                    pv = {int(r.test_year): float(r.p_value) for r in sel.itertuples() if r.test_year != "all"}
                else:
                    pv = comparison_pvalues(results, task, regime)
                svg = regime_chart(summary, task, regime, pv, threshold, changeover_year, baseline)
                written.append(out / f"{task}_{regime}.svg")
                written[-1].write_text(svg, encoding="utf-8")
        if "saturation" in charts and ((results["task"] == task) & (results["train_fraction"] < 1.0)
                                       & (results["feature"] == "")).any():
            written.append(out / f"{task}_saturation.svg")
            written[-1].write_text(saturation_chart(summary, task), encoding="utf-8")
        if "ablation" in charts and ((results["task"] == task) & (results["feature"] != "")).any():
            written.append(out / f"{task}_ablation.svg")
            written[-1].write_text(ablation_chart(results, task, changeover_year), encoding="utf-8")
    return written
