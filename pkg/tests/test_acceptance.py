"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
lines appear in the terminal summary. The drift criteria run on the default
synthetic cohort (12 years x 500 stays) and take several minutes.
"""

import itertools
import time

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrdrift import cli, metrics
from ehrdrift.learner import HyperParams, fit_forest, predict_proba
from ehrdrift.pipeline import (AGGREGATED, ITEMID, AggregationMap, FillStats, GridCache, HourlyGrid,
                               build_matrix, bucket_hourly, impute_simple, los_label)
from ehrdrift.regimes import (CONTINUOUS, ONE_TIME, SHORT_TERM, YEAR_AGNOSTIC, Cohort, RegimeSpec, compare,
                              run, run_ablation, run_saturation)
from ehrdrift.synthdata import default_config, generate_cohort, with_overrides

from .acceptance_log import record

MASTER_SEED = 0
PRE_YEARS = range(2003, 2008)
POST_YEARS = range(2009, 2013)


class Check:
    """Collects named sub-checks so a failing criterion still reports every number."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.items = []
        self.start = time.perf_counter()

    def add(self, name, ok, value=""):
        self.items.append((name, bool(ok), value))

    def finish(self):
        elapsed = time.perf_counter() - self.start
        ok = all(o for _, o, _ in self.items)
        detail = "; ".join(f"{n}={v}{'' if o else ' (FAIL)'}" for n, o, v in self.items)
        record(self.number, self.title, ok, f"{detail}; {elapsed:.1f}s")
        failed = [f"{n}={v}" for n, o, v in self.items if not o]
        assert ok, f"criterion {self.number} failed: {', '.join(failed)}"


def year_means(records):
    acc = {}
    for r in records:
        if r.ok:
            acc.setdefault(r.test_year, []).append(r.auroc)
    return {y: float(np.mean(v)) for y, v in acc.items()}


def span_mean(means, years):
    return float(np.mean([means[y] for y in years]))


@pytest.fixture(scope="module")
def default_cohort():
    cfg = default_config()
    stays, events = generate_cohort(cfg)
    return Cohort(stays.drop(columns="latent_severity"), events, AggregationMap(cfg.aggregation_map()),
                  cfg.changeover_year)


# ---------------------------------------------------------------- 1

def pairwise_auroc(scores, labels):
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    return float(((pos > neg) + 0.5 * (pos == neg)).sum() / (pos.size * neg.size))


def test_criterion_01_auroc_oracle():
    chk = Check(1, "rank AUROC equals brute-force pairwise AUROC")
    gen = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        n = int(gen.integers(2, 51))
        scores = gen.integers(0, max(2, n // 2), n) / 7.0  # coarse grid injects ties
        labels = np.zeros(n, dtype=int)
        labels[: int(gen.integers(1, n))] = 1
        gen.shuffle(labels)
        worst = max(worst, abs(metrics.auroc(scores, labels) - pairwise_auroc(scores, labels)))
    elapsed = time.perf_counter() - chk.start
    chk.add("max_abs_diff", worst <= 1e-12, f"{worst:.2e}")
    chk.add("runtime_s", elapsed < 5, f"{elapsed:.2f}")
    chk.finish()


# ---------------------------------------------------------------- 2

def enumerated_p(d):
    ranks = metrics.midranks(np.abs(d))
    w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    signs = np.array(list(itertools.product((0, 1), repeat=len(d))))
    w_plus = signs @ ranks
    return min(1.0, 2 * np.count_nonzero(w_plus <= w + 1e-9) / 2 ** len(d))


def test_criterion_02_exact_wilcoxon():
    chk = Check(2, "exact Wilcoxon equals enumeration; normal approximation close at n=20")
    gen = np.random.default_rng(202)
    worst, done = 0.0, 0
    while done < 500:
        n = int(gen.integers(1, 11))
        a = gen.integers(0, 6, n) / 10.0
        b = gen.integers(0, 6, n) / 10.0
        d = a - b
        if not np.any(d):
            continue
        p = metrics.wilcoxon_signed_rank(a, b, method="exact").p_value
        worst = max(worst, abs(p - enumerated_p(d[d != 0])))
        done += 1
    approx_worst = 0.0
    for _ in range(200):
        a, b = gen.normal(0.05, 0.1, 20), np.zeros(20)
        exact = metrics.wilcoxon_signed_rank(a, b, method="exact").p_value
        approx = metrics.wilcoxon_signed_rank(a, b, method="normal").p_value
        approx_worst = max(approx_worst, abs(exact - approx))
    elapsed = time.perf_counter() - chk.start
    chk.add("exact_max_diff", worst <= 1e-12, f"{worst:.2e}")
    chk.add("normal_max_diff_n20", approx_worst <= 0.01, f"{approx_worst:.4f}")
    chk.add("runtime_s", elapsed < 30, f"{elapsed:.2f}")
    chk.finish()


# ---------------------------------------------------------------- 3

REMAP_STATE = {"examples": 0, "failures": []}


@settings(max_examples=60, deadline=None, derandomize=True)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def check_remap_closure(cohort_seed, perm_seed):
    cfg = with_overrides(default_config(), year_start=2006, year_end=2010, patients_per_year=12,
                         master_seed=cohort_seed % 1000)
    stays, events = generate_cohort(cfg)
    stays = stays.drop(columns="latent_severity")
    agg = AggregationMap(cfg.aggregation_map())
    post_stays = set(stays.loc[stays["admit_year"] >= cfg.changeover_year, "stay_id"])
    gen = np.random.default_rng(perm_seed)
    # injective relabel of each concept's post-era ids into that concept's own id set
    mapping = {}
    for c in cfg.concepts:
        targets = gen.permutation(np.array(c.itemids))[: len(c.post_era_itemids)]
        mapping.update(zip(c.post_era_itemids, targets.tolist()))
    relabeled = events.copy()
    hit = relabeled["stay_id"].isin(post_stays).to_numpy()
    relabeled.loc[hit, "itemid"] = relabeled.loc[hit, "itemid"].map(mapping)
    pre_rows = (stays["admit_year"] < cfg.changeover_year).to_numpy()
    cache = GridCache(stays, events, AGGREGATED, agg)
    fill = cache.fill_stats(np.flatnonzero(pre_rows), agg.concepts)
    a = build_matrix(stays, events, AGGREGATED, agg, fill)
    b = build_matrix(stays, relabeled, AGGREGATED, agg, fill)
    if not (np.array_equal(a.values, b.values) and a.column_names == b.column_names):
        REMAP_STATE["failures"].append(("aggregated", cohort_seed, perm_seed))
    items = GridCache(stays, events, ITEMID)
    train = np.flatnonzero(pre_rows)
    ifill = items.fill_stats(train, items.universe(train))
    post = build_matrix(stays[~pre_rows], events, ITEMID, None, ifill)
    if post.channel("mask").sum() != 0:
        REMAP_STATE["failures"].append(("itemid-mask", cohort_seed, perm_seed))
    REMAP_STATE["examples"] += 1


def test_criterion_03_remap_closure():
    chk = Check(3, "remap closure: aggregated matrix bit-identical, pre-era Item-ID masks empty post-changeover")
    check_remap_closure()
    n = REMAP_STATE["examples"]
    chk.add("relabelings", n >= 50, n)
    chk.add("violations", not REMAP_STATE["failures"], len(REMAP_STATE["failures"]))
    chk.finish()


# ---------------------------------------------------------------- 4

def test_criterion_04_drift(default_cohort):
    chk = Check(4, "one-time drift: Item-ID drops, aggregated holds, post-changeover years significant")
    base = RegimeSpec(ONE_TIME, task="mortality", train_years=(2001, 2002), test_years=tuple(range(2003, 2013)),
                      n_repeats=20, master_seed=MASTER_SEED)
    item = run(default_cohort, base.replace(representation=ITEMID))
    agg = run(default_cohort, base.replace(representation=AGGREGATED))
    elapsed = time.perf_counter() - chk.start
    mi, ma = year_means(item), year_means(agg)
    item_drop = span_mean(mi, PRE_YEARS) - span_mean(mi, POST_YEARS)
    agg_drop = span_mean(ma, PRE_YEARS) - span_mean(ma, POST_YEARS)
    chk.add("records", len(item) == len(agg) == 200 and all(r.ok for r in item + agg), len(item) + len(agg))
    chk.add("itemid_drop", item_drop >= 0.15, f"{item_drop:.3f}")
    chk.add("aggregated_drop", agg_drop <= 0.05, f"{agg_drop:.3f}")
    pvals = {c.test_year: (c.result.p_value if c.result else float("nan")) for c in compare(agg, item)}
    post = [y for y in range(default_cohort.changeover_year, 2013)]
    worst = max(pvals[y] for y in post)
    chk.add("max_post_p", all(pvals[y] < 0.01 for y in post), f"{worst:.2e}")
    chk.add("runtime_s", elapsed < 300, f"{elapsed:.0f}")
    chk.finish()


# ---------------------------------------------------------------- 5

def test_criterion_05_recovery(default_cohort):
    chk = Check(5, "short-term dips at the changeover and recovers; continuous aggregated tracks year-agnostic")
    years = tuple(range(2002, 2013))
    change = default_cohort.changeover_year
    short = run(default_cohort, RegimeSpec(SHORT_TERM, representation=ITEMID, test_years=years, n_repeats=5,
                                           master_seed=MASTER_SEED))
    ms = year_means(short)
    pre_mean = span_mean(ms, [y for y in years if y < change])
    chk.add("short_term_argmin", min(ms, key=ms.get) == change, min(ms, key=ms.get))
    recovered = [y for y in (change + 1, change + 2) if ms[y] >= pre_mean - 0.05]
    chk.add("recovery_year", bool(recovered), recovered[0] if recovered else "none")
    agnostic = run(default_cohort, RegimeSpec(YEAR_AGNOSTIC, representation=AGGREGATED, n_repeats=3,
                                              master_seed=MASTER_SEED))
    baseline = float(np.mean([r.auroc for r in agnostic if r.ok]))
    cont = run(default_cohort, RegimeSpec(CONTINUOUS, representation=AGGREGATED, test_years=years, n_repeats=2,
                                          master_seed=MASTER_SEED))
    mc = year_means(cont)
    worst = max(abs(mc[y] - baseline) for y in years)
    chk.add("year_agnostic_baseline", True, f"{baseline:.3f}")
    chk.add("continuous_max_dev", worst <= 0.05 and len(mc) == len(years), f"{worst:.3f}")
    chk.finish()


# ---------------------------------------------------------------- 6

def test_criterion_06_saturation(default_cohort):
    chk = Check(6, "saturation: 0.9 beats 0.1 on the final test year by a small gap")
    spec = RegimeSpec(ONE_TIME, representation=AGGREGATED, train_years=(2001, 2002), test_years=(2012,),
                      n_repeats=10, master_seed=MASTER_SEED)
    recs = run_saturation(default_cohort, spec, [0.1, 0.5, 0.9])
    by = {}
    for r in recs:
        if r.ok:
            by.setdefault(r.train_fraction, []).append(r.auroc)
    lo, hi = float(np.mean(by[0.1])), float(np.mean(by[0.9]))
    n_train = sorted({r.n_train for r in recs})
    chk.add("n_train", True, n_train)
    chk.add("auroc_0.1", lo >= 0.6, f"{lo:.3f}")
    chk.add("auroc_0.9", hi >= 0.6, f"{hi:.3f}")
    chk.add("gap", 0 < hi - lo <= 0.1, f"{hi - lo:.3f}")
    chk.finish()


# ---------------------------------------------------------------- 7

def test_criterion_07_ablation(default_cohort):
    chk = Check(7, "ablation: GCS analog alone strong then collapses; noise concept near chance")
    cfg = default_config()
    gcs = cfg.concepts_with_role("dominant")[0].name
    noise = cfg.concepts_with_role("noise")[0].name
    base = RegimeSpec(ONE_TIME, train_years=(2001, 2002), test_years=tuple(range(2003, 2013)),
                      master_seed=MASTER_SEED)
    recs = run_ablation(default_cohort, base, [gcs, noise], n_repeats=5)
    mg = year_means([r for r in recs if r.feature == gcs])
    mn = year_means([r for r in recs if r.feature == noise])
    pre, post = span_mean(mg, PRE_YEARS), span_mean(mg, POST_YEARS)
    chk.add(f"{gcs}_pre", pre >= 0.75, f"{pre:.3f}")
    chk.add(f"{gcs}_post", abs(post - 0.5) <= 0.05, f"{post:.3f}")
    lo, hi = min(mn.values()), max(mn.values())
    chk.add(f"{noise}_range", 0.4 <= lo and hi <= 0.6 and len(mn) == 10, f"[{lo:.3f}, {hi:.3f}]")
    chk.finish()


# ---------------------------------------------------------------- 8

def test_criterion_08_learner_sanity():
    chk = Check(8, "forest separates a linear task and is at chance on permuted labels")
    gen = np.random.default_rng(808)
    X = gen.uniform(-1, 1, (400, 2))
    y = (X[:, 0] + 0.7 * X[:, 1] > 0).astype(int)
    train, test = np.arange(300), np.arange(300, 400)
    hp = HyperParams(n_trees=100)
    m = fit_forest(X[train], y[train], hp, seed=1)
    sep = metrics.auroc(predict_proba(m, X[test]), y[test])
    yp = gen.permutation(y)
    m = fit_forest(X[train], yp[train], hp, seed=1)
    perm = metrics.auroc(predict_proba(m, X[test]), yp[test])
    chk.add("separable_auroc", sep >= 0.95, f"{sep:.3f}")
    chk.add("permuted_auroc", 0.4 <= perm <= 0.6, f"{perm:.3f}")
    chk.finish()


# ---------------------------------------------------------------- 9

def test_criterion_09_determinism(tmp_path):
    chk = Check(9, "run output byte-identical across --jobs values")
    (tmp_path / "synth.ini").write_text("[cohort]\nyear_start = 2006\nyear_end = 2010\npatients_per_year = 60\n")
    (tmp_path / "run.ini").write_text(
        "[cohort]\nsynth_config = synth.ini\n[experiment]\ntasks = mortality, los\n"
        "regimes = year_agnostic, one_time, continuous, short_term\ntrain_years = 2006-2007\n"
        "n_repeats = 3\ncv_folds = 3\n[search]\nn_trees = 8\nn_iter = 2\n")
    codes = [cli.main(["run", "--config", str(tmp_path / "run.ini"), "--out", str(tmp_path / f"j{j}"),
                       "--jobs", str(j)]) for j in (1, 3)]
    chk.add("exit_codes", codes == [0, 0], codes)
    for name in ("results.csv", "comparisons.csv"):
        same = (tmp_path / "j1" / name).read_bytes() == (tmp_path / "j3" / name).read_bytes()
        chk.add(name, same, "identical" if same else "differs")
    rows = len(pd.read_csv(tmp_path / "j1" / "results.csv"))
    chk.add("rows", rows > 0, rows)
    chk.finish()


# ---------------------------------------------------------------- 10

def test_criterion_10_pipeline_contracts():
    chk = Check(10, "forward-fill example, WBC aggregation example, LOS boundary")
    cells = np.full((24, 1), np.nan)
    cells[1, 0], cells[3, 0] = 5.0, 7.0
    imp = impute_simple(HourlyGrid(1, ["c"], cells), FillStats(["c"], {"c": 9.0}))
    ff = (imp.value[:4, 0].tolist(), imp.mask[:4, 0].tolist(), imp.delta[:4, 0].tolist())
    chk.add("forward_fill", ff == ([9.0, 5.0, 5.0, 7.0], [0, 1, 0, 1], [1, 0, 1, 0]), ff)
    ev = pd.DataFrame({"stay_id": [1, 1], "itemid": [861, 220546], "hour": [3, 3], "value": [10.0, 14.0]})
    wbc = AggregationMap({"wbc": {861, 1127, 1542, 220546}})
    cell = float(bucket_hourly(ev, 1, wbc).cells[3, 0])
    chk.add("wbc_cell", cell == 12.0, cell)
    los = los_label([3.0, 2.99]).tolist()
    chk.add("los_labels", los == [1, 0], los)
    chk.finish()
