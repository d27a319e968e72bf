import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrdrift.pipeline import (AGGREGATED, ITEMID, AggregationMap, FillStats, GridCache, HourlyGrid,
                               PipelineError, build_matrix, bucket_hourly, check_aligned,
                               compute_fill_stats, filter_cohort, impute_simple, los_label)
from ehrdrift.synthdata import default_config, generate_cohort, with_overrides

WBC = AggregationMap({"wbc": {861, 1127, 1542, 220546}})


def events(rows):
    return pd.DataFrame(rows, columns=["stay_id", "itemid", "hour", "value"])


def stays(ids, ages=None, los=None):
    n = len(ids)
    return pd.DataFrame({"stay_id": ids, "admit_year": [2005] * n, "age": ages or [60] * n,
                         "icu_hours": [48.0] * n, "mortality": [0, 1] * (n // 2) + [0] * (n % 2),
                         "los_days": los or [2.0] * n})


def one_column_grid(obs):
    cells = np.full((24, 1), np.nan)
    for h, v in obs.items():
        cells[h, 0] = v
    return HourlyGrid(1, ["c"], cells)


# ---------------------------------------------------------------- filter and labels

def test_filter_boundaries():
    df = pd.DataFrame({"stay_id": [1, 2, 3, 4], "age": [15, 16, 40, 40],
                       "icu_hours": [100.0, 36.0, 35.99, 36.0]})
    assert filter_cohort(df)["stay_id"].tolist() == [2, 4]
    assert filter_cohort(df.iloc[:0]).empty


def test_filter_keeps_first_stay_per_subject():
    df = pd.DataFrame({"stay_id": [5, 3, 9], "subject_id": [1, 1, 2], "age": [50] * 3,
                       "icu_hours": [40.0] * 3})
    assert filter_cohort(df)["stay_id"].tolist() == [3, 9]


def test_los_threshold():
    assert los_label([3.0, 2.99, 7.5]).tolist() == [1, 0, 1]


# ---------------------------------------------------------------- bucketing

def test_aggregated_cell_averages_member_itemids():
    ev = events([(1, 861, 3, 10.0), (1, 220546, 3, 14.0)])
    g = bucket_hourly(ev, 1, WBC)
    assert g.columns == ["wbc"]
    assert g.cells[3, 0] == 12.0
    assert np.isnan(np.delete(g.cells[:, 0], 3)).all()


def test_itemid_cells_stay_separate():
    ev = events([(1, 861, 3, 10.0), (1, 220546, 3, 14.0)])
    g = bucket_hourly(ev, 1, ITEMID)
    assert g.columns == [861, 220546]
    assert g.cells[3].tolist() == [10.0, 14.0]
    assert np.isnan(g.cells).sum() == 24 * 2 - 2


def test_same_hour_values_average():
    g = bucket_hourly(events([(1, 861, 5, 4.0), (1, 861, 5, 6.0)]), 1, ITEMID)
    assert g.cells[5, 0] == 5.0


def test_unmapped_events_dropped_and_counted():
    g = bucket_hourly(events([(1, 861, 0, 4.0), (1, 42, 0, 6.0)]), 1, WBC)
    assert g.dropped == 1 and g.cells[0, 0] == 4.0


def test_aggregation_map_rejects_shared_itemids():
    with pytest.raises(PipelineError):
        AggregationMap({"a": {1, 2}, "b": {2, 3}})
    with pytest.raises(PipelineError):
        AggregationMap({"a": set()})


# ---------------------------------------------------------------- imputation

def test_forward_fill_example():
    imp = impute_simple(one_column_grid({1: 5.0, 3: 7.0}), FillStats(["c"], {"c": 9.0}))
    assert imp.value[:4, 0].tolist() == [9.0, 5.0, 5.0, 7.0]
    assert imp.mask[:4, 0].tolist() == [0, 1, 0, 1]
    assert imp.delta[:4, 0].tolist() == [1, 0, 1, 0]


def test_fully_observed_column_is_identity():
    raw = {h: float(h * 2) for h in range(24)}
    imp = impute_simple(one_column_grid(raw), FillStats(["c"], {"c": -1.0}))
    assert imp.value[:, 0].tolist() == [raw[h] for h in range(24)]
    assert (imp.mask == 1).all() and (imp.delta == 0).all()


def test_never_observed_column():
    imp = impute_simple(one_column_grid({}), FillStats(["c"], {"c": 3.5}))
    assert (imp.value == 3.5).all() and (imp.mask == 0).all()
    assert imp.delta[:, 0].tolist() == list(range(1, 25))


def test_fill_stats():
    fs = compute_fill_stats([one_column_grid({0: 2.0}), one_column_grid({5: 4.0})])
    assert fs.defaults == {"c": 3.0}
    assert compute_fill_stats([one_column_grid({})]).defaults == {"c": 0.0}


@settings(max_examples=50)
@given(st.lists(st.one_of(st.none(), st.floats(-50, 50)), min_size=24, max_size=24))
def test_mask_delta_consistency(col):
    obs = {h: v for h, v in enumerate(col) if v is not None}
    imp = impute_simple(one_column_grid(obs), FillStats(["c"], {"c": 0.0}))
    m, d = imp.mask[:, 0], imp.delta[:, 0]
    assert np.array_equal(m == 1, d == 0)
    assert ((d >= 0) & (d <= 24)).all()
    for h in range(1, 24):
        if m[h] == 0:
            assert d[h] == d[h - 1] + 1


# ---------------------------------------------------------------- matrices

def test_width_and_no_event_row():
    cfg = default_config()
    agg = AggregationMap(cfg.aggregation_map())
    st_ = stays([1, 2], ages=[30, 70])
    ev = events([(1, 198, 0, 14.0)])
    fill = FillStats(agg.concepts, {c: float(i) for i, c in enumerate(agg.concepts)})
    fm = build_matrix(st_, ev, AGGREGATED, agg, fill)
    assert fm.values.shape == (2, 24 * 3 * 15 + 1) == (2, 1081)
    row = fm.values[1]
    assert row[-1] == 70
    assert np.array_equal(fm.channel("value")[1], np.repeat(fill.vector()[:, None], 24, axis=1))
    assert (fm.channel("mask")[1] == 0).all()
    assert (fm.channel("delta")[1] == np.arange(1, 25)).all()
    assert fm.column_names[:3] == [f"{agg.concepts[0]}_h00_{c}" for c in ("value", "mask", "delta")]
    assert fm.column_names[-1] == "age"


def test_test_time_unknown_itemids_dropped():
    fill = FillStats([861], {861: 1.0})
    fm = build_matrix(stays([1, 2]), events([(1, 861, 2, 5.0), (2, 220546, 2, 7.0)]), ITEMID, None, fill)
    assert fm.dropped_events == 1
    assert fm.channel("mask")[1].sum() == 0


def test_alignment_check():
    a = build_matrix(stays([1, 2]), events([]), ITEMID, None, FillStats([861], {861: 0.0}))
    b = build_matrix(stays([1, 2]), events([]), ITEMID, None, FillStats([862], {862: 0.0}))
    check_aligned(a, a)
    with pytest.raises(PipelineError):
        check_aligned(a, b)


@pytest.fixture(scope="module")
def small_cohort():
    cfg = with_overrides(default_config(), year_start=2006, year_end=2009, patients_per_year=25)
    s, e = generate_cohort(cfg)
    return cfg, s.drop(columns="latent_severity"), e


def test_permutation_invariance(small_cohort):
    cfg, s, e = small_cohort
    agg = AggregationMap(cfg.aggregation_map())
    fill = FillStats(agg.concepts, {c: 0.0 for c in agg.concepts})
    a = build_matrix(s, e, AGGREGATED, agg, fill)
    shuffled = e.sample(frac=1.0, random_state=3).reset_index(drop=True)
    b = build_matrix(s, shuffled, AGGREGATED, agg, fill)
    assert np.array_equal(a.values, b.values)


def test_grid_cache_matches_direct_build(small_cohort):
    cfg, s, e = small_cohort
    agg = AggregationMap(cfg.aggregation_map())
    for rep, m in ((ITEMID, None), (AGGREGATED, agg)):
        cache = GridCache(s, e, rep, m)
        train = np.flatnonzero(s["admit_year"].to_numpy() < 2008)
        cols = cache.universe(train)
        fill = cache.fill_stats(train, cols)
        direct = build_matrix(s.iloc[train], e, rep, m, fill)
        assert np.array_equal(cache.matrix(train, fill).values, direct.values)
        grids = [bucket_hourly(e, sid, rep if m is None else m, cols) for sid in s["stay_id"].iloc[train]]
        ref = compute_fill_stats(grids)
        assert fill.defaults == pytest.approx(ref.defaults, rel=1e-12)


def test_fill_and_universe_use_training_rows_only(small_cohort):
    cfg, s, e = small_cohort
    cache = GridCache(s, e, ITEMID)
    train = np.flatnonzero(s["admit_year"].to_numpy() < 2008)
    cols = cache.universe(train)
    fill = cache.fill_stats(train, cols)
    # perturb every event of non-training stays; nothing fitted may change
    test_ids = set(s["stay_id"].iloc[np.setdiff1d(np.arange(len(s)), train)])
    e2 = e.copy()
    hit = e2["stay_id"].isin(test_ids)
    e2.loc[hit, "value"] = e2.loc[hit, "value"] * 3 + 100
    e2.loc[hit, "itemid"] = 555_555
    cache2 = GridCache(s, e2, ITEMID)
    assert cache2.universe(train) == cols
    assert cache2.fill_stats(train, cols).defaults == fill.defaults
    assert set(cols) <= {i for c in cfg.concepts for i in c.pre_era_itemids}


def test_post_changeover_rows_have_empty_masks_under_pre_universe(small_cohort):
    cfg, s, e = small_cohort
    cache = GridCache(s, e, ITEMID)
    years = s["admit_year"].to_numpy()
    train = np.flatnonzero(years < cfg.changeover_year)
    fill = cache.fill_stats(train, cache.universe(train))
    post = cache.matrix(np.flatnonzero(years >= cfg.changeover_year), fill)
    assert post.channel("mask").sum() == 0
