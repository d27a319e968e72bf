import pandas as pd
import pytest

from ehrdrift import cohortio, config
from ehrdrift.learner import FAST_SPACE, SearchSpace
from ehrdrift.pipeline import AggregationMap
from ehrdrift.synthdata import default_config, generate_cohort, with_overrides


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    cfg = with_overrides(default_config(), year_start=2007, year_end=2009, patients_per_year=20)
    stays, events = generate_cohort(cfg)
    cohortio.write_cohort(out, stays, events)
    cohortio.write_map(out / "map.csv", AggregationMap(cfg.aggregation_map()))
    return out, stays, events


def test_round_trip(written):
    out, stays, events = written
    s = cohortio.read_stays(out / "stays.csv")
    pd.testing.assert_frame_equal(s, stays.drop(columns="latent_severity"))
    pd.testing.assert_frame_equal(cohortio.read_events(out / "events.csv"), events)
    o = cohortio.read_oracle(out / "oracle.csv")
    assert o["latent_severity"].tolist() == stays["latent_severity"].tolist()
    assert "latent_severity" not in pd.read_csv(out / "stays.csv").columns


def test_synthetic_output_validates_clean(written):
    out, stays, _ = written
    rep = cohortio.validate_files(out / "stays.csv", out / "events.csv", out / "map.csv")
    assert rep.warnings == [] and rep.n_excluded == 0 and rep.n_stays == len(stays)


def test_hour_24_is_fatal_with_row(tmp_path, written):
    out, _, _ = written
    ev = pd.read_csv(out / "events.csv")
    ev.loc[4, "hour"] = 24
    ev.to_csv(tmp_path / "events.csv", index=False)
    with pytest.raises(cohortio.IngestionError, match="row 5"):
        cohortio.read_events(tmp_path / "events.csv")


def test_unmapped_itemid_is_warning(tmp_path, written):
    out, _, _ = written
    ev = pd.read_csv(out / "events.csv")
    ev.loc[[0, 1, 2], "itemid"] = 777
    ev.to_csv(tmp_path / "events.csv", index=False)
    rep = cohortio.validate_files(out / "stays.csv", tmp_path / "events.csv", out / "map.csv")
    assert rep.n_unmapped_events == 3 and rep.unmapped_itemids == [777]
    assert len(rep.warnings) == 1 and "3 events" in rep.warnings[0]


def test_schema_errors(tmp_path):
    (tmp_path / "s.csv").write_text("stay_id,admit_year,age,icu_hours,mortality\n1,2001,50,40,0\n")
    with pytest.raises(cohortio.IngestionError, match="los_days"):
        cohortio.read_stays(tmp_path / "s.csv")
    (tmp_path / "s.csv").write_text("stay_id,admit_year,age,icu_hours,mortality,los_days\n"
                                    "1,2001,50,40,0,2\n1,2001,50,40,1,2\n")
    with pytest.raises(cohortio.IngestionError, match="row 2: duplicate"):
        cohortio.read_stays(tmp_path / "s.csv")
    (tmp_path / "s.csv").write_text("stay_id,admit_year,age,icu_hours,mortality,los_days\n"
                                    "1,2001,fifty,40,0,2\n")
    with pytest.raises(cohortio.IngestionError, match="row 1: column 'age'"):
        cohortio.read_stays(tmp_path / "s.csv")
    with pytest.raises(cohortio.IngestionError, match="not found"):
        cohortio.read_events(tmp_path / "missing.csv")


def test_excluded_stays_counted(tmp_path):
    (tmp_path / "s.csv").write_text("stay_id,admit_year,age,icu_hours,mortality,los_days\n"
                                    "1,2001,15,40,0,2\n2,2001,50,30,0,2\n3,2001,50,36,1,4\n")
    (tmp_path / "e.csv").write_text("stay_id,itemid,hour,value\n3,861,0,1.5\n")
    (tmp_path / "m.csv").write_text("concept,itemid\nwbc,861\n")
    rep = cohortio.validate_files(tmp_path / "s.csv", tmp_path / "e.csv", tmp_path / "m.csv")
    assert rep.n_excluded == 2


# ---------------------------------------------------------------- config files

def test_synth_config_echo_round_trip(tmp_path):
    text = config.dump_synth_config(default_config())
    for key in ("year_start", "mortality_steepness", "master_seed", "value_decimals", "[concept:gcs_total]",
                "unit_scale_post"):
        assert key in text
    (tmp_path / "c.ini").write_text(text)
    assert config.load_synth_config(tmp_path / "c.ini") == default_config()


def test_synth_config_partial_uses_defaults(tmp_path):
    (tmp_path / "c.ini").write_text("[cohort]\npatients_per_year = 7\n")
    cfg = config.load_synth_config(tmp_path / "c.ini")
    assert cfg.patients_per_year == 7 and cfg.concepts == default_config().concepts


@pytest.mark.parametrize("text, match", [
    ("[cohort]\nbogus = 1\n", "unknown key"),
    ("[cohort]\npatients_per_year = many\n", "patients_per_year"),
    ("[other]\n", "unknown section"),
    ("[concept:x]\nbaseline = 1\n", "missing key"),
])
def test_synth_config_errors(tmp_path, text, match):
    (tmp_path / "c.ini").write_text(text)
    with pytest.raises(config.ConfigFileError, match=match):
        config.load_synth_config(tmp_path / "c.ini")


def test_run_config_parsing(tmp_path):
    (tmp_path / "synth.ini").write_text("[cohort]\n")
    (tmp_path / "run.ini").write_text(
        "[cohort]\nsynth_config = synth.ini\n"
        "[experiment]\ntasks = mortality, los\nregimes = one_time, saturation\n"
        "train_years = 2001-2002\nonly_test_years = 2012\nfractions = 0.1, 0.9\n"
        "[search]\npreset = default\nn_iter = 3\nbootstrap = true\nmax_depth = 4, none\n")
    cfg = config.load_run_config(tmp_path / "run.ini")
    assert cfg.synth_config == tmp_path / "synth.ini"
    assert cfg.tasks == ("mortality", "los") and cfg.fractions == (0.1, 0.9)
    assert cfg.only_test_years == (2012,)
    assert cfg.search == SearchSpace(n_iter=3, max_depth=(4, None))
    echo = config.dump_run_config(cfg)
    (tmp_path / "echo.ini").write_text(echo.replace(str(tmp_path) + "/", ""))
    again = config.load_run_config(tmp_path / "echo.ini")
    assert again == cfg


def test_run_config_defaults():
    cfg = config.RunConfig()
    cfg.validate()
    assert cfg.search == FAST_SPACE and cfg.n_repeats == 20


@pytest.mark.parametrize("text, match", [
    ("[experiment]\ntasks = survival\n", "unknown task"),
    ("[experiment]\nregimes = weekly\n", "unknown regime"),
    ("[cohort]\nstays = nope.csv\nevents = nope.csv\nmap = nope.csv\n", "file not found"),
    ("[cohort]\nstays = a.csv\n", "together"),
    ("[search]\npreset = huge\n", "preset"),
    ("[experiment]\nfractions = 1.5\n", "outside"),
])
def test_run_config_errors(tmp_path, text, match):
    (tmp_path / "run.ini").write_text(text)
    with pytest.raises(config.ConfigFileError, match=match):
        config.load_run_config(tmp_path / "run.ini")
