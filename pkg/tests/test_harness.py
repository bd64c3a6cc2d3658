import json

import numpy as np
import pytest

from topobw.datasets import DatasetSpec
from topobw.harness import (RESULT_HEADER, ConfigError, ExperimentConfig, SweepConfig,
                            TrialRecord, desk_preset, emit_results, read_results,
                            run_ablation, run_experiment, run_sensitivity_sweep, run_trial,
                            summarize, trial_context, trial_seed, write_summary_csv)
from topobw.optimizer import OptimizerConfig
from topobw.selectors import reference_rule

FAST_OPT = OptimizerConfig(epochs=15, early_stop=True)


def small(dataset="bimodal1d", **kw):
    base = dict(n_points=300, n_trials=2, grid=60, opt_cfg=FAST_OPT)
    return ExperimentConfig(dataset, **{**base, **kw})


def test_trial_seed_is_documented_hash():
    ss = np.random.SeedSequence([3, 4])
    assert trial_seed(3, 4) == int(ss.generate_state(1, dtype=np.uint32)[0])
    assert trial_seed(3, 4) != trial_seed(3, 5) != trial_seed(4, 4)


def test_single_method_single_record():
    res = run_experiment(small(methods=("scott",), n_trials=1))
    assert len(res.records) == 1
    rec = res.records[0]
    assert rec.method == "scott" and rec.kld > 0 and rec.emd_domain > 0
    row = res.summary[0]
    assert row["n"] == 1 and row["kld_mean"] == rec.kld and row["kld_std"] is None


def test_same_sample_for_every_method():
    cfg = small(methods=("scott", "silverman"), metrics=("kld",))
    ctx = trial_context(cfg, 0)
    recs = run_trial(cfg, 0)
    assert [r.method for r in recs] == ["scott", "silverman"]
    assert recs[0].h == pytest.approx(reference_rule("scott", ctx.points).h)
    assert recs[1].h == pytest.approx(reference_rule("silverman", ctx.points).h)
    # on a bimodal sample the IQR-robust Silverman rule is narrower than Scott
    assert recs[0].h >= recs[1].h


def test_deterministic_and_jobs_independent():
    cfg = small(methods=("scott", "tda"))
    a = run_experiment(cfg).records
    b = run_experiment(cfg).records
    c = run_experiment(ExperimentConfig(**{**vars(cfg), "n_jobs": 2})).records
    assert a == b == c


def test_records_and_summary_order():
    res = run_experiment(small(methods=("tda", "scott", "nrr"), metrics=("kld",)))
    assert [r.method for r in res.records] == ["scott", "nrr", "tda"] * 2
    assert [row["group"] for row in res.summary] == ["scott", "nrr", "tda"]
    tda = res.by_method("tda")
    assert all(r.diagnostics.startswith("epochs_run=") for r in tda)
    assert res.mean("nrr") == pytest.approx(np.mean([r.kld for r in res.by_method("nrr")]))


def _toy_records():
    return [TrialRecord("bimodal1d", 0, 11, "scott", 0.3, 0.01, 0.02, 4.0, None, None),
            TrialRecord("bimodal1d", 0, 11, "tda", None, None, None, None, None,
                        "OptimizationError: boom, with comma"),
            TrialRecord("bimodal1d", 1, 12, "scott", 1 / 3, 0.1 + 0.2, None, None, 0.5, "")]


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_output_round_trip(tmp_path, fmt):
    path = tmp_path / f"out.{fmt}"
    recs = _toy_records()
    emit_results(recs, fmt, path)
    back = read_results(path)
    assert [r.h for r in back] == [0.3, None, 1 / 3]
    assert back[2].kld == 0.1 + 0.2
    assert back[1].diagnostics == "OptimizationError: boom, with comma"
    assert back[0] == recs[0]


def test_csv_header_exact(tmp_path):
    path = tmp_path / "out.csv"
    emit_results(_toy_records(), "csv", path)
    lines = path.read_text().splitlines()
    assert lines[0] == "dataset,trial,seed,method,h,kld,emd_domain,emd_grid,time_s,diagnostics"
    assert tuple(lines[0].split(",")) == RESULT_HEADER
    # missing values are empty cells, not zeros
    assert lines[2].startswith("bimodal1d,0,11,tda,,,,,,")


def test_emit_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_results(_toy_records(), "xml", tmp_path / "x")


def test_summary_std_convention(tmp_path):
    rows = summarize(_toy_records())
    scott = rows[0]
    assert scott["n"] == 2 and scott["n_failed"] == 0
    assert scott["kld_std"] == pytest.approx(np.std([0.01, 0.1 + 0.2], ddof=1))
    assert scott["emd_grid_std"] is None
    tda = rows[1]
    assert tda["n_failed"] == 1 and tda["kld_mean"] is None
    path = tmp_path / "s.csv"
    write_summary_csv(rows, path)
    assert path.read_text().splitlines()[0].startswith("group,n,n_failed,h_mean")


def test_failed_selector_is_recorded(monkeypatch):
    import topobw.harness as harness

    def boom(*a, **k):
        raise RuntimeError("no luck")

    monkeypatch.setattr(harness, "select_bandwidth_tda", boom)
    res = run_experiment(small(methods=("scott", "tda"), metrics=("kld",)))
    tda = res.by_method("tda")
    assert [r.h for r in tda] == [None, None]
    assert tda[0].diagnostics == "RuntimeError: no luck"
    assert all(r.kld is not None for r in res.by_method("scott"))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("clusters2d", methods=("isj",))
    with pytest.raises(ConfigError):
        ExperimentConfig("gauss3d", metrics=("kld", "emd"))
    with pytest.raises(ConfigError):
        ExperimentConfig("bimodal1d", methods=("magic",))
    with pytest.raises(ConfigError):
        ExperimentConfig("bimodal1d", n_trials=0)
    with pytest.raises(ConfigError):
        desk_preset("nope")
    assert ExperimentConfig("gauss3d").metrics == ("kld",)
    assert ExperimentConfig("clusters2d").metrics == ("kld", "emd")


def test_config_dict_round_trip():
    cfg = small("clusters2d", grid=(20, 30), methods=("scott", "tda"))
    data = json.loads(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.from_dict(data)
    assert json.loads(json.dumps(back.to_dict())) == data
    assert back.resolution == (20, 30)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**data, "bogus": 1})


def test_single_value_sweep_equals_experiment():
    cfg = small(methods=("tda",), metrics=("kld",))
    sweep = run_sensitivity_sweep(SweepConfig("alpha_count", [1.0], cfg))
    assert sweep.results[0].records == run_experiment(cfg).records
    rows = sweep.rows()
    assert rows[0]["parameter"] == "alpha_count" and rows[0]["value"] == 1.0


def test_grid_sweep_changes_resolution():
    cfg = small(methods=("scott",), metrics=("kld",))
    sweep = SweepConfig("grid_resolution", [30, 90], cfg)
    assert sweep.config_for(30).resolution == (30,)
    with pytest.raises(ConfigError):
        SweepConfig("learning_rate", [1], cfg)


def test_ablation_labels_and_shared_samples():
    cfg = small("clusters2d", n_points=200, grid=24, n_trials=1, metrics=("kld",))
    res = run_ablation(cfg, ("full", "all_hp", "no_tp"))
    assert [r.method for r in res.records] == ["tda:full", "tda:all_hp", "tda:no_tp"]
    assert len({r.seed for r in res.records}) == 1
    assert [row["group"] for row in res.summary] == ["tda:full", "tda:all_hp", "tda:no_tp"]
    with pytest.raises(Exception):
        run_ablation(cfg, ("nonsense",))


def test_desk_preset_overrides():
    cfg = desk_preset("heavytail3d", n_trials=3)
    assert cfg.n_trials == 3 and cfg.resolution == (32, 32, 32)
    assert cfg.opt_cfg.early_stop and "isj" not in cfg.methods
    assert cfg.dataset == DatasetSpec("heavytail3d")
