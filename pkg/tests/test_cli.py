"""Tests for the config-driven command line: validation (all errors at once),
defaults, reproducible outputs, exit codes, and agreement with the library."""

import json

import numpy as np
import pytest

from beliefplay import cli
from beliefplay.cli import ConfigError, main, parse_config
from beliefplay.dynamics import UpdateRule, run
from beliefplay.param_belief import Belief, UpdateSchedule


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


BASE = {"game": "cournot", "horizon": 200, "seed": 3,
        "init": {"theta": [0.8, 0.2], "q": [1.0, 1.0]}}


# ---------------------------------------------------------------------------
# Parsing and validation


def test_parse_defaults():
    cfg = parse_config(json.dumps({"game": "investment", "horizon": 10}))
    assert cfg.rule.kind == "simultaneous"
    assert cfg.schedule.kind == "every_stage"
    assert cfg.estimator == "bayes"
    assert np.allclose(cfg.theta1, 1.0 / 3.0)
    assert np.array_equal(cfg.q1, [0.5, 0.5])
    assert cfg.seeds == [0]
    assert len(cfg.config_hash) == 64


def test_parse_collects_every_error():
    doc = {"game": "nonesuch", "rule": "warp", "schedule": {"kind": "odd"},
           "estimator": "mle", "horizon": -5, "seed": 1,
           "seeds": {"start": 0, "count": 2}, "typo_key": 1}
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    text = "; ".join(err.value.errors)
    assert "unknown key 'typo_key'" in text
    assert "unknown game id" in text
    assert "unknown rule kind" in text
    assert "unknown schedule kind" in text
    assert "unknown estimator" in text
    assert "horizon must be a positive integer" in text
    assert "either 'seed' or 'seeds'" in text
    assert len(err.value.errors) >= 7


def test_parse_rejects_boundary_belief():
    doc = {"game": "investment", "horizon": 10,
           "init": {"theta": [1.0, 0.0, 0.0]}}
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    assert any("full support" in e for e in err.value.errors)


def test_parse_rejects_belief_shape_and_sum():
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"game": "investment", "horizon": 10,
                                 "init": {"theta": [0.5, 0.5]}}))
    assert any("wrong length" in e for e in err.value.errors)
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"game": "investment", "horizon": 10,
                                 "init": {"theta": [0.5, 0.4, 0.4]}}))
    assert any("sum to 1" in e for e in err.value.errors)


def test_parse_rejects_infeasible_strategy():
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"game": "cournot", "horizon": 10,
                                 "init": {"q": [4.0, 1.0]}}))
    assert any("outside the strategy set" in e for e in err.value.errors)


def test_parse_estimator_and_rule_compatibility():
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"game": "cournot", "horizon": 10,
                                 "estimator": "ols"}))
    assert any("affine" in e for e in err.value.errors)
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"game": "cournot", "horizon": 10,
                                 "rule": "fictitious_play"}))
    assert any("finite game" in e for e in err.value.errors)


def test_parse_rule_and_schedule_options():
    cfg = parse_config(json.dumps({
        "game": "cournot", "horizon": 10,
        "rule": {"kind": "linear", "alpha": 0.25},
        "schedule": {"kind": "fixed_batch", "batch": 4},
    }))
    assert cfg.rule.kind == "linear"
    assert cfg.rule.alpha_schedule(99) == 0.25
    assert cfg.schedule.kind == "fixed_batch" and cfg.schedule.batch_size == 4
    cfg = parse_config(json.dumps({
        "game": "cournot", "horizon": 10,
        "schedule": {"kind": "two_timescale", "gap": "5t"},
    }))
    assert cfg.schedule.gap_fn(3) == 15


def test_parse_seed_range():
    cfg = parse_config(json.dumps({"game": "cournot", "horizon": 10,
                                   "seeds": {"start": 4, "count": 3}}))
    assert cfg.seeds == [4, 5, 6]
    assert cfg.master_seed == 4


def test_parse_invalid_json():
    with pytest.raises(ConfigError) as err:
        parse_config("{not json")
    assert "not valid JSON" in err.value.errors[0]


def test_config_hash_tracks_content():
    a = parse_config(json.dumps({"game": "cournot", "horizon": 10}))
    b = parse_config(json.dumps({"game": "cournot", "horizon": 10}))
    c = parse_config(json.dumps({"game": "cournot", "horizon": 11}))
    assert a.config_hash == b.config_hash != c.config_hash


# ---------------------------------------------------------------------------
# Subcommands end to end


def test_run_outputs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, dict(BASE))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a_csv = (tmp_path / "a" / "trajectory.csv").read_bytes()
    b_csv = (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a_csv == b_csv
    a_sum = (tmp_path / "a" / "summary.json").read_bytes()
    b_sum = (tmp_path / "b" / "summary.json").read_bytes()
    assert a_sum == b_sum


def test_run_matches_library(tmp_path):
    cfg_path = write_config(tmp_path, dict(BASE, output_dir=str(tmp_path)))
    assert main(["run", "--config", cfg_path]) == 0
    lib = run(parse_config(json.dumps(BASE)).game, UpdateRule.simultaneous(),
              UpdateSchedule.every_stage(),
              (Belief.from_probs([0.8, 0.2]), np.asarray([1.0, 1.0])),
              BASE["horizon"], seed=3)
    rows = (tmp_path / "trajectory.csv").read_text().strip().split("\n")[2:]
    assert len(rows) == lib.horizon
    for t, row in enumerate(rows):
        cells = [float(x) for x in row.split(",")]
        assert np.array_equal(cells[1:3], lib.thetas[t])
        assert np.array_equal(cells[3:5], lib.qs[t])
        assert cells[5] == lib.cs[t][0]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["schema"] == "beliefplay/report-v1"
    assert summary["final_q"] == lib.summary["final_q"]
    assert "config_hash" in summary and summary["master_seed"] == 3


def test_run_multi_seed_files(tmp_path):
    doc = dict(BASE, output_dir=str(tmp_path))
    del doc["seed"]
    doc["seeds"] = {"start": 0, "count": 2}
    doc["horizon"] = 50
    assert main(["run", "--config", write_config(tmp_path, doc)]) == 0
    for s in (0, 1):
        assert (tmp_path / ("trajectory_%d.csv" % s)).exists()
        assert (tmp_path / ("summary_%d.json" % s)).exists()


def test_seed_override_and_out_flags(tmp_path):
    cfg = write_config(tmp_path, dict(BASE, horizon=50))
    out = tmp_path / "elsewhere"
    assert main(["run", "--config", cfg, "--out", str(out),
                 "--seed-override", "99"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 99


def test_fixed_points_subcommand(tmp_path):
    cfg = write_config(tmp_path, dict(BASE, output_dir=str(tmp_path)))
    assert main(["fixed-points", "--config", cfg]) == 0
    doc = json.loads((tmp_path / "fixed_points.json").read_text())
    ids = sorted(c["cluster_id"] for c in doc["clusters"])
    assert ids == ["complete_info", "theta_dagger"]
    assert doc["all_fixed_points_complete"] is False
    assert doc["global_stability"]["verdict"] == "not_globally_stable"


def test_rate_subcommand(tmp_path):
    doc = {"game": "investment", "horizon": 800,
           "seeds": {"start": 0, "count": 2},
           "analysis": {"rate": {"param": 0, "burn_in": 100}},
           "output_dir": str(tmp_path)}
    assert main(["rate", "--config", write_config(tmp_path, doc)]) == 0
    out = json.loads((tmp_path / "rate.json").read_text())
    assert out["param"] == 0
    assert len(out["per_seed"]) == 2
    assert out["pooled_slope"] < 0.0
    assert out["relative_error"] is not None


def test_ols_estimator_run(tmp_path):
    doc = {"game": "affine", "estimator": "ols", "horizon": 2000, "seed": 0,
           "output_dir": str(tmp_path)}
    assert main(["run", "--config", write_config(tmp_path, doc)]) == 0
    out = json.loads((tmp_path / "summary.json").read_text())
    assert out["ols_runs"][0]["max_abs_error"] < 0.1


# ---------------------------------------------------------------------------
# Exit codes


def test_exit_code_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 3
    assert "cannot read config" in capsys.readouterr().err


def test_exit_code_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {"game": "nonesuch", "horizon": 10})
    assert main(["run", "--config", cfg]) == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_unknown_cluster(tmp_path, capsys):
    doc = dict(BASE, output_dir=str(tmp_path),
               analysis={"stability": {"cluster": "nonesuch"}})
    assert main(["stability", "--config", write_config(tmp_path, doc)]) == 2
    assert "unknown cluster id" in capsys.readouterr().err


def test_exit_code_usage_error():
    assert main(["run"]) == 1  # missing --config
