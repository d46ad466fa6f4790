from __future__ import annotations

import json

import numpy as np
import pytest

from deepcox.errors import InvalidArgumentError
from deepcox.study import SIGNAL_RANGE, StudyConfig, make_test_set, run_monte_carlo, summarize_predictions
from deepcox.ensemble import draw_subsamples


def tiny(**kw):
    base = dict(ns=(60,), alphas=(0.7, 0.9), B=8, R=3, m=6, n_pairs=2, gap_tol=0.5,
                widths=(10, 6, 1), train={"epochs": 5, "dtype": "float64"}, seed=3)
    base.update(kw)
    return StudyConfig(**base)


def test_config_round_trip_and_validation(tmp_path):
    cfg = tiny()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert StudyConfig.load(path) == cfg
    with pytest.raises(InvalidArgumentError):
        StudyConfig.from_dict({"bogus": 1})
    with pytest.raises(InvalidArgumentError):
        tiny(alphas=(1.5,))
    assert cfg.replication_key(1, 60) == tiny(R=50, level=0.9).replication_key(1, 60)
    assert cfg.replication_key(1, 60) != tiny(B=9).replication_key(1, 60)


def test_test_set_pairs_follow_the_filter():
    ts = make_test_set(1, 40, 5, seed=0, gap_tol=0.1)
    lo, hi = SIGNAL_RANGE
    prev = (-1, -1)
    for i, j in ts.pairs:
        assert (i, j) > prev and i < j
        prev = (i, j)
        assert lo <= ts.truth[i] <= hi and lo <= ts.truth[j] <= hi
        assert abs(abs(ts.truth[i] - ts.truth[j]) - 1.0) <= 0.1
    np.testing.assert_array_equal(make_test_set(1, 40, 5, seed=0).points, ts.points)


def test_summary_of_identical_points_has_zero_contrast():
    J = draw_subsamples(20, 5, 10, seed=1).entries
    col = np.random.default_rng(0).normal(size=10)
    P = np.column_stack([col, col])
    out = summarize_predictions(P, J, 5, [(0, 1)])
    assert out["contrast_estimate"][0] == 0.0
    assert out["contrast_se"][0] == 0.0


def test_run_is_deterministic_and_writes_tables(tmp_path):
    cfg = tiny()
    res_a = run_monte_carlo(cfg, tmp_path / "a", progress=False)
    run_monte_carlo(cfg, tmp_path / "b", threads=2, cache_dir=tmp_path / "cache", progress=False)
    # second pass reads the cache
    run_monte_carlo(cfg, tmp_path / "c", cache_dir=tmp_path / "cache", progress=False)
    for name in ("pointwise_metrics.csv", "contrast_metrics.csv", "raw_pointwise_case1_n60_a0.7.csv",
                 "coverage_vs_alpha_case1_n60.dat", "study.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    assert [c.status for c in res_a] == ["ok", "ok"]
    header = (tmp_path / "a" / "pointwise_metrics.csv").read_text().splitlines()[0]
    assert header.startswith("case,n,alpha,r,B,status,bias,mae,emp_sd,mean_se,coverage,avg_interval_length")
    dat = (tmp_path / "a" / "coverage_vs_alpha_case1_n60.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 3


def test_single_replication_reports_missing_empsd(tmp_path):
    res = run_monte_carlo(tiny(R=1, alphas=(0.9,)), tmp_path, progress=False)
    assert res[0].pointwise.emp_sd is None
    assert res[0].pointwise.coverage is not None
    row = (tmp_path / "pointwise_metrics.csv").read_text().splitlines()[1].split(",")
    assert row[8] == "NA"


def test_failed_cells_are_flagged_not_fatal(tmp_path):
    # training at an absurd step size diverges in every replication
    cfg = tiny(alphas=(0.9,), train={"epochs": 30, "learning_rate": 1e200, "optimizer": "plain-gd", "dropout_rate": 0.0})
    res = run_monte_carlo(cfg, tmp_path, progress=False)
    assert res[0].status == "failed"
    summary = json.loads((tmp_path / "study.json").read_text())
    assert summary["cells"][0]["failures"][0]["error"].startswith("TrainingDivergedError")
