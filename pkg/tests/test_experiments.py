"""Experiment sweep, report emission and round trips."""
import dataclasses
import json

import numpy as np
import pytest

from tvbilevel.bfgs import TraceRecord
from tvbilevel.experiments import (
    DatasetConfig,
    ExperimentConfig,
    ExperimentReport,
    ExperimentRow,
    config_from_mapping,
    denoise_set,
    emit_all,
    emit_plot_data,
    emit_report_json,
    emit_table,
    load_config,
    load_table,
    relative_difference_pct,
    run_experiment,
)
from tvbilevel.state import GAUSSIAN_ONLY, FidelitySpec

TINY_TOML = """
[dataset]
kind = "ellipses"
rows = 8
cols = 8
n = 3
gaussian_sigma = 0.05

[experiment]
fidelity = "gaussian_only"
n_list = [3]
theta_list = [0.5]
lam0 = [500.0]
master_seed = 11

[run]
max_iter = 2
step_tol = 1e-3
grad_tol = 0.0

[run.dynamic]
initial_fraction = 0.5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(TINY_TOML)
    return load_config(path)


def fake_trace(values, sizes):
    out = []
    for k, (v, s) in enumerate(zip(values, sizes)):
        out.append(TraceRecord(
            iteration=k, lam=(float(v),), value=float(v), grad_norm=1.0,
            sample_size=s, condition_met=True, next_size=s, alpha=0.5,
            update_applied=k > 0, state_solves=3 * (k + 1),
            adjoint_solves=k + 1,
        ))
    return tuple(out)


def test_config_parsing(tiny_config):
    cfg = tiny_config
    assert cfg.dataset == DatasetConfig(kind="ellipses", rows=8, cols=8, n=3,
                                        gaussian_sigma=0.05)
    assert cfg.fidelity == "gaussian_only"
    assert cfg.n_list == (3,)
    assert cfg.lam0 == (500.0,)
    assert cfg.master_seed == 11
    assert cfg.initial_fraction == 0.5
    assert cfg.run_full.initial_sample is None
    assert cfg.run_full.max_iter == 2
    assert cfg.run_dynamic.max_iter == 2
    assert cfg.run_full.grad_tol == 0.0


def test_config_defaults_by_fidelity():
    cfg = config_from_mapping({"experiment": {"fidelity": "mixed_l1_l2"}})
    assert cfg.lam0 == (50.0, 10.0)
    cfg = config_from_mapping({})
    assert cfg.lam0 == (1000.0,)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(theta_list=(1.0,))
    with pytest.raises(ValueError):
        ExperimentConfig(n_list=())
    with pytest.raises(ValueError):
        ExperimentConfig(n_list=(0,))
    with pytest.raises(ValueError):
        ExperimentConfig(fidelity="poisson")
    with pytest.raises(ValueError):
        ExperimentConfig(lam0=(1.0, 2.0))
    with pytest.raises(ValueError):
        ExperimentConfig(initial_fraction=0.0)
    with pytest.raises(ValueError):
        config_from_mapping({"run": {"walrus": 1}})


def test_initial_sample_rounding():
    cfg = ExperimentConfig(n_list=(20,), initial_fraction=0.2)
    assert cfg.initial_sample_for(20) == 4
    assert cfg.initial_sample_for(4) == 2
    assert cfg.initial_sample_for(1) == 1
    assert cfg.initial_sample_for(2) == 2


def test_relative_difference():
    assert relative_difference_pct([3427.7], [3334.5]) == pytest.approx(
        100.0 * 93.2 / 3427.7, rel=1e-12)
    assert relative_difference_pct([0.0], [5.0]) == float("inf")
    assert relative_difference_pct([2.0, 2.0], [1.0, 1.0]) == pytest.approx(50.0)


def test_run_experiment_structure(tiny_config):
    report = run_experiment(tiny_config)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.error == ""
    assert row.n == 3 and row.theta == 0.5
    assert len(row.lambda_full) == 1 and len(row.lambda_sampled) == 1
    assert row.diff_pct >= 0.0
    assert row.s0 == 2
    assert row.s_end >= row.s0
    assert row.eff_full > 0 and row.eff_dyn > 0
    assert 3 in report.full_traces
    assert (3, 0.5) in report.dynamic_traces


def test_run_experiment_records_row_errors(tiny_config):
    cfg = dataclasses.replace(tiny_config, theta_list=(0.0, 0.5))
    report = run_experiment(cfg)
    assert len(report.rows) == 2
    bad, good = report.rows
    assert bad.error.startswith("dynamic:")
    assert bad.lambda_full is None
    assert good.error == ""


def test_table_round_trip(tmp_path):
    rows = (
        ExperimentRow(10, 0.5, (3334.5,), (3427.7,), 2, 3, 140, 84, 7, 21, 2.7),
        ExperimentRow(8, 0.1, (50.0, 10.0), (51.5, 9.5), 2, 6, 90, 60, 5, 9, 3.25),
        ExperimentRow(4, 0.3, error="dynamic: pair 1: solver diverged, badly"),
    )
    report = ExperimentReport(rows=rows, full_traces={}, dynamic_traces={})
    path = tmp_path / "table.csv"
    emit_table(report, path)
    assert load_table(path) == rows
    header = path.read_text().splitlines()[0]
    assert header.startswith("N,theta,lambda_full,lambda_sampled,S0,S_end,"
                             "eff_full,eff_dyn,iters_full,iters_dyn,diff_pct")


def test_empty_report_gives_header_only(tmp_path):
    report = ExperimentReport(rows=(), full_traces={}, dynamic_traces={})
    path = tmp_path / "table.csv"
    emit_table(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert load_table(path) == ()


def test_report_json_sorted_and_complete(tmp_path):
    report = ExperimentReport(
        rows=(ExperimentRow(2, 0.5, (1.0,), (1.1,), 2, 2, 10, 8, 2, 2, 10.0),),
        full_traces={2: fake_trace([3.0, 2.0], [2, 2])},
        dynamic_traces={(2, 0.5): fake_trace([3.0, 2.5], [1, 2])},
    )
    path = tmp_path / "report.json"
    emit_report_json(report, path)
    text = path.read_text()
    doc = json.loads(text)
    assert set(doc) == {"rows", "traces"}
    assert doc["traces"]["dynamic"]["2:0.5"][1]["sample_size"] == 2
    assert doc["rows"][0]["lambda_full"] == [1.0]
    assert text == json.dumps(doc, sort_keys=True, indent=2) + "\n"


def test_plot_series_files(tmp_path):
    report = ExperimentReport(
        rows=(),
        full_traces={4: fake_trace([5.0, 4.0, 3.5], [4, 4, 4])},
        dynamic_traces={(4, 0.3): fake_trace([5.0, 4.2], [2, 3])},
    )
    written = emit_plot_data(report, tmp_path)
    names = sorted(p.name for p in written)
    assert names == [
        "objective_dyn_N4_theta0.3.dat",
        "objective_full_N4.dat",
        "samples_dyn_N4_theta0.3.dat",
    ]
    full = (tmp_path / "objective_full_N4.dat").read_text().splitlines()
    assert len(full) == 3
    assert full[0].split() == ["0", "5.0"]
    sizes = [int(line.split()[1])
             for line in (tmp_path / "samples_dyn_N4_theta0.3.dat").read_text().splitlines()]
    assert sizes == sorted(sizes)


def test_emit_all_and_byte_determinism(tiny_config, tmp_path):
    report1 = run_experiment(tiny_config)
    report2 = run_experiment(tiny_config)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    emit_all(report1, out1)
    emit_all(report2, out2)
    for name in ("table.csv", "report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    plots1 = sorted((out1 / "plots").iterdir())
    plots2 = sorted((out2 / "plots").iterdir())
    assert [p.name for p in plots1] == [p.name for p in plots2]
    for p1, p2 in zip(plots1, plots2):
        assert p1.read_bytes() == p2.read_bytes()


def test_denoise_set_improves_mse(tiny_config):
    training = tiny_config.dataset.build(tiny_config.master_seed)
    _, mse_hat, mse_noisy = denoise_set(training, [1500.0], FidelitySpec(GAUSSIAN_ONLY))
    assert mse_hat < mse_noisy
