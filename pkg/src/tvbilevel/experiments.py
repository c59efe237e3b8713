"""Experiment sweeps: weight learning runs, report tables and plot series.

An experiment compares plain full-batch BFGS against the dynamic-sampling
variant on the same synthetic training sets, for every requested training
set size N and sample-control parameter theta. Each (N, theta) row records
the learned weights of both modes, the sample growth, the nonlinear solve
counts (the efficiency measure) and the relative difference

    diff = 100 * |lam_dyn - lam_full|_1 / |lam_dyn|_1.

All randomness derives from the master seed, so a rerun of the same config
reproduces every output file byte for byte. Reports are emitted as a CSV
table, a JSON document carrying the full iteration traces, and two-column
text series for plotting.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .bfgs import (
    DEFAULT_LAM0,
    MODE_DYNAMIC,
    MODE_FULL,
    ArmijoConfig,
    RunConfig,
    RunResult,
    fraction_sample_size,
    run,
)
from .datasets import (
    IMPULSE_MODES,
    PHANTOM_KINDS,
    NoiseModelSpec,
    TrainingSet,
    build_training_set,
    mix_seed,
)
from .state import FIDELITY_KINDS, FidelitySpec, ParamVec, StateConfig, solve_state

TABLE_COLUMNS = (
    "N", "theta", "lambda_full", "lambda_sampled", "S0", "S_end",
    "eff_full", "eff_dyn", "iters_full", "iters_dyn", "diff_pct",
)


@dataclass(frozen=True)
class DatasetConfig:
    """Synthetic data recipe shared by all stages."""

    kind: str = "ellipses"
    rows: int = 32
    cols: int = 32
    n: int = 8
    gaussian_sigma: float = 0.05
    impulse_fraction: float = 0.0
    impulse_mode: str = "salt_pepper"

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.rows < 1 or self.cols < 1 or self.n < 1:
            raise ValueError("rows, cols and n must be >= 1")
        if self.impulse_mode not in IMPULSE_MODES:
            raise ValueError(f"unknown impulse_mode {self.impulse_mode!r}")

    def build(self, seed: int, n: int | None = None) -> TrainingSet:
        noise = NoiseModelSpec(self.gaussian_sigma, self.impulse_fraction,
                               seed, self.impulse_mode)
        return build_training_set(self.kind, self.rows, self.cols,
                                  n if n is not None else self.n, noise)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one full sweep."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fidelity: str = "gaussian_only"
    n_list: tuple = (8,)
    theta_list: tuple = (0.5,)
    lam0: tuple = ()
    master_seed: int = 0
    initial_fraction: float = 0.2
    run_full: RunConfig = field(default_factory=lambda: RunConfig(
        mode=MODE_FULL, grad_tol=0.0, step_tol=1e-3))
    run_dynamic: RunConfig = field(default_factory=lambda: RunConfig(
        mode=MODE_DYNAMIC, grad_tol=0.0, step_tol=1e-3))
    solver: StateConfig = field(default_factory=StateConfig)
    threads: int = 1

    def __post_init__(self):
        if self.fidelity not in FIDELITY_KINDS:
            raise ValueError(f"unknown fidelity kind {self.fidelity!r}")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("every N in n_list must be >= 1")
        if any(not 0.0 <= t < 1.0 for t in self.theta_list):
            raise ValueError("theta values must lie in [0, 1)")
        if not 0.0 < self.initial_fraction <= 1.0:
            raise ValueError("initial_fraction must lie in (0, 1]")
        if not self.lam0:
            object.__setattr__(self, "lam0", DEFAULT_LAM0[self.fidelity])
        d = FidelitySpec(self.fidelity).d
        if len(self.lam0) != d:
            raise ValueError(f"{self.fidelity} needs {d} starting weights, got {len(self.lam0)}")

    def initial_sample_for(self, n: int) -> int:
        return fraction_sample_size(n, self.initial_fraction)


@dataclass(frozen=True)
class ExperimentRow:
    """One (N, theta) comparison between full-batch and dynamic modes."""

    n: int
    theta: float
    lambda_full: tuple | None = None
    lambda_sampled: tuple | None = None
    s0: int | None = None
    s_end: int | None = None
    eff_full: int | None = None
    eff_dyn: int | None = None
    iters_full: int | None = None
    iters_dyn: int | None = None
    diff_pct: float | None = None
    error: str = ""


@dataclass(frozen=True)
class ExperimentReport:
    """Sweep outcome: rows plus per-run iteration traces."""

    rows: tuple
    full_traces: dict
    dynamic_traces: dict


def relative_difference_pct(lam_dyn, lam_full) -> float:
    denom = float(np.sum(np.abs(lam_dyn)))
    if denom == 0.0:
        return float("inf")
    return 100.0 * float(np.sum(np.abs(np.asarray(lam_dyn) - np.asarray(lam_full)))) / denom


def _section(mapping: dict, name: str) -> dict:
    value = mapping.get(name, {})
    if not isinstance(value, dict):
        raise ValueError(f"config section [{name}] must be a table")
    return dict(value)


def _run_config_from(mapping: dict, base: RunConfig) -> RunConfig:
    known = {}
    armijo_keys = _section(mapping, "armijo")
    if armijo_keys:
        known["armijo"] = ArmijoConfig(**armijo_keys)
    for key in ("theta", "initial_sample", "nested", "seed", "grad_tol",
                "step_tol", "max_iter"):
        if key in mapping:
            known[key] = mapping[key]
    extra = set(mapping) - {"armijo", "initial_fraction"} - set(known)
    if extra:
        raise ValueError(f"unknown run config keys: {sorted(extra)}")
    return dataclasses.replace(base, **known)


def config_from_mapping(doc: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed TOML document."""
    dataset = DatasetConfig(**_section(doc, "dataset"))
    exp = _section(doc, "experiment")
    run = _section(doc, "run")
    run_full_keys = _section(run, "full")
    run_dynamic_keys = _section(run, "dynamic")
    base = {k: v for k, v in run.items() if k not in ("full", "dynamic")}
    shared = _run_config_from(base, RunConfig(grad_tol=0.0, step_tol=1e-3))
    run_full = _run_config_from(
        run_full_keys,
        dataclasses.replace(shared, mode=MODE_FULL, initial_sample=None))
    run_dynamic = _run_config_from(
        run_dynamic_keys, dataclasses.replace(shared, mode=MODE_DYNAMIC))
    initial_fraction = run_dynamic_keys.get("initial_fraction",
                                            base.get("initial_fraction", 0.2))
    solver_keys = _section(doc, "solver")
    solver = dataclasses.replace(StateConfig(), **solver_keys) if solver_keys else StateConfig()
    return ExperimentConfig(
        dataset=dataset,
        fidelity=exp.get("fidelity", "gaussian_only"),
        n_list=tuple(exp.get("n_list", [dataset.n])),
        theta_list=tuple(exp.get("theta_list", [0.5])),
        lam0=tuple(exp.get("lam0", [])),
        master_seed=int(exp.get("master_seed", 0)),
        initial_fraction=float(initial_fraction),
        run_full=run_full,
        run_dynamic=run_dynamic,
        solver=solver,
        threads=int(exp.get("threads", 1)),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_mapping(tomllib.load(fh))


def learn_weights(training: TrainingSet, fidelity: FidelitySpec, lam0,
                  run_cfg: RunConfig, solver: StateConfig | None = None,
                  misfit: str = "clean", threads: int = 1) -> RunResult:
    """One optimization run on a prebuilt training set."""
    cfg = dataclasses.replace(run_cfg, lam0=tuple(float(x) for x in lam0))
    return run(training, fidelity, cfg, solver, misfit=misfit, threads=threads)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Full sweep over n_list x theta_list comparing both modes.

    The full-batch run is shared by every theta row of the same N. A row
    whose runs fail keeps the error message instead of aborting the sweep.
    """
    fidelity = FidelitySpec(cfg.fidelity)
    rows = []
    full_traces = {}
    dynamic_traces = {}
    for n in cfg.n_list:
        training = cfg.dataset.build(cfg.master_seed, n=n)
        sampler_seed = mix_seed(cfg.master_seed, 1000 + n)
        full_res = None
        full_error = ""
        try:
            full_cfg = dataclasses.replace(cfg.run_full, mode=MODE_FULL,
                                           initial_sample=None, seed=sampler_seed)
            full_res = learn_weights(training, fidelity, cfg.lam0, full_cfg,
                                     cfg.solver, threads=cfg.threads)
            full_traces[n] = full_res.trace
        except Exception as exc:
            full_error = f"full: {exc}"
        for theta in cfg.theta_list:
            if full_error:
                rows.append(ExperimentRow(n=n, theta=theta, error=full_error))
                continue
            s0 = cfg.initial_sample_for(n)
            try:
                dyn_cfg = dataclasses.replace(cfg.run_dynamic, mode=MODE_DYNAMIC,
                                              theta=theta, initial_sample=s0,
                                              seed=sampler_seed)
                dyn_res = learn_weights(training, fidelity, cfg.lam0, dyn_cfg,
                                        cfg.solver, threads=cfg.threads)
            except Exception as exc:
                rows.append(ExperimentRow(n=n, theta=theta, error=f"dynamic: {exc}"))
                continue
            dynamic_traces[(n, theta)] = dyn_res.trace
            rows.append(ExperimentRow(
                n=n,
                theta=theta,
                lambda_full=tuple(float(x) for x in full_res.lam),
                lambda_sampled=tuple(float(x) for x in dyn_res.lam),
                s0=s0,
                s_end=dyn_res.trace[-1].sample_size,
                eff_full=full_res.state_solves,
                eff_dyn=dyn_res.state_solves,
                iters_full=full_res.iterations,
                iters_dyn=dyn_res.iterations,
                diff_pct=relative_difference_pct(dyn_res.lam, full_res.lam),
            ))
    return ExperimentReport(rows=tuple(rows), full_traces=full_traces,
                            dynamic_traces=dynamic_traces)


def _format_lam(lam) -> str:
    if lam is None:
        return ""
    return ";".join(repr(float(x)) for x in lam)


def _parse_lam(text: str):
    if not text:
        return None
    return tuple(float(part) for part in text.split(";"))


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_table(report: ExperimentReport, path) -> None:
    """CSV table, one line per (N, theta) row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS + ("error",))
        for row in report.rows:
            writer.writerow([
                row.n,
                repr(float(row.theta)),
                _format_lam(row.lambda_full),
                _format_lam(row.lambda_sampled),
                _format_cell(row.s0),
                _format_cell(row.s_end),
                _format_cell(row.eff_full),
                _format_cell(row.eff_dyn),
                _format_cell(row.iters_full),
                _format_cell(row.iters_dyn),
                _format_cell(row.diff_pct),
                row.error,
            ])


def load_table(path) -> tuple:
    """Parse a CSV table back into ExperimentRow objects."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TABLE_COLUMNS + ("error",):
            raise ValueError(f"unexpected table header: {header}")
        rows = []
        for rec in reader:
            rows.append(ExperimentRow(
                n=int(rec[0]),
                theta=float(rec[1]),
                lambda_full=_parse_lam(rec[2]),
                lambda_sampled=_parse_lam(rec[3]),
                s0=int(rec[4]) if rec[4] else None,
                s_end=int(rec[5]) if rec[5] else None,
                eff_full=int(rec[6]) if rec[6] else None,
                eff_dyn=int(rec[7]) if rec[7] else None,
                iters_full=int(rec[8]) if rec[8] else None,
                iters_dyn=int(rec[9]) if rec[9] else None,
                diff_pct=float(rec[10]) if rec[10] else None,
                error=rec[11],
            ))
    return tuple(rows)


def emit_report_json(report: ExperimentReport, path) -> None:
    """JSON document with rows and complete iteration traces."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "rows": [dataclasses.asdict(r) for r in report.rows],
        "traces": {
            "full": {str(n): [dataclasses.asdict(t) for t in trace]
                     for n, trace in report.full_traces.items()},
            "dynamic": {f"{n}:{repr(float(theta))}": [dataclasses.asdict(t) for t in trace]
                        for (n, theta), trace in report.dynamic_traces.items()},
        },
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_series(path, pairs) -> None:
    with open(path, "w", newline="\n") as fh:
        for x, y in pairs:
            fh.write(f"{x} {_format_cell(y)}\n")


def emit_plot_data(report: ExperimentReport, out_dir) -> list:
    """Two-column series files: objective per iteration, sample size per theta."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n in sorted(report.full_traces):
        trace = report.full_traces[n]
        path = out / f"objective_full_N{n}.dat"
        _write_series(path, [(t.iteration, float(t.value)) for t in trace])
        written.append(path)
    for (n, theta) in sorted(report.dynamic_traces):
        trace = report.dynamic_traces[(n, theta)]
        tag = f"N{n}_theta{repr(float(theta))}"
        path = out / f"objective_dyn_{tag}.dat"
        _write_series(path, [(t.iteration, float(t.value)) for t in trace])
        written.append(path)
        path = out / f"samples_dyn_{tag}.dat"
        _write_series(path, [(t.iteration, t.sample_size) for t in trace])
        written.append(path)
    return written


def emit_all(report: ExperimentReport, out_dir) -> dict:
    """Write table.csv, report.json and the plots directory; returns paths."""
    out = Path(out_dir)
    table = out / "table.csv"
    doc = out / "report.json"
    emit_table(report, table)
    emit_report_json(report, doc)
    plots = emit_plot_data(report, out / "plots")
    return {"table": table, "report": doc, "plots": plots}


def denoise_set(training: TrainingSet, lam, fidelity: FidelitySpec,
                solver: StateConfig | None = None):
    """Denoise every pair at fixed weights; returns (images, mse_hat, mse_noisy).

    The two MSE values are means over the set of the per-pair mean squared
    error against the clean image, for the denoised and the noisy images.
    """
    solver = solver or StateConfig()
    lam = ParamVec(np.asarray(lam, dtype=float))
    outputs = []
    mse_hat = []
    mse_noisy = []
    for pair in training.pairs:
        u_hat, _ = solve_state(pair.noisy, lam, fidelity, solver)
        outputs.append(u_hat)
        mse_hat.append(float(np.mean((u_hat.values - pair.clean.values) ** 2)))
        mse_noisy.append(float(np.mean((pair.noisy.values - pair.clean.values) ** 2)))
    return outputs, float(np.mean(mse_hat)), float(np.mean(mse_noisy))
