"""Command line stages: dataset generation, learning, sweeps, denoising.

All stages read the same TOML config; flags override the master seed, the
run mode and the sampling parameter without editing the file.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .datasets import export_pgm, load_set, save_set
from .errors import TVBilevelError
from .experiments import (
    ExperimentConfig,
    denoise_set,
    emit_all,
    learn_weights,
    load_config,
    run_experiment,
)
from .state import FidelitySpec


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    training = cfg.dataset.build(cfg.master_seed)
    save_set(training, args.out)
    print(f"wrote {training.n} pairs ({training.rows}x{training.cols}) to {args.out}")
    return 0


def _cmd_learn(args) -> int:
    cfg = _load(args)
    training = cfg.dataset.build(cfg.master_seed)
    fidelity = FidelitySpec(cfg.fidelity)
    if args.mode == "full":
        run_cfg = dataclasses.replace(cfg.run_full, mode="full", initial_sample=None)
    else:
        theta = cfg.run_dynamic.theta if args.theta is None else args.theta
        run_cfg = dataclasses.replace(
            cfg.run_dynamic,
            mode="dynamic",
            theta=theta,
            initial_sample=cfg.initial_sample_for(training.n),
        )
    result = learn_weights(training, fidelity, cfg.lam0, run_cfg, cfg.solver,
                           threads=cfg.threads)
    weights = [float(x) for x in result.lam]
    print(f"mode={args.mode} weights={weights} value={result.value:.6e} "
          f"iterations={result.iterations} stop={result.stop_reason} "
          f"state_solves={result.state_solves}")
    if args.out:
        payload = {
            "mode": args.mode,
            "weights": weights,
            "value": result.value,
            "grad_norm": result.grad_norm,
            "iterations": result.iterations,
            "stop_reason": result.stop_reason,
            "converged": result.converged,
            "state_solves": result.state_solves,
            "adjoint_solves": result.adjoint_solves,
            "sample_sizes": result.sample_sizes,
        }
        with open(args.out, "w", newline="\n") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg)
    paths = emit_all(report, args.out)
    for row in report.rows:
        if row.error:
            print(f"N={row.n} theta={row.theta}: FAILED ({row.error})")
        else:
            print(f"N={row.n} theta={row.theta}: eff_full={row.eff_full} "
                  f"eff_dyn={row.eff_dyn} diff={row.diff_pct:.2f}%")
    print(f"wrote {paths['table']} and {paths['report']}")
    return 1 if any(row.error for row in report.rows) else 0


def _cmd_denoise(args) -> int:
    cfg = _load(args)
    if args.data:
        training = load_set(args.data)
    else:
        training = cfg.dataset.build(cfg.master_seed)
    weights = args.weights if args.weights else list(cfg.lam0)
    fidelity = FidelitySpec(cfg.fidelity)
    outputs, mse_hat, mse_noisy = denoise_set(training, np.asarray(weights), fidelity,
                                              cfg.solver)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, (pair, u_hat) in enumerate(zip(training.pairs, outputs)):
        export_pgm(pair.clean, out / f"clean_{k:03d}.pgm")
        export_pgm(pair.noisy, out / f"noisy_{k:03d}.pgm")
        export_pgm(u_hat, out / f"denoised_{k:03d}.pgm")
    print(f"weights={[float(w) for w in weights]} mse_denoised={mse_hat:.6e} "
          f"mse_noisy={mse_noisy:.6e} images={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvbilevel",
        description="Learn denoising fidelity weights by dynamic-sample BFGS.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="build a synthetic training set file")
    p.add_argument("--config", required=True, help="TOML config path")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", required=True, help="output .tvbl path")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("learn", help="run one weight-learning optimization")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write a JSON result here")
    p.add_argument("--mode", choices=("full", "dynamic"), default="dynamic")
    p.add_argument("--theta", type=float, help="override the sampling parameter")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("experiment", help="full sweep comparing both modes")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("denoise", help="denoise a set at fixed weights, dump PGMs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory for PGM triples")
    p.add_argument("--data", help="use a saved .tvbl set instead of generating")
    p.add_argument("--weights", type=float, nargs="+",
                   help="fidelity weights (default: config lam0)")
    p.set_defaults(func=_cmd_denoise)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TVBilevelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
