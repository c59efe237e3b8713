"""BFGS outer iteration with dynamically grown gradient samples.

Minimizes a sampled objective J_S over nonnegative weights. Each iteration
draws an index sample of the current size, takes a quasi-Newton step with an
Armijo backtracking line search restricted to the positive orthant, then
evaluates the gradient at the new iterate on the next sample. The secant
pair differences consecutive sampled gradients, each taken on its own
sample, so curvature costs no solves beyond the one gradient evaluation
every iteration needs anyway; the weak-curvature guard drops pairs the
sampling noise has corrupted. The variance test from the sampling module
decides whether the current sample is large enough; growth takes effect at
the following draw.

Works against any object satisfying SampledObjective; the training
objective from the adjoint module is the intended implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .adjoint import TrainingObjective
from .errors import LineSearchError, NotDescentDirectionError
from .sampling import SampleState
from .state import GAUSSIAN_ONLY, MIXED_L1_L2

CURVATURE_GUARD = 1e-10

MODE_FULL = "full"
MODE_DYNAMIC = "dynamic"
RUN_MODES = (MODE_FULL, MODE_DYNAMIC)

DEFAULT_LAM0 = {GAUSSIAN_ONLY: (1000.0,), MIXED_L1_L2: (50.0, 10.0)}

STOP_GRAD = "grad_tol"
STOP_STEP = "step_tol"
STOP_MAX_ITER = "max_iter"
STOP_LINE_SEARCH = "line_search_failure"


@runtime_checkable
class SampledObjective(Protocol):
    """Averaged objective over training-pair index subsets."""

    @property
    def n(self) -> int: ...

    def value(self, lam, indices) -> float: ...

    def gradient(self, lam, indices): ...


@dataclass(frozen=True)
class ArmijoConfig:
    """Backtracking line search parameters."""

    eta: float = 1e-4
    factor: float = 0.5
    max_evals: int = 25

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must be in (0, 1), got {self.factor}")
        if self.max_evals < 1:
            raise ValueError(f"max_evals must be >= 1, got {self.max_evals}")


@dataclass(frozen=True)
class RunConfig:
    """Outer-iteration settings.

    mode "full" keeps every draw at the whole batch, which makes the run a
    plain BFGS method; "dynamic" starts from initial_sample pairs when that
    is set and from round(initial_sample_fraction * n) clamped to [2, n]
    otherwise. lam0 overrides the per-fidelity default starting weights in
    run(). grad_tol None means 1e-4 * (1 + J0) with J0 the first sampled
    objective value; pass 0.0 to disable the gradient stop entirely.
    """

    mode: str = MODE_DYNAMIC
    theta: float = 0.5
    initial_sample: int | None = None
    initial_sample_fraction: float = 0.2
    lam0: tuple | None = None
    nested: bool = False
    seed: int = 0
    grad_tol: float | None = None
    step_tol: float = 1e-6
    max_iter: int = 200
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")
        if not 0 < self.initial_sample_fraction <= 1:
            raise ValueError(
                f"initial_sample_fraction must be in (0, 1], got {self.initial_sample_fraction}")
        if self.initial_sample is not None and self.initial_sample < 1:
            raise ValueError(f"initial_sample must be >= 1, got {self.initial_sample}")
        if self.lam0 is not None and (len(self.lam0) == 0 or any(w <= 0 for w in self.lam0)):
            raise ValueError(f"lam0 must be strictly positive, got {self.lam0}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.step_tol < 0 or (self.grad_tol is not None and self.grad_tol < 0):
            raise ValueError("tolerances must be >= 0")


def fraction_sample_size(n: int, fraction: float) -> int:
    """Initial sample size for a fraction of n pairs, at least 2 of them.

    The floor keeps the sample variance defined; without it a size-1 sample
    would pass the growth test vacuously and never grow.
    """
    return min(n, max(2, round(fraction * n)))


def initial_sample_size(n: int, cfg: RunConfig) -> int:
    """Size of the first draw for a run over n training pairs."""
    if cfg.mode == MODE_FULL:
        return n
    if cfg.initial_sample is not None:
        return min(cfg.initial_sample, n)
    return fraction_sample_size(n, cfg.initial_sample_fraction)


@dataclass(frozen=True)
class TraceRecord:
    """State of the outer iteration after one step (record 0 is the start)."""

    iteration: int
    lam: tuple
    value: float
    grad_norm: float
    sample_size: int
    condition_met: bool
    next_size: int
    alpha: float
    update_applied: bool
    state_solves: int
    adjoint_solves: int


@dataclass(frozen=True)
class RunResult:
    """Final iterate plus the per-iteration trace and solve accounting."""

    lam: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    stop_reason: str
    converged: bool
    trace: tuple
    state_solves: int
    adjoint_solves: int

    @property
    def sample_sizes(self) -> list:
        return [t.sample_size for t in self.trace]


def bfgs_update(h: np.ndarray, s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Standard inverse-Hessian BFGS update; skipped on weak curvature.

    Returns (h_new, applied). The update is skipped whenever
    s.y <= 1e-10 * |s| * |y|, keeping h symmetric positive definite.
    """
    sy = float(s @ y)
    if sy <= CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
        return h, False
    rho = 1.0 / sy
    eye = np.eye(s.size)
    v = eye - rho * np.outer(s, y)
    h_new = v @ h @ v.T + rho * np.outer(s, s)
    return h_new, True


def max_feasible_step(lam: np.ndarray, direction: np.ndarray) -> float:
    """Largest alpha with lam + alpha * direction staying nonnegative,
    shrunk by 0.99 and capped at 1."""
    bound = np.inf
    for li, di in zip(lam, direction):
        if di < 0:
            bound = min(bound, li / -di)
    return min(1.0, 0.99 * bound)


def armijo_search(value_fn, lam: np.ndarray, direction: np.ndarray,
                  grad: np.ndarray, j0: float, cfg: ArmijoConfig):
    """Backtracking search for J(lam + alpha * d) <= J0 + eta * alpha * g.d.

    Returns (alpha, j_new, evaluations). Raises NotDescentDirectionError when
    g.d >= 0 and LineSearchError when no feasible step satisfies the
    decrease condition within max_evals evaluations.
    """
    slope = float(grad @ direction)
    if slope >= 0:
        raise NotDescentDirectionError(f"directional derivative {slope:.3e} is not negative")
    alpha = max_feasible_step(lam, direction)
    if alpha <= 0:
        raise LineSearchError("no feasible step inside the nonnegative orthant", 0)
    evals = 0
    while evals < cfg.max_evals:
        trial = np.maximum(lam + alpha * direction, 0.0)
        j_trial = value_fn(trial)
        evals += 1
        if np.isfinite(j_trial) and j_trial <= j0 + cfg.eta * alpha * slope:
            return alpha, j_trial, evals
        alpha *= cfg.factor
    raise LineSearchError(
        f"no Armijo step after {evals} evaluations (last alpha {alpha / cfg.factor:.3e})",
        evals,
    )


def _counters(objective):
    return (getattr(objective, "state_solves", 0), getattr(objective, "adjoint_solves", 0))


def minimize_sampled(objective: SampledObjective, lam0, cfg: RunConfig | None = None) -> RunResult:
    """Run the dynamic-sample BFGS iteration from lam0.

    Stops on the gradient norm, on a relative step below step_tol, at
    max_iter, or when even the steepest-descent fallback fails its line
    search. The trace has one record per iterate including the start.
    """
    cfg = cfg or RunConfig()
    lam = np.asarray(lam0, dtype=float).copy()
    if lam.ndim != 1 or np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError(f"starting weights must be a nonnegative vector, got {lam0}")
    n = objective.n
    state = SampleState(n, initial_sample_size(n, cfg), seed=cfg.seed, nested=cfg.nested)
    solves0 = _counters(objective)

    idx = state.draw()
    bg = objective.gradient(lam, idx)
    dec = state.evaluate(bg.per_sample_grads, bg.grad, cfg.theta)
    if not dec.condition_met:
        state.grow(dec.proposed_size)
    grad_tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-4 * (1.0 + bg.value)

    def record(k, alpha, decision, sample_size, applied):
        s, a = _counters(objective)
        return TraceRecord(
            iteration=k,
            lam=tuple(float(x) for x in lam),
            value=float(bg.value),
            grad_norm=float(np.linalg.norm(bg.grad)),
            sample_size=sample_size,
            condition_met=decision.condition_met,
            next_size=decision.proposed_size,
            alpha=float(alpha),
            update_applied=applied,
            state_solves=s - solves0[0],
            adjoint_solves=a - solves0[1],
        )

    trace = [record(0, 0.0, dec, len(idx), False)]
    h = np.eye(lam.size) / max(np.linalg.norm(bg.grad), np.finfo(float).tiny)
    first_update = True
    stop_reason = STOP_MAX_ITER
    iterations = 0

    for k in range(cfg.max_iter):
        gnorm = float(np.linalg.norm(bg.grad))
        if gnorm <= grad_tol:
            stop_reason = STOP_GRAD
            break

        direction = -(h @ bg.grad)

        def value_on_sample(trial, _idx=idx):
            return objective.value(trial, _idx)

        try:
            alpha, _, _ = armijo_search(value_on_sample, lam, direction, bg.grad,
                                        bg.value, cfg.armijo)
        except (NotDescentDirectionError, LineSearchError):
            # quasi-Newton model is unusable; one steepest-descent rescue
            direction = -bg.grad / gnorm
            try:
                alpha, _, _ = armijo_search(value_on_sample, lam, direction, bg.grad,
                                            bg.value, cfg.armijo)
            except (NotDescentDirectionError, LineSearchError):
                stop_reason = STOP_LINE_SEARCH
                break
            h = np.eye(lam.size) / gnorm
            first_update = True

        lam_new = np.maximum(lam + alpha * direction, 0.0)
        step = lam_new - lam

        idx_new = state.draw()
        bg_new = objective.gradient(lam_new, idx_new)

        y = bg_new.grad - bg.grad
        if first_update:
            sy, yy = float(step @ y), float(y @ y)
            if sy > CURVATURE_GUARD * np.linalg.norm(step) * np.linalg.norm(y) and yy > 0:
                h = np.eye(lam.size) * (sy / yy)
        h, applied = bfgs_update(h, step, y)
        if applied:
            first_update = False

        dec = state.evaluate(bg_new.per_sample_grads, bg_new.grad, cfg.theta)
        if not dec.condition_met:
            state.grow(dec.proposed_size)

        lam, bg, idx = lam_new, bg_new, idx_new
        iterations = k + 1
        trace.append(record(iterations, alpha, dec, len(idx), applied))

        step_scale = max(1.0, float(np.linalg.norm(lam)))
        if float(np.linalg.norm(step)) <= cfg.step_tol * step_scale:
            stop_reason = STOP_STEP
            break

    s_end, a_end = _counters(objective)
    return RunResult(
        lam=lam,
        value=float(bg.value),
        grad_norm=float(np.linalg.norm(bg.grad)),
        iterations=iterations,
        stop_reason=stop_reason,
        converged=stop_reason in (STOP_GRAD, STOP_STEP),
        trace=tuple(trace),
        state_solves=s_end - solves0[0],
        adjoint_solves=a_end - solves0[1],
    )


def run(training, fidelity, cfg: RunConfig | None = None, state_cfg=None,
        misfit: str = "clean", threads: int = 1) -> RunResult:
    """Learn fidelity weights for a training set with the sampled driver.

    Builds the training objective and minimizes it from cfg.lam0, falling
    back to the stock starting weights for the fidelity kind (1000 for the
    squared-difference term alone, (50, 10) for the mixed pair).
    """
    cfg = cfg or RunConfig()
    if cfg.lam0 is not None and len(cfg.lam0) != fidelity.d:
        raise ValueError(f"lam0 has {len(cfg.lam0)} weights, fidelity needs {fidelity.d}")
    lam0 = cfg.lam0 if cfg.lam0 is not None else DEFAULT_LAM0[fidelity.kind]
    objective = TrainingObjective(training, fidelity, state_cfg, misfit=misfit, threads=threads)
    return minimize_sampled(objective, np.asarray(lam0, dtype=float), cfg)
