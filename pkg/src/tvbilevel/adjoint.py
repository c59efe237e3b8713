"""Gradients of the training loss through the denoising solver.

For one training pair the loss is the squared discrepancy between the
denoised image and a reference,

    l(lam) = h^2 * sum((u_hat - ref)^2),      u_hat = solve_state(f, lam).

Differentiating the optimality condition at u_hat gives one linear adjoint
system per pair, A(u_hat) p = -(u_hat - ref) with the same symmetric
generalized Jacobian used by newton_step, after which the loss gradient is a
weighted inner product of p against the fidelity terms. A batch objective
averages over an index set S:

    J_S(lam) = 1 / (2 |S|) * sum_{k in S} l_k(lam).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datasets import TrainingSet
from .errors import TVBilevelError
from .grids import ImageGrid, huber_sign
from .state import (
    GAUSSIAN_ONLY,
    FidelitySpec,
    ParamVec,
    SolveReport,
    StateConfig,
    _assemble_jacobian,
    _solve_linear,
    solve_state,
)

MISFIT_MODES = ("clean", "noisy")


def tracking_loss(u_hat: ImageGrid, ref: ImageGrid) -> float:
    """Squared discrete-L2 distance h^2 * sum((u_hat - ref)^2)."""
    d = u_hat.values - ref.values
    return float(u_hat.h * u_hat.h * np.sum(d * d))


def solve_adjoint(u_hat: ImageGrid, f: ImageGrid, ref: ImageGrid, lam: ParamVec,
                  spec: FidelitySpec, cfg: StateConfig | None = None):
    """Solve A(u_hat) p = -(u_hat - ref) with the symmetric Jacobian."""
    cfg = cfg or StateConfig()
    a = _assemble_jacobian(u_hat, f, lam, spec, cfg)
    rhs = -(u_hat.values - ref.values).ravel()
    p, rep = _solve_linear(a, rhs, cfg, symmetric=True)
    return u_hat.like(p.reshape(u_hat.values.shape)), rep


def constraint_gradient(u_hat: ImageGrid, f: ImageGrid, p: ImageGrid, lam: ParamVec,
                        spec: FidelitySpec, cfg: StateConfig | None = None) -> np.ndarray:
    """Per-pair loss gradient 2 h^2 <phi_i(u_hat, f), p> for each weight.

    phi_i is the derivative of the optimality condition with respect to
    weight i: (u - f) for a Gaussian term, huber_sign(u - f) for the
    impulse term.
    """
    cfg = cfg or StateConfig()
    diff = u_hat.values - f.values
    scale = 2.0 * u_hat.h * u_hat.h
    if spec.kind == GAUSSIAN_ONLY:
        return np.array([scale * float(np.sum(diff * p.values))])
    return np.array([
        scale * float(np.sum(huber_sign(diff, cfg.huber) * p.values)),
        scale * float(np.sum(diff * p.values)),
    ])


@dataclass(frozen=True)
class GradientSample:
    """Loss, gradient and solver diagnostics for one training pair."""

    index: int
    loss: float
    grad: np.ndarray
    state_report: SolveReport
    adjoint_report: SolveReport


@dataclass(frozen=True)
class BatchGradient:
    """Averaged objective value and gradient over one index set."""

    value: float
    grad: np.ndarray
    samples: tuple[GradientSample, ...]

    @property
    def per_sample_grads(self) -> np.ndarray:
        """(m, d) matrix of per-pair summand gradients, rows grad(l_k / 2).

        The batch gradient is exactly the row mean, so variance statistics
        over these rows are scaled consistently with `grad`.
        """
        return np.array([s.grad for s in self.samples]) / 2.0


class TrainingObjective:
    """Sampled training objective J_S with solve accounting and warm starts.

    value() runs one state solve per requested pair; gradient() runs one
    state solve and one adjoint solve per pair. Warm starts are cached per
    pair index across calls. misfit selects the tracking reference: "clean"
    compares against the ground truth, "noisy" against the observed data.
    """

    def __init__(self, training: TrainingSet, spec: FidelitySpec,
                 cfg: StateConfig | None = None, misfit: str = "clean",
                 threads: int = 1, warm_start: bool = True):
        if misfit not in MISFIT_MODES:
            raise ValueError(f"unknown misfit mode {misfit!r}")
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.training = training
        self.spec = spec
        self.cfg = cfg or StateConfig()
        self.misfit = misfit
        self.threads = threads
        self.warm_start = warm_start
        self.state_solves = 0
        self.adjoint_solves = 0
        self._warm: dict[int, ImageGrid] = {}

    @property
    def n(self) -> int:
        return self.training.n

    @property
    def d(self) -> int:
        return self.spec.d

    def _reference(self, k: int) -> ImageGrid:
        pair = self.training.pairs[k]
        return pair.clean if self.misfit == "clean" else pair.noisy

    def _solve_pair(self, k: int, lam: ParamVec):
        pair = self.training.pairs[k]
        u0 = self._warm.get(k) if self.warm_start else None
        try:
            return solve_state(pair.noisy, lam, self.spec, self.cfg, u0=u0)
        except TVBilevelError as exc:
            raise exc.__class__(f"pair {k}: {exc}") from exc

    def _map(self, work, indices):
        if self.threads == 1 or len(indices) <= 1:
            return [work(k) for k in indices]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(work, indices))

    def value(self, lam, indices) -> float:
        """J_S at lam over the given pair indices."""
        lam = lam if isinstance(lam, ParamVec) else ParamVec(np.asarray(lam, dtype=float))
        indices = _checked_indices(indices, self.training.n)

        def work(k):
            u_hat, rep = self._solve_pair(k, lam)
            return k, u_hat, tracking_loss(u_hat, self._reference(k))

        results = self._map(work, indices)
        self.state_solves += len(indices)
        total = 0.0
        for k, u_hat, loss in results:
            self._warm[k] = u_hat
            total += loss
        return total / (2.0 * len(indices))

    def gradient(self, lam, indices) -> BatchGradient:
        """J_S and its gradient at lam over the given pair indices."""
        lam = lam if isinstance(lam, ParamVec) else ParamVec(np.asarray(lam, dtype=float))
        indices = _checked_indices(indices, self.training.n)

        def work(k):
            pair = self.training.pairs[k]
            u_hat, srep = self._solve_pair(k, lam)
            ref = self._reference(k)
            try:
                p, arep = solve_adjoint(u_hat, pair.noisy, ref, lam, self.spec, self.cfg)
            except TVBilevelError as exc:
                raise exc.__class__(f"pair {k}: {exc}") from exc
            g = constraint_gradient(u_hat, pair.noisy, p, lam, self.spec, self.cfg)
            return GradientSample(k, tracking_loss(u_hat, ref), g, srep, arep), u_hat

        results = self._map(work, indices)
        self.state_solves += len(indices)
        self.adjoint_solves += len(indices)
        samples = []
        for sample, u_hat in results:
            self._warm[sample.index] = u_hat
            samples.append(sample)
        m = len(samples)
        value = sum(s.loss for s in samples) / (2.0 * m)
        grad = np.sum([s.grad for s in samples], axis=0) / (2.0 * m)
        return BatchGradient(value=value, grad=grad, samples=tuple(samples))


def _checked_indices(indices, n: int) -> list[int]:
    out = [int(k) for k in indices]
    if not out:
        raise ValueError("index set must not be empty")
    for k in out:
        if not 0 <= k < n:
            raise IndexError(f"pair index {k} outside training set of size {n}")
    if len(set(out)) != len(out):
        raise ValueError("index set contains duplicates")
    return out
