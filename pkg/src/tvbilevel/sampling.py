"""Dynamic sample-size control for the stochastic outer iteration.

The averaged gradient over a sample S of the N training pairs is accepted
when its estimated variance is small relative to its magnitude,

    (||Var||_1 / |S|) * (N - |S|) / (N - 1)  <=  theta^2 ||g_S||_2^2,

where Var is the componentwise sample variance (ddof=1) of the per-pair
loss gradients and g_S the averaged objective gradient. When the test
fails, the sample grows to the smallest size satisfying it under the
current estimates,

    s* = ceil( N * V / (V + theta^2 * (N - 1) * ||g_S||^2) ),    V = ||Var||_1,

never below |S| + 1 and never above N. Growth takes effect at the next
draw. Samples are drawn without replacement, by default fresh each time;
the nested policy keeps the current indices and only draws the additions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def variance_estimate(per_sample_grads: np.ndarray) -> np.ndarray:
    """Componentwise sample variance (ddof=1) of per-pair gradient rows."""
    g = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    if g.shape[0] < 2:
        raise ValueError(f"variance needs at least 2 samples, got {g.shape[0]}")
    return np.var(g, axis=0, ddof=1)


def condition_holds(variance: np.ndarray, grad: np.ndarray, size: int,
                    n_total: int, theta: float) -> bool:
    """Whether the sampled gradient passes the variance acceptance test."""
    _check_theta(theta)
    if size >= n_total or n_total < 2:
        return True
    v = float(np.sum(np.abs(np.asarray(variance, dtype=float))))
    g2 = float(np.sum(np.asarray(grad, dtype=float) ** 2))
    lhs = (v / size) * ((n_total - size) / (n_total - 1))
    return lhs <= theta * theta * g2


def next_size(variance: np.ndarray, grad: np.ndarray, current: int,
              n_total: int, theta: float) -> int:
    """Smallest sample size passing the test under the current estimates."""
    _check_theta(theta)
    v = float(np.sum(np.abs(np.asarray(variance, dtype=float))))
    g2 = float(np.sum(np.asarray(grad, dtype=float) ** 2))
    denom = v + theta * theta * (n_total - 1) * g2
    if denom <= 0.0:
        proposed = n_total
    else:
        proposed = math.ceil(n_total * v / denom)
    proposed = min(n_total, max(current + 1, proposed))
    # roundoff in the ratio can land one step off the smallest size whose
    # own test passes when the bound is met with equality; the test decides
    if proposed > current + 1 and condition_holds(variance, grad,
                                                  proposed - 1, n_total, theta):
        proposed -= 1
    elif proposed < n_total and not condition_holds(variance, grad,
                                                    proposed, n_total, theta):
        proposed += 1
    return proposed


def draw_sample(rng: np.random.Generator, n_total: int, size: int) -> np.ndarray:
    """Sorted without-replacement draw of `size` pair indices."""
    if not 1 <= size <= n_total:
        raise ValueError(f"sample size {size} outside [1, {n_total}]")
    picked = rng.choice(n_total, size=size, replace=False)
    return np.sort(picked)


@dataclass(frozen=True)
class GrowthDecision:
    """Outcome of one variance test."""

    condition_met: bool
    proposed_size: int
    variance_l1: float
    grad_norm_sq: float


class SampleState:
    """Current sample of the training indices plus the growth policy.

    draw() produces the index set for the next iteration: a completely new
    draw of the current size under the fresh policy, or the previous set
    plus new additions under the nested policy. evaluate() runs the variance
    test on per-pair gradients and records the size the next draw should
    use; grow() applies it.
    """

    def __init__(self, n_total: int, size: int, seed, nested: bool = False):
        if not 1 <= size <= n_total:
            raise ValueError(f"initial size {size} outside [1, {n_total}]")
        self.n_total = n_total
        self.size = size
        self.nested = nested
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.indices: np.ndarray | None = None

    def draw(self) -> np.ndarray:
        if self.nested and self.indices is not None:
            if self.size > self.indices.size:
                pool = np.setdiff1d(np.arange(self.n_total), self.indices)
                extra = draw_sample(self.rng, pool.size, self.size - self.indices.size)
                self.indices = np.sort(np.concatenate([self.indices, pool[extra]]))
        else:
            self.indices = draw_sample(self.rng, self.n_total, self.size)
        return self.indices

    def evaluate(self, per_sample_grads: np.ndarray, grad: np.ndarray,
                 theta: float) -> GrowthDecision:
        m = np.atleast_2d(np.asarray(per_sample_grads, dtype=float)).shape[0]
        g2 = float(np.sum(np.asarray(grad, dtype=float) ** 2))
        if m < 2:
            # variance is undefined for a single pair; accept and keep the size
            return GrowthDecision(True, self.size, 0.0, g2)
        var = variance_estimate(per_sample_grads)
        met = condition_holds(var, grad, m, self.n_total, theta)
        proposed = self.size if met else next_size(var, grad, m, self.n_total, theta)
        return GrowthDecision(met, proposed, float(np.sum(np.abs(var))), g2)

    def grow(self, new_size: int) -> None:
        if new_size < self.size:
            raise ValueError(f"sample size cannot shrink: {new_size} < {self.size}")
        self.size = min(self.n_total, new_size)


def _check_theta(theta: float) -> None:
    if not theta > 0.0:
        raise ValueError(f"theta must be > 0, got {theta}")
