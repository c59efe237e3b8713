"""Lower-level denoising solver.

Solves the regularized optimality condition of Huber-TV denoising,

    -eps * lap(u) - div(h_gamma(grad u)) + fidelity'(u - f) = 0,

by a damped semismooth Newton iteration. fidelity'(v) is lam0 * v for the
Gaussian-only model and lam0 * huber_sign(v) + lam1 * v for the mixed
impulse + Gaussian model.

Globalization follows the primal-dual active-set scheme: auxiliary dual
variables q (for the TV term) and, in the mixed model, s (for the impulse
term) are carried between iterations and reprojected onto the unit ball, and
they replace one factor of the normalized gradient in the generalized
Jacobian. With the duals evaluated at their fixed point the linearization
reduces to the plain generalized Jacobian eps*G^T G + G^T M G + diag(c) with
huber_vec_jac blocks in M, which is what newton_step and the adjoint solver
use. Linearized systems use a sparse direct solve on small grids and Krylov
iterations (CG when symmetric, BiCGstab otherwise) above.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatchError, DivergenceError, SingularSystemError
from .grids import (
    BOUNDARIES,
    HuberParams,
    ImageGrid,
    VectorField,
    divergence,
    gradient,
    huber_sign,
    huber_vec,
    l2_norm,
    laplacian,
)

GAUSSIAN_ONLY = "gaussian_only"
MIXED_L1_L2 = "mixed_l1_l2"
FIDELITY_KINDS = (GAUSSIAN_ONLY, MIXED_L1_L2)


@dataclass(frozen=True)
class FidelitySpec:
    """Which data terms are active; d is the number of learnable weights."""

    kind: str

    def __post_init__(self):
        if self.kind not in FIDELITY_KINDS:
            raise ValueError(f"unknown fidelity kind {self.kind!r}")

    @property
    def d(self) -> int:
        return 1 if self.kind == GAUSSIAN_ONLY else 2


@dataclass(frozen=True)
class ParamVec:
    """Nonnegative fidelity weights; for the mixed model the order is
    (impulse/L1 weight, Gaussian/L2 weight)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64)).copy()
        if w.ndim != 1 or w.size not in (1, 2):
            raise ValueError(f"expected 1 or 2 weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError(f"weights must be finite and >= 0, got {w}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.weights.size

    def as_array(self) -> np.ndarray:
        return np.array(self.weights)


@dataclass(frozen=True)
class StateConfig:
    """Solver knobs for the lower-level problem."""

    epsilon: float = 1e-12
    huber: HuberParams = field(default_factory=HuberParams)
    max_iter: int = 35
    step_tol: float = 1e-6
    residual_tol: float = 1e-6
    linear_solver_tol: float = 1e-10
    boundary: str = "dirichlet"
    max_damping_halvings: int = 10
    direct_solve_max_pixels: int = 4096

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary convention {self.boundary!r}")


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one nonlinear (or linear) solve."""

    iterations: int
    final_step_norm: float
    final_residual_norm: float
    converged: bool
    linear_solves: int = 0


def _check_pair(u: ImageGrid, f: ImageGrid) -> None:
    if u.values.shape != f.values.shape or u.h != f.h:
        raise DimensionMismatchError(
            f"images live on different grids: {u.values.shape}/h={u.h} vs {f.values.shape}/h={f.h}"
        )


def _check_weights(lam: ParamVec, spec: FidelitySpec) -> None:
    if lam.d != spec.d:
        raise DimensionMismatchError(f"{spec.kind} expects {spec.d} weights, got {lam.d}")


def _check_well_posed(lam: ParamVec, spec: FidelitySpec, cfg: StateConfig) -> None:
    # with replicated ghosts and no fidelity the operator annihilates constants
    if cfg.boundary == "neumann":
        if spec.kind == GAUSSIAN_ONLY and lam.weights[0] == 0.0:
            raise SingularSystemError(
                "gaussian_only with weight 0 under neumann boundary is singular up to constants"
            )
        if spec.kind == MIXED_L1_L2 and np.all(lam.weights == 0.0):
            raise SingularSystemError(
                "mixed_l1_l2 with both weights 0 under neumann boundary is singular up to constants"
            )


@lru_cache(maxsize=32)
def _grad_matrix(rows: int, cols: int, h: float, boundary: str):
    """Sparse (2n, n) matrix matching gradient(); rows stack x then y parts."""
    n = rows * cols
    idx = np.arange(n).reshape(rows, cols)
    rows_ix = []
    cols_ix = []
    data = []

    def add(r, c, v):
        rows_ix.append(r)
        cols_ix.append(c)
        data.append(v)

    inv = 1.0 / h
    for i in range(rows):
        for j in range(cols):
            p = idx[i, j]
            if j > 0:
                add(p, p, inv)
                add(p, idx[i, j - 1], -inv)
            elif boundary == "dirichlet":
                add(p, p, inv)
            if i > 0:
                add(n + p, p, inv)
                add(n + p, idx[i - 1, j], -inv)
            elif boundary == "dirichlet":
                add(n + p, p, inv)
    g = sp.csr_matrix((data, (rows_ix, cols_ix)), shape=(2 * n, n))
    g.sum_duplicates()
    return g


def _fidelity_value(diff: np.ndarray, lam: ParamVec, spec: FidelitySpec,
                    huber: HuberParams) -> np.ndarray:
    if spec.kind == GAUSSIAN_ONLY:
        return lam.weights[0] * diff
    return lam.weights[0] * huber_sign(diff, huber) + lam.weights[1] * diff


def state_residual(u: ImageGrid, f: ImageGrid, lam: ParamVec, spec: FidelitySpec,
                   cfg: StateConfig) -> ImageGrid:
    """Pointwise residual of the regularized optimality condition."""
    _check_pair(u, f)
    _check_weights(lam, spec)
    g = gradient(u, cfg.boundary)
    hx, hy = huber_vec(g.x, g.y, cfg.huber)
    r = (
        -cfg.epsilon * laplacian(u, cfg.boundary).values
        - divergence(VectorField(hx, hy, u.h), cfg.boundary).values
        + _fidelity_value(u.values - f.values, lam, spec, cfg.huber)
    )
    return ImageGrid(r, u.h)


class _TVDual:
    """Per-pixel branch data for the TV nonlinearity at one iterate."""

    def __init__(self, g: sp.csr_matrix, u_flat: np.ndarray, huber: HuberParams):
        n = u_flat.size
        gu = g @ u_flat
        self.gx = gu[:n]
        self.gy = gu[n:]
        r = np.hypot(self.gx, self.gy)
        self.active = r >= 1.0 / huber.gamma
        self.dinv = 1.0 / np.maximum(1.0 / huber.gamma, r)
        safe = np.where(self.active, r, 1.0)
        self.nx = np.where(self.active, self.gx / safe, 0.0)
        self.ny = np.where(self.active, self.gy / safe, 0.0)

    def value(self):
        """h_gamma(grad u): the feasible dual at this iterate."""
        return self.dinv * self.gx, self.dinv * self.gy


class _FidDual:
    """Branch data for the scalar Huber in the impulse fidelity."""

    def __init__(self, diff: np.ndarray, huber: HuberParams):
        a = np.abs(diff)
        self.active = a >= 1.0 / huber.gamma
        self.dinv = 1.0 / np.maximum(1.0 / huber.gamma, a)
        self.sgn = np.where(self.active, np.sign(diff), 0.0)

    def value(self, diff: np.ndarray):
        return self.dinv * diff


def _assemble_system(u: ImageGrid, f: ImageGrid, lam: ParamVec, spec: FidelitySpec,
                     cfg: StateConfig, qx=None, qy=None, s=None) -> sp.csr_matrix:
    """Linearized operator eps*G^T G + G^T M G + diag(c).

    With duals omitted they are taken at their fixed point h_gamma(grad u) /
    huber_sign(u - f), which makes M the symmetric huber_vec_jac block matrix
    and c the fidelity derivative. A carried dual replaces one factor of the
    normalized gradient in the rank-one part.
    """
    rows, cols = u.values.shape
    n = rows * cols
    g = _grad_matrix(rows, cols, u.h, cfg.boundary)
    tv = _TVDual(g, u.values.ravel(), cfg.huber)
    if qx is None:
        qx, qy = tv.value()
    chi_x = np.where(tv.active, qx, 0.0)
    chi_y = np.where(tv.active, qy, 0.0)
    m = sp.bmat(
        [
            [sp.diags(cfg.epsilon + tv.dinv * (1.0 - chi_x * tv.nx)),
             sp.diags(-tv.dinv * chi_x * tv.ny)],
            [sp.diags(-tv.dinv * chi_y * tv.nx),
             sp.diags(cfg.epsilon + tv.dinv * (1.0 - chi_y * tv.ny))],
        ],
        format="csr",
    )
    diff = u.values.ravel() - f.values.ravel()
    if spec.kind == GAUSSIAN_ONLY:
        c = np.full(n, lam.weights[0])
    else:
        fid = _FidDual(diff, cfg.huber)
        if s is None:
            s = fid.value(diff)
        s_chi = np.where(fid.active, s, 0.0)
        c = lam.weights[0] * fid.dinv * (1.0 - s_chi * fid.sgn) + lam.weights[1]
    a = (g.T @ (m @ g)).tocsr() + sp.diags(c)
    return a.tocsr()


def _assemble_jacobian(u: ImageGrid, f: ImageGrid, lam: ParamVec, spec: FidelitySpec,
                       cfg: StateConfig) -> sp.csr_matrix:
    """Symmetric generalized Jacobian (duals at their fixed point)."""
    return _assemble_system(u, f, lam, spec, cfg)


def _solve_linear(a: sp.csr_matrix, rhs: np.ndarray, cfg: StateConfig,
                  symmetric: bool = True):
    """Solve the linearized system; direct factorization on small grids."""
    n = a.shape[0]
    if n <= cfg.direct_solve_max_pixels:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                x = spla.spsolve(a.tocsc(), rhs)
            except (spla.MatrixRankWarning, RuntimeError) as exc:
                raise SingularSystemError(f"direct solve failed: {exc}") from exc
        iterations = 1
    else:
        diag = a.diagonal()
        if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            raise SingularSystemError("system diagonal is not strictly positive")
        precond = sp.diags(1.0 / diag)
        count = 0

        def tick(*_):
            nonlocal count
            count += 1

        solver = spla.cg if symmetric else spla.bicgstab
        x, info = solver(a, rhs, rtol=cfg.linear_solver_tol, atol=0.0,
                         M=precond, maxiter=20 * n, callback=tick)
        if info < 0:
            raise SingularSystemError(f"krylov breakdown (info={info})")
        iterations = count
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve produced non-finite values")
    rhs_norm = float(np.linalg.norm(rhs))
    rel = float(np.linalg.norm(a @ x - rhs)) / (rhs_norm if rhs_norm > 0 else 1.0)
    return x, SolveReport(iterations=iterations, final_step_norm=0.0,
                          final_residual_norm=rel, converged=True, linear_solves=1)


def newton_step(u: ImageGrid, f: ImageGrid, lam: ParamVec, spec: FidelitySpec,
                cfg: StateConfig):
    """One undamped semismooth Newton step: solve A(u) delta = -residual(u)."""
    _check_pair(u, f)
    _check_weights(lam, spec)
    r = state_residual(u, f, lam, spec, cfg)
    a = _assemble_jacobian(u, f, lam, spec, cfg)
    delta, rep = _solve_linear(a, -r.values.ravel(), cfg)
    return u.like(delta.reshape(u.values.shape)), rep


def _reproject_pair(qx: np.ndarray, qy: np.ndarray):
    scale = np.maximum(1.0, np.hypot(qx, qy))
    return qx / scale, qy / scale


def solve_state(f: ImageGrid, lam: ParamVec, spec: FidelitySpec,
                cfg: StateConfig | None = None, u0: ImageGrid | None = None):
    """Damped semismooth Newton solve of the denoising optimality condition.

    Starts from u0 (default: f) with duals initialized at their fixed point,
    halves the step (up to max_damping_halvings) whenever the residual norm
    would increase, and stops once the discrete-L2 residual falls below
    residual_tol * (1 + ||f||). Returns (u_hat, SolveReport); iterations never
    exceed cfg.max_iter.
    """
    cfg = cfg or StateConfig()
    _check_weights(lam, spec)
    _check_well_posed(lam, spec, cfg)
    if u0 is not None:
        _check_pair(u0, f)
        u = u0.values.copy()
    else:
        u = f.values.copy()

    def grid(v):
        return ImageGrid(v, f.h)

    rows, cols = f.values.shape
    n = rows * cols
    g = _grad_matrix(rows, cols, f.h, cfg.boundary)
    fv = f.values.ravel()
    mixed = spec.kind == MIXED_L1_L2

    res_target = cfg.residual_tol * (1.0 + l2_norm(f))

    tv = _TVDual(g, u.ravel(), cfg.huber)
    qx, qy = tv.value()
    s = _FidDual(u.ravel() - fv, cfg.huber).value(u.ravel() - fv) if mixed else None

    r = state_residual(grid(u), f, lam, spec, cfg).values
    rnorm = f.h * float(np.linalg.norm(r))
    step_norm = np.inf
    linear_solves = 0
    converged = rnorm <= res_target
    iterations = 0

    while not converged and iterations < cfg.max_iter:
        a = _assemble_system(grid(u), f, lam, spec, cfg, qx=qx, qy=qy, s=s)
        delta, _ = _solve_linear(a, -r.ravel(), cfg, symmetric=False)
        linear_solves += 1
        delta = delta.reshape(u.shape)

        tv = _TVDual(g, u.ravel(), cfg.huber)
        diff_old = u.ravel() - fv
        fid = _FidDual(diff_old, cfg.huber) if mixed else None

        alpha = 1.0
        best = None
        for _ in range(cfg.max_damping_halvings + 1):
            trial = u + alpha * delta
            r_trial = state_residual(grid(trial), f, lam, spec, cfg).values
            rnorm_trial = f.h * float(np.linalg.norm(r_trial))
            if best is None or (np.isfinite(rnorm_trial) and rnorm_trial < best[2]):
                best = (alpha, trial, rnorm_trial, r_trial)
            if np.isfinite(rnorm_trial) and rnorm_trial <= rnorm:
                break
            alpha *= 0.5
        alpha, u, rnorm, r = best[0], best[1], best[2], best[3]

        # dual updates from the linearized complementarity relation, then
        # reprojection onto the unit ball to keep the next system well posed
        gun = g @ u.ravel()
        corr = tv.nx * (gun[:n] - tv.gx) + tv.ny * (gun[n:] - tv.gy)
        chi_x = np.where(tv.active, qx, 0.0)
        chi_y = np.where(tv.active, qy, 0.0)
        qx, qy = _reproject_pair(tv.dinv * (gun[:n] - chi_x * corr),
                                 tv.dinv * (gun[n:] - chi_y * corr))
        if mixed:
            diff_new = u.ravel() - fv
            s_chi = np.where(fid.active, s, 0.0)
            s_new = fid.dinv * (diff_new - s_chi * fid.sgn * (diff_new - diff_old))
            s = np.clip(s_new, -1.0, 1.0)

        step_norm = f.h * float(np.linalg.norm(alpha * delta))
        iterations += 1

        if not np.all(np.isfinite(u)) or not np.isfinite(rnorm):
            raise DivergenceError(f"iterate became non-finite after {iterations} steps")

        converged = rnorm <= res_target

    report = SolveReport(
        iterations=iterations,
        final_step_norm=0.0 if np.isinf(step_norm) else float(step_norm),
        final_residual_norm=float(rnorm),
        converged=bool(converged),
        linear_solves=linear_solves,
    )
    return grid(u), report
