"""Discrete calculus on pixel grids plus the Huber-type nonlinearities.

Backward differences define the gradient, forward differences the divergence
(its negative adjoint), and the Laplacian is literally divergence(gradient(u)),
which reduces to the five-point stencil. All operators carry the 1/h mesh
scaling internally. Values outside the grid are zero ("dirichlet", the
default) or replicated ("neumann"); with replicated ghosts the one-sided
boundary differences vanish.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

BOUNDARIES = ("dirichlet", "neumann")


def _check_boundary(boundary: str) -> None:
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary convention {boundary!r}")


def _as_readonly(values) -> np.ndarray:
    a = np.array(values, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageGrid:
    """Rectangular pixel grid with mesh step h (default 1/cols).

    values is a read-only (rows, cols) float64 array; the instance is
    immutable so grids can be shared between solves.
    """

    values: np.ndarray
    h: float | None = None

    def __post_init__(self):
        a = _as_readonly(self.values)
        if a.ndim != 2 or a.size == 0:
            raise DimensionMismatchError(f"expected a non-empty 2-D array, got shape {a.shape}")
        h = 1.0 / a.shape[1] if self.h is None else float(self.h)
        if not h > 0:
            raise ValueError(f"mesh step must be positive, got {h}")
        object.__setattr__(self, "values", a)
        object.__setattr__(self, "h", h)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def like(self, values) -> "ImageGrid":
        """New grid with the same geometry and different values."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != self.values.shape:
            raise DimensionMismatchError(f"shape {v.shape} != {self.values.shape}")
        return ImageGrid(v, self.h)


@dataclass(frozen=True)
class VectorField:
    """Per-pixel 2-vectors (x, y components) on the same grid layout."""

    x: np.ndarray
    y: np.ndarray
    h: float

    def __post_init__(self):
        x = _as_readonly(self.x)
        y = _as_readonly(self.y)
        if x.ndim != 2 or x.shape != y.shape or x.size == 0:
            raise DimensionMismatchError(
                f"component shapes {x.shape} and {y.shape} must match and be 2-D"
            )
        if not self.h > 0:
            raise ValueError(f"mesh step must be positive, got {self.h}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "h", float(self.h))

    @property
    def rows(self) -> int:
        return self.x.shape[0]

    @property
    def cols(self) -> int:
        return self.x.shape[1]


def _same_grid(a, b) -> None:
    if a.values.shape != b.values.shape or a.h != b.h:
        raise DimensionMismatchError(
            f"grids differ: {a.values.shape}/h={a.h} vs {b.values.shape}/h={b.h}"
        )


def gradient(u: ImageGrid, boundary: str = "dirichlet") -> VectorField:
    """Backward-difference gradient, scaled by 1/h."""
    _check_boundary(boundary)
    v = u.values
    gx = np.empty_like(v)
    gy = np.empty_like(v)
    gx[:, 1:] = v[:, 1:] - v[:, :-1]
    gy[1:, :] = v[1:, :] - v[:-1, :]
    if boundary == "dirichlet":
        gx[:, 0] = v[:, 0]
        gy[0, :] = v[0, :]
    else:
        gx[:, 0] = 0.0
        gy[0, :] = 0.0
    return VectorField(gx / u.h, gy / u.h, u.h)


def divergence(w: VectorField, boundary: str = "dirichlet") -> ImageGrid:
    """Forward-difference divergence, the negative adjoint of gradient.

    Satisfies <gradient(u), w> = -<u, divergence(w)> exactly for matching
    boundary conventions.
    """
    _check_boundary(boundary)
    wx, wy = w.x, w.y
    dx = np.empty_like(wx)
    dy = np.empty_like(wy)
    dx[:, :-1] = wx[:, 1:] - wx[:, :-1]
    dx[:, -1] = -wx[:, -1]
    dy[:-1, :] = wy[1:, :] - wy[:-1, :]
    dy[-1, :] = -wy[-1, :]
    if boundary == "neumann":
        # the adjoint of a vanishing first difference drops the -w_0 term
        if w.cols > 1:
            dx[:, 0] = wx[:, 1]
        else:
            dx[:, 0] = 0.0
        if w.rows > 1:
            dy[0, :] = wy[1, :]
        else:
            dy[0, :] = 0.0
    return ImageGrid((dx + dy) / w.h, w.h)


def laplacian(u: ImageGrid, boundary: str = "dirichlet") -> ImageGrid:
    """Five-point Laplacian, computed as divergence(gradient(u))."""
    return divergence(gradient(u, boundary), boundary)


def image_dot(a: ImageGrid, b: ImageGrid) -> float:
    """Discrete L2 inner product h^2 * sum(a*b)."""
    _same_grid(a, b)
    return float(a.h * a.h * np.sum(a.values * b.values))


def field_dot(w: VectorField, z: VectorField) -> float:
    """Discrete L2 inner product of vector fields."""
    if w.x.shape != z.x.shape or w.h != z.h:
        raise DimensionMismatchError("vector fields live on different grids")
    return float(w.h * w.h * (np.sum(w.x * z.x) + np.sum(w.y * z.y)))


def l2_norm(u: ImageGrid) -> float:
    """Discrete L2 norm h * ||values||_2."""
    return float(u.h * np.linalg.norm(u.values))


@dataclass(frozen=True)
class HuberParams:
    """Huber smoothing parameter; the kink sits at radius 1/gamma."""

    gamma: float = 100.0

    def __post_init__(self):
        if not self.gamma >= 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")


def huber_vec(zx, zy, p: HuberParams):
    """Huberised unit vector z / max(1/gamma, |z|); |result| <= 1 everywhere.

    Accepts scalars or arrays (broadcast together); returns the two components.
    """
    zx = np.asarray(zx, dtype=np.float64)
    zy = np.asarray(zy, dtype=np.float64)
    m = np.maximum(1.0 / p.gamma, np.hypot(zx, zy))
    return zx / m, zy / m


def huber_vec_jac_fields(zx, zy, p: HuberParams):
    """Entries (axx, axy, ayy) of the symmetric generalized Jacobian of huber_vec.

    gamma * I on the linear branch |z| < 1/gamma; (1/|z|) (I - z z^T / |z|^2)
    on the projection branch.
    """
    zx = np.asarray(zx, dtype=np.float64)
    zy = np.asarray(zy, dtype=np.float64)
    r = np.hypot(zx, zy)
    linear = r < 1.0 / p.gamma
    safe = np.where(linear, 1.0, r)
    inv = 1.0 / safe
    nx = zx * inv
    ny = zy * inv
    axx = np.where(linear, p.gamma, (1.0 - nx * nx) * inv)
    axy = np.where(linear, 0.0, -nx * ny * inv)
    ayy = np.where(linear, p.gamma, (1.0 - ny * ny) * inv)
    return axx, axy, ayy


def huber_vec_jac(z, p: HuberParams) -> np.ndarray:
    """Generalized Jacobian of huber_vec at a single 2-vector, as a 2x2 array."""
    zx, zy = z
    axx, axy, ayy = huber_vec_jac_fields(zx, zy, p)
    return np.array([[float(axx), float(axy)], [float(axy), float(ayy)]])


def huber_sign(t, p: HuberParams):
    """Scalar huberised sign: gamma*t for |t| <= 1/gamma, sign(t) outside."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(np.abs(t) <= 1.0 / p.gamma, p.gamma * t, np.sign(t))


def huber_sign_deriv(t, p: HuberParams):
    """Generalized derivative of huber_sign: gamma inside the kink, 0 outside."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(np.abs(t) <= 1.0 / p.gamma, p.gamma, 0.0)
