"""Epsilon-weighted norms on grid paths.

The fast components of a path carry a weight eps, the slow component a
weight 1.  All Hilbert-space quantities (L2, W12) are trapezoid-rule
quadratures of the pointwise weighted norm; the weighted sup-norm splits
as  eps*sup|xi| + sup|zeta|.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class WeightContext:
    """Carries (eps, b) and the derived scaling data for the weighted norms.

    The pointwise squared norm of eta = (xi, zeta) is

        |eta|_eps^2 = eps^2 |xi|^2 + (zeta - eps <b, xi>)^2 / (1 - |b|^2)

    which is the quadratic form of the metric block obtained by inverting
    [[I/eps^2, b/eps], [b^T/eps, 1]].
    """

    eps: float
    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", b)
        if not 0.0 < self.eps:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if np.linalg.norm(b) >= 1.0:
            raise ValueError(f"|b| must be < 1, got {np.linalg.norm(b)}")

    @property
    def n(self) -> int:
        return self.b.size + 1

    @property
    def bnorm2(self) -> float:
        return float(self.b @ self.b)

    @property
    def meps(self) -> np.ndarray:
        """Diagonal of the scaling matrix diag(eps, ..., eps, 1)."""
        d = np.full(self.n, self.eps)
        d[-1] = 1.0
        return d


@dataclass(frozen=True)
class Grid:
    """Uniform time grid on [-T, T] with an odd number of nodes.

    m odd guarantees t = 0 is a node, which the time-shift experiments rely
    on.
    """

    T: float
    m: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"half-length T must be positive, got {self.T}")
        if self.m < 3 or self.m % 2 == 0:
            raise ValueError(f"node count m must be odd and >= 3, got {self.m}")

    @property
    def dt(self) -> float:
        return 2.0 * self.T / (self.m - 1)

    def times(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.m)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.m, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass
class GridPath:
    """A curve gamma: grid -> R^n stored as an (m, n) array.

    The last column is the slow z (or zeta) component, the leading n-1
    columns the fast x (or xi) block.  Also used for perturbations
    eta = (xi, zeta).
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.m:
            raise ValueError(
                f"values must have shape (m, n) with m={self.grid.m}, "
                f"got {self.values.shape}"
            )

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def xi(self) -> np.ndarray:
        return self.values[:, :-1]

    @property
    def zeta(self) -> np.ndarray:
        return self.values[:, -1]

    def derivative(self) -> "GridPath":
        """Discrete time derivative: central differences in the interior,
        second-order one-sided stencils at the two boundary nodes."""
        return GridPath(self.grid, d_dt(self.values, self.grid.dt))

    def copy(self) -> "GridPath":
        return GridPath(self.grid, self.values.copy())

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridPath":
        """Sample fn on the grid; fn maps a times array (m,) to values (m, n)."""
        return cls(grid, np.asarray(fn(grid.times()), dtype=float))

    @classmethod
    def zeros(cls, grid: Grid, n: int) -> "GridPath":
        return cls(grid, np.zeros((grid.m, n)))

    def __add__(self, other: "GridPath") -> "GridPath":
        _check_same_grid(self, other)
        return GridPath(self.grid, self.values + other.values)

    def __sub__(self, other: "GridPath") -> "GridPath":
        _check_same_grid(self, other)
        return GridPath(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "GridPath":
        return GridPath(self.grid, self.values * c)

    __rmul__ = __mul__


def d_dt(values: np.ndarray, dt: float) -> np.ndarray:
    """Second-order discrete derivative along axis 0."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


def _check_same_grid(a: GridPath, b: GridPath):
    if a.grid != b.grid:
        raise ValueError("paths live on different grids")


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

def pointwise_norm_sq_many(ctx: WeightContext, values: np.ndarray) -> np.ndarray:
    """Vectorised |eta_i|_eps^2 for values of shape (m, n)."""
    xi = values[..., :-1]
    zeta = values[..., -1]
    cross = zeta - ctx.eps * (xi @ ctx.b)
    return ctx.eps**2 * np.sum(xi * xi, axis=-1) + cross**2 / (1.0 - ctx.bnorm2)


def pointwise_norm(ctx: WeightContext, eta: np.ndarray) -> float:
    """Weighted norm |eta|_eps of a single vector in R^n."""
    eta = np.asarray(eta, dtype=float)
    return float(np.sqrt(pointwise_norm_sq_many(ctx, eta[None, :])[0]))


def g0_matrix(ctx: WeightContext) -> np.ndarray:
    """The unperturbed metric g0_eps as a dense (n, n) matrix.

    Inverse of the block matrix [[I/eps^2, b/eps], [b^T/eps, 1]]; the
    quadratic form of this matrix reproduces pointwise_norm squared.
    """
    nm1 = ctx.n - 1
    b = ctx.b
    c = 1.0 / (1.0 - ctx.bnorm2)
    g = np.empty((ctx.n, ctx.n))
    g[:nm1, :nm1] = ctx.eps**2 * (np.eye(nm1) + c * np.outer(b, b))
    g[:nm1, -1] = -ctx.eps * c * b
    g[-1, :nm1] = -ctx.eps * c * b
    g[-1, -1] = c
    return g


def g0_inverse_matrix(ctx: WeightContext) -> np.ndarray:
    """The block matrix [[I/eps^2, b/eps], [b^T/eps, 1]]."""
    nm1 = ctx.n - 1
    gi = np.empty((ctx.n, ctx.n))
    gi[:nm1, :nm1] = np.eye(nm1) / ctx.eps**2
    gi[:nm1, -1] = ctx.b / ctx.eps
    gi[-1, :nm1] = ctx.b / ctx.eps
    gi[-1, -1] = 1.0
    return gi


def g0_inner(ctx: WeightContext, eta: np.ndarray, etap: np.ndarray) -> float:
    """Weighted inner product of two vectors in R^n.

    Expanded form: eps^2 <xi, xi'> + [eps^2 <xi,b><xi',b> - eps <xi,b> z'
    - eps <xi',b> z + z z'] / (1 - |b|^2).
    """
    eta = np.asarray(eta, dtype=float)
    etap = np.asarray(etap, dtype=float)
    xi, z = eta[:-1], eta[-1]
    xip, zp = etap[:-1], etap[-1]
    c = 1.0 / (1.0 - ctx.bnorm2)
    bx, bxp = xi @ ctx.b, xip @ ctx.b
    return float(
        ctx.eps**2 * (xi @ xip)
        + c * (ctx.eps**2 * bx * bxp - ctx.eps * bx * zp - ctx.eps * bxp * z + z * zp)
    )


def g0_inner_many(ctx: WeightContext, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised nodewise weighted inner product for (m, n) arrays."""
    c = 1.0 / (1.0 - ctx.bnorm2)
    xiu, zu = u[..., :-1], u[..., -1]
    xiv, zv = v[..., :-1], v[..., -1]
    bu, bv = xiu @ ctx.b, xiv @ ctx.b
    return ctx.eps**2 * np.sum(xiu * xiv, axis=-1) + c * (
        ctx.eps**2 * bu * bv - ctx.eps * bu * zv - ctx.eps * bv * zu + zu * zv
    )


# ---------------------------------------------------------------------------
# path norms
# ---------------------------------------------------------------------------

def l2_norm(ctx: WeightContext, path: GridPath) -> float:
    w = path.grid.trapezoid_weights()
    return float(np.sqrt(w @ pointwise_norm_sq_many(ctx, path.values)))


def l2_inner(ctx: WeightContext, p1: GridPath, p2: GridPath) -> float:
    _check_same_grid(p1, p2)
    w = p1.grid.trapezoid_weights()
    return float(w @ g0_inner_many(ctx, p1.values, p2.values))


def w12_norm(ctx: WeightContext, path: GridPath, dpath: GridPath) -> float:
    _check_same_grid(path, dpath)
    return float(np.hypot(l2_norm(ctx, path), l2_norm(ctx, dpath)))


def linf_norm(ctx: WeightContext, path: GridPath) -> float:
    xi_sup = np.sqrt(np.sum(path.xi**2, axis=1)).max() if path.n > 1 else 0.0
    return float(ctx.eps * xi_sup + np.abs(path.zeta).max())


def sobolev_ratio(ctx: WeightContext, path: GridPath, dpath: GridPath) -> float:
    """eps^(1/2) |path|_{Linf_eps} / |path|_{W12_eps}; finite for nonzero paths.

    The supremum of this ratio over paths is the constant in the weighted
    Sobolev embedding; it is never given in closed form, so experiments
    report the measured value.
    """
    denom = w12_norm(ctx, path, dpath)
    if denom == 0.0:
        raise ValueError("sobolev_ratio undefined for the zero path")
    return float(np.sqrt(ctx.eps) * linf_norm(ctx, path) / denom)
