"""Bathymetry-weighted inner products, norms, Lie operators and the operator M.

All quadrature is the plain grid mean (area of the torus is 1), which is
exact for resolved trigonometric integrands.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .grid import TWO_PI, Grid

BATHYMETRY_FAMILIES = ("constant", "single", "double")


@dataclass(frozen=True, eq=False)
class Bathymetry:
    """Positive depth weight ``b`` sampled on a grid, with aspect ratio ``delta``."""

    grid: Grid
    b: np.ndarray
    delta: float = 0.0
    floor: float = 1e-2

    def __post_init__(self):
        b = self.grid.check_scalar(self.b, "bathymetry")
        if not np.all(np.isfinite(b)):
            raise ValueError("bathymetry has non-finite values")
        if b.min() < self.floor:
            raise ValueError(f"bathymetry minimum {b.min():.3g} is below the floor {self.floor:.3g}")
        if self.delta < 0:
            raise ValueError(f"aspect ratio delta must be >= 0, got {self.delta}")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_family(cls, grid, family="constant", mean=1.0, amp=0.0, amp2=0.0,
                    delta=0.0, floor=1e-2):
        """Sample one of the built-in analytic families.

        ``constant``: ``mean``; ``single``: ``mean*(1 + amp*sin(2 pi x1))``;
        ``double``: ``mean*(1 + amp*sin(2 pi x1) + amp2*cos(2 pi x2))``.
        """
        x1, x2 = grid.coords
        if family == "constant":
            b = np.full(grid.shape, float(mean))
        elif family == "single":
            b = mean * (1.0 + amp * np.sin(TWO_PI * x1))
        elif family == "double":
            b = mean * (1.0 + amp * np.sin(TWO_PI * x1) + amp2 * np.cos(TWO_PI * x2))
        else:
            raise ValueError(f"unknown bathymetry family {family!r}; "
                             f"choose from {', '.join(BATHYMETRY_FAMILIES)}")
        return cls(grid, b, delta=delta, floor=floor)

    @cached_property
    def grad_b(self):
        g = self.grid.gradient(self.b)
        g.setflags(write=False)
        return g

    @cached_property
    def inv_b(self):
        return 1.0 / self.b

    @property
    def b_min(self):
        return float(self.b.min())

    @property
    def b_max(self):
        return float(self.b.max())

    @property
    def b_mean(self):
        return float(self.b.mean())

    @property
    def is_constant(self):
        return bool(np.ptp(self.b) == 0.0)


def _same_grid(f, g):
    if np.shape(f) != np.shape(g):
        raise ValueError(f"fields live on different grids: {np.shape(f)} vs {np.shape(g)}")


def weighted_inner(f, g, bath):
    """``<f, g>_b`` for scalar or vector fields (dot product over components)."""
    _same_grid(f, g)
    prod = np.asarray(f) * np.asarray(g)
    if prod.ndim == 3:
        prod = prod.sum(axis=0)
    bath.grid.check_scalar(prod)
    return float(np.mean(prod * bath.b))


def weighted_lp_norm(f, p, bath):
    """``(int |f|^p b)^(1/p)``; ``p = inf`` is the unweighted grid max.

    Vector fields use the pointwise Euclidean magnitude.
    """
    f = np.asarray(f, dtype=float)
    mag = np.sqrt((f**2).sum(axis=0)) if f.ndim == 3 else np.abs(f)
    bath.grid.check_scalar(mag)
    if p == np.inf:
        return float(mag.max())
    if p < 1:
        raise ValueError(f"Lp norm needs p >= 1, got {p}")
    if p == 2:
        return float(np.sqrt(np.mean(mag**2 * bath.b)))
    return float(np.mean(mag**p * bath.b) ** (1.0 / p))


def multi_indices(k):
    """All ``(a1, a2)`` with ``a1 + a2 <= k``."""
    return [(a1, a2) for a1, a2 in product(range(k + 1), repeat=2) if a1 + a2 <= k]


def weighted_sobolev_norm(f, k, bath):
    """``||f||_{b,k,2}``: root of the summed squared weighted L2 norms of ``D^alpha f``, ``|alpha| <= k``.

    Vector fields sum over components.
    """
    if k < 0:
        raise ValueError(f"Sobolev index must be >= 0, got {k}")
    grid = bath.grid
    f = np.asarray(f, dtype=float)
    comps = f if f.ndim == 3 else f[None]
    for comp in comps:
        grid.check_scalar(comp)
    symbols = _symbol_stack(grid, k)
    d = grid.irfft(grid.rfft(comps)[:, None] * symbols)
    return float(np.sqrt(np.mean(d * d * bath.b, axis=(-2, -1)).sum()))


_SYMBOL_CACHE = {}


def _symbol_stack(grid, k):
    key = (grid.n, k)
    if key not in _SYMBOL_CACHE:
        _SYMBOL_CACHE[key] = np.stack([grid.derivative_symbol(a) for a in multi_indices(k)])
    return _SYMBOL_CACHE[key]


def sup_sobolev_norm(f, k, grid):
    """``||f||_{k,inf} = max_{|alpha|<=k} max_x |D^alpha f|`` (vector: pointwise magnitude)."""
    f = np.asarray(f, dtype=float)
    comps = f if f.ndim == 3 else f[None]
    hats = [grid.rfft(c) for c in comps]
    best = 0.0
    for alpha in multi_indices(k):
        sym = grid.derivative_symbol(alpha)
        sq = sum(grid.irfft(h * sym) ** 2 for h in hats)
        best = max(best, float(np.sqrt(sq.max())))
    return best


def lie_derivative(xi, f, bath):
    """Transport ``xi . grad f``.

    Evaluated in the split form
    ``(xi.grad f + b^-1 div(b xi f) - b^-1 f div(b xi)) / 2``, which equals
    ``xi.grad f`` for resolved fields and keeps the discrete operator exactly
    skew-adjoint in ``<.,.>_b`` whenever ``div(b xi) = 0``.
    """
    grid = bath.grid
    xi = grid.check_vector(xi, "xi")
    f = grid.check_scalar(f)
    c = xi * bath.b
    d1, d2 = grid._first_derivative_symbols
    h = grid.rfft(np.stack([f, c[0] * f, c[1] * f, c[0], c[1]]))
    g1, g2, flux_div, div_c = grid.irfft(np.stack(
        [d1 * h[0], d2 * h[0], d1 * h[1] + d2 * h[2], d1 * h[3] + d2 * h[4]]))
    advective = xi[0] * g1 + xi[1] * g2
    return 0.5 * (advective + (flux_div - f * div_c) * bath.inv_b)


def lie_derivative_squared(xi, f, bath):
    return lie_derivative(xi, lie_derivative(xi, f, bath), bath)


def weighted_div_residual(u, bath):
    """Max-norm of ``div(b u)``."""
    u = bath.grid.check_vector(u, "u")
    return float(np.abs(bath.grid.divergence(u * bath.b)).max())


def apply_M(u, bath):
    """``M u = u + delta^2 b^-1 [ -1/3 grad(b^3 div u) - 1/2 grad(b^2 u.grad b)
    + 1/2 b^2 (div u) grad b + b (u.grad b) grad b ]``."""
    grid = bath.grid
    u = grid.check_vector(u, "u")
    if bath.delta == 0.0:
        return u.copy()
    b, gb = bath.b, bath.grad_b
    div_u = grid.divergence(u)
    u_gb = u[0] * gb[0] + u[1] * gb[1]
    inner = grid.gradient(-(b**3 * div_u) / 3.0 - 0.5 * b**2 * u_gb)
    inner += (0.5 * b**2 * div_u + b * u_gb) * gb
    return u + bath.delta**2 * inner * bath.inv_b
