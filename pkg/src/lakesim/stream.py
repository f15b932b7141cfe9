"""Vorticity-to-velocity map ``u = K omega`` for the weighted lake problem.

The stream function solves ``b^-1 curl(M(b^-1 perp_grad psi)) = omega``.
Multiplying by ``b`` gives an operator that is symmetric positive
semi-definite in the plain grid inner product, so the solve is a
preconditioned conjugate gradient on that form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .weighted import (
    Bathymetry,
    apply_M,
    weighted_div_residual,
    weighted_inner,
    weighted_lp_norm,
    weighted_sobolev_norm,
)

log = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-8


class CompatibilityError(ValueError):
    """Raised when the vorticity has non-zero weighted mean."""


class ConvergenceError(RuntimeError):
    """Raised when CG does not reach the requested tolerance."""


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    final_relative_residual: float
    converged: bool
    closure_residual: float = float("nan")


PRECONDITIONERS = ("scaled", "constant")


class EllipticOperator:
    """The weighted elliptic operator for one bathymetry.

    ``preconditioner="constant"`` uses ``(-b_mean Lap)^-1``; the default
    ``"scaled"`` sandwiches ``(-Lap)^-1`` between multiplications by
    ``sqrt(b)``, which tracks the ``b^-1`` coefficient of the operator.
    """

    def __init__(self, bath: Bathymetry, preconditioner="scaled"):
        if preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {preconditioner!r}")
        self.preconditioner = preconditioner
        self._sqrt_b = np.sqrt(bath.b)
        self.bath = bath
        self.grid = bath.grid
        n = self.grid.n
        d1, d2 = self.grid._first_derivative_symbols
        lap = np.abs(d1) ** 2 + np.abs(d2) ** 2  # -div grad, consistent with the derivative symbols
        null = self._null_mask()
        with np.errstate(divide="ignore"):
            pre = 1.0 / (bath.b_mean * lap)
        pre[null] = 0.0
        self._precond = pre
        self._null = null
        self.max_iterations = 10 * n

    def _null_mask(self):
        # modes where both first-derivative symbols vanish: constants and Nyquist combos
        n = self.grid.n
        mask = np.zeros((n, n // 2 + 1), dtype=bool)
        for a in (0, n // 2):
            for c in (0, n // 2):
                mask[a, c] = True
        return mask

    # -- operator ------------------------------------------------------------
    def velocity_of(self, psi):
        """``b^-1 perp_grad psi``."""
        return self.grid.perp_gradient(psi) * self.bath.inv_b

    def weighted_apply(self, psi):
        """``b * apply(psi) = curl(M(b^-1 perp_grad psi))`` (symmetric form)."""
        return self.grid.curl(apply_M(self.velocity_of(psi), self.bath))

    def _weighted_apply_fast(self, psi):
        # same operator as weighted_apply with the transforms batched
        grid, bath = self.grid, self.bath
        d1, d2 = grid._first_derivative_symbols
        ph = grid.rfft(psi)
        u = grid.irfft(np.stack([d2 * ph, -d1 * ph])) * bath.inv_b
        if bath.delta == 0.0:
            vh = grid.rfft(u)
            return grid.irfft(d1 * vh[1] - d2 * vh[0])
        b, gb = bath.b, bath.grad_b
        uh = grid.rfft(u)
        div_u = grid.irfft(d1 * uh[0] + d2 * uh[1])
        u_gb = u[0] * gb[0] + u[1] * gb[1]
        sh = grid.rfft(-(b**3 * div_u) / 3.0 - 0.5 * b**2 * u_gb)
        corr = grid.irfft(np.stack([d1 * sh, d2 * sh])) + (0.5 * b**2 * div_u + b * u_gb) * gb
        vh = uh + grid.rfft(bath.delta**2 * corr * bath.inv_b)
        return grid.irfft(d1 * vh[1] - d2 * vh[0])

    def apply(self, psi):
        """``b^-1 curl(M(b^-1 perp_grad psi))``."""
        psi = self.grid.check_scalar(psi, "psi")
        return self.weighted_apply(psi) * self.bath.inv_b

    def bilinear(self, psi, phi):
        """``a(psi, phi) = <b^-1 perp_grad psi, M(b^-1 perp_grad phi)>_b``."""
        return weighted_inner(self.velocity_of(psi),
                              apply_M(self.velocity_of(phi), self.bath), self.bath)

    # -- projections -----------------------------------------------------------
    def weighted_mean(self, f):
        return float(np.mean(f * self.bath.b) / self.bath.b_mean)

    def remove_weighted_mean(self, f):
        return f - self.weighted_mean(f)

    def _project_range(self, r):
        rh = self.grid.rfft(r)
        rh[self._null] = 0.0
        return self.grid.irfft(rh)

    def _precondition(self, r):
        if self.preconditioner == "constant":
            return self.grid.irfft(self._precond * self.grid.rfft(r))
        sb = self._sqrt_b
        z = sb * self.grid.irfft((self._precond * self.bath.b_mean) * self.grid.rfft(sb * r))
        return self._project_range(z)

    # -- solve -------------------------------------------------------------
    def check_compatible(self, omega):
        mean_b = weighted_inner(np.ones_like(omega), omega, self.bath)
        scale = max(1.0, weighted_lp_norm(omega, 2, self.bath))
        if abs(mean_b) > COMPATIBILITY_TOL * scale:
            raise CompatibilityError(
                f"vorticity has weighted mean <1, omega>_b = {mean_b:.3e}; "
                f"the stream problem needs it within {COMPATIBILITY_TOL:g} of zero")

    def solve(self, omega, tol=1e-10, psi0=None, max_iterations=None):
        """Solve ``apply(psi) = omega`` for zero-weighted-mean ``psi``.

        Returns ``(psi, SolverReport)``.
        """
        grid = self.grid
        omega = grid.check_scalar(omega, "omega")
        self.check_compatible(omega)
        rhs = self._project_range(omega * self.bath.b)
        rhs_norm = np.linalg.norm(rhs)
        maxit = self.max_iterations if max_iterations is None else max_iterations
        if rhs_norm == 0.0:
            return np.zeros(grid.shape), SolverReport(0, 0.0, True, 0.0)

        if psi0 is None:
            x = np.zeros(grid.shape)
            r = rhs.copy()
        else:
            x = self._project_range(grid.check_scalar(psi0, "psi0"))
            r = rhs - self._weighted_apply_fast(x)
        z = self._precondition(r)
        p = z.copy()
        rz = np.vdot(r, z)
        res = np.linalg.norm(r) / rhs_norm
        it = 0
        while res > tol and it < maxit:
            q = self._weighted_apply_fast(p)
            alpha = rz / np.vdot(p, q)
            x += alpha * p
            r -= alpha * q
            it += 1
            res = np.linalg.norm(r) / rhs_norm
            if res <= tol:
                break
            z = self._precondition(r)
            rz_new = np.vdot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        converged = res <= tol
        if not converged:
            raise ConvergenceError(
                f"CG stopped after {it} iterations at relative residual {res:.3e} (tol {tol:g})")
        psi = self.remove_weighted_mean(x)
        return psi, SolverReport(it, float(res), converged)

    def velocity_from_vorticity(self, omega, tol=1e-10, psi0=None):
        """``u = K omega = b^-1 perp_grad psi``; returns ``(u, psi, report)``.

        The report carries the closure residual
        ``||b^-1 curl(M u) - omega||_{b,2} / ||omega||_{b,2}``.
        """
        psi, report = self.solve(omega, tol=tol, psi0=psi0)
        u = self.velocity_of(psi)
        norm = weighted_lp_norm(omega, 2, self.bath)
        if norm > 0:
            closure = self.grid.curl(apply_M(u, self.bath)) * self.bath.inv_b - omega
            closure = weighted_lp_norm(closure, 2, self.bath) / norm
        else:
            closure = 0.0
        report = SolverReport(report.iterations, report.final_relative_residual,
                              report.converged, float(closure))
        return u, psi, report


def solve_stream(op: EllipticOperator, omega, tol=1e-10):
    return op.solve(omega, tol=tol)


def velocity_from_vorticity(op: EllipticOperator, omega, tol=1e-10):
    u, _, _ = op.velocity_from_vorticity(omega, tol=tol)
    return u


def regularity_probe(op: EllipticOperator, k, num_samples=8, rng=None, samples=None, tol=1e-10):
    """Max over random band-limited vorticities of ``||u||_{b,k,2} / ||omega||_{b,k-1,2}``."""
    if k < 1:
        raise ValueError(f"regularity probe needs k >= 1, got {k}")
    if samples is None:
        rng = np.random.default_rng(0) if rng is None else rng
        samples = [op.remove_weighted_mean(op.grid.random_smooth(rng, kmax=4))
                   for _ in range(num_samples)]
    best = 0.0
    for omega in samples:
        u, _, _ = op.velocity_from_vorticity(omega, tol=tol)
        ratio = weighted_sobolev_norm(u, k, op.bath) / weighted_sobolev_norm(omega, k - 1, op.bath)
        best = max(best, ratio)
    return best


def coercivity_constant(op: EllipticOperator, num_samples=8, rng=None):
    """Min over random zero-mean ``psi`` of ``a(psi, psi) / ||psi||^2_{b,1,2}``."""
    rng = np.random.default_rng(1) if rng is None else rng
    best = np.inf
    for _ in range(num_samples):
        psi = op.remove_weighted_mean(op.grid.random_smooth(rng, kmax=4))
        best = min(best, op.bilinear(psi, psi) / weighted_sobolev_norm(psi, 1, op.bath) ** 2)
    return float(best)


def sobolev_constant_estimate(op: EllipticOperator, k, num_samples=100, rng=None, tol=1e-10):
    """Max over random vorticities of ``||grad u||_inf / ||omega||_{b,k,2}``."""
    rng = np.random.default_rng(2) if rng is None else rng
    grid = op.grid
    best = 0.0
    for _ in range(num_samples):
        omega = op.remove_weighted_mean(grid.random_smooth(rng, kmax=4))
        u, _, _ = op.velocity_from_vorticity(omega, tol=tol)
        g0, g1 = grid.gradient(u[0]), grid.gradient(u[1])
        grad_inf = float(np.sqrt(g0[0]**2 + g0[1]**2 + g1[0]**2 + g1[1]**2).max())
        best = max(best, grad_inf / weighted_sobolev_norm(omega, k, op.bath))
    return best


__all__ = [
    "CompatibilityError", "ConvergenceError", "EllipticOperator", "SolverReport",
    "coercivity_constant", "regularity_probe", "sobolev_constant_estimate",
    "solve_stream", "velocity_from_vorticity", "weighted_div_residual",
]
