"""SALT noise: basis fields, Brownian increment tables and noise operators.

Driving noise is generated with numpy's Philox4x64 counter-based bit
generator, one stream per noise mode keyed by ``(seed, mode index)``.  Each
row is drawn in step order with ``Generator.standard_normal`` and scaled by
``sqrt(dt_fine)``.  The table for mode ``i`` therefore does not depend on how
many other modes exist or in which order rows are generated.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import TWO_PI
from .weighted import (
    lie_derivative,
    sup_sobolev_norm,
    weighted_div_residual,
    weighted_inner,
    weighted_lp_norm,
    weighted_sobolev_norm,
)

DIV_TOL = 1e-9
BROWNIAN_MAGIC = b"LSW1\x00\x00\x00\x00"
_HEADER = struct.Struct("<8sqddQ")


class BasisValidationError(ValueError):
    """A noise field violates ``div(b xi) = 0``."""


@dataclass(frozen=True, eq=False)
class NoiseBasis:
    """Finite family of transport fields ``xi_i`` (shape ``(m, 2, n, n)``) with their amplitudes."""

    fields: np.ndarray
    amplitudes: tuple = ()
    modes: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.fields, dtype=float)
        if f.ndim != 4 or f.shape[1] != 2:
            raise ValueError(f"noise fields must have shape (m, 2, n, n), got {f.shape}")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "fields", f)
        if not self.amplitudes:
            object.__setattr__(self, "amplitudes", (1.0,) * len(f))
        if len(self.amplitudes) != len(f):
            raise ValueError("one amplitude per noise field is required")

    @property
    def m(self):
        return len(self.fields)

    def __len__(self):
        return self.m

    @classmethod
    def empty(cls, grid):
        return cls(np.zeros((0, 2) + grid.shape))


def fourier_modes(m):
    """First ``m`` real Fourier modes ``(k1, k2, kind)`` ordered by ``|k|``.

    Wavevectors are taken from the half plane ``k1 > 0 or (k1 == 0 and k2 > 0)``
    sorted by ``(|k|^2, k1, k2)``; each contributes ``sin`` then ``cos``.
    """
    modes = []
    radius = 1
    while len(modes) < m:
        modes = []
        ks = [(a, c) for a in range(0, radius + 1) for c in range(-radius, radius + 1)
              if (a > 0 or c > 0) and a * a + c * c <= radius * radius]
        ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
        for k in ks:
            modes.append((k[0], k[1], "sin"))
            modes.append((k[0], k[1], "cos"))
        radius += 1
    return modes[:m]


def build_noise_basis(bath, m, decay_exponent=2.0, scale=1.0):
    """``xi_i = a_i b^-1 perp_grad zeta_i`` with ``a_i = scale |k_i|^-p``."""
    if m < 0:
        raise ValueError(f"noise mode count must be >= 0, got {m}")
    if decay_exponent <= 0:
        raise ValueError(f"decay exponent must be > 0, got {decay_exponent}")
    grid = bath.grid
    if m == 0:
        return NoiseBasis.empty(grid)
    x1, x2 = grid.coords
    fields, amps = [], []
    modes = fourier_modes(m)
    for k1, k2, kind in modes:
        phase = TWO_PI * (k1 * x1 + k2 * x2)
        zeta = np.sin(phase) if kind == "sin" else np.cos(phase)
        a = scale * math.hypot(k1, k2) ** (-decay_exponent)
        fields.append(a * grid.perp_gradient(zeta) * bath.inv_b)
        amps.append(a)
    return NoiseBasis(np.array(fields), tuple(amps), tuple(modes))


@dataclass
class BasisReport:
    m: int
    div_residuals: list
    lie_sum_ratio: float
    lie2_sum_ratio: float
    sup_norm_sum: float
    passed: bool
    failures: list = field(default_factory=list)

    def as_dict(self):
        return {
            "m": self.m,
            "max_div_residual": max(self.div_residuals, default=0.0),
            "div_residuals": list(self.div_residuals),
            "sum_lie_over_h1": self.lie_sum_ratio,
            "sum_lie2_over_h2": self.lie2_sum_ratio,
            "sum_sup_norms": self.sup_norm_sum,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def validate_basis(basis, bath, k=2, probes=None, rng=None, raise_on_failure=False):
    """Measure the summability constants on probe fields and check ``div(b xi_i)``."""
    grid = bath.grid
    if probes is None:
        rng = np.random.default_rng(11) if rng is None else rng
        probes = [grid.random_smooth(rng, kmax=4) for _ in range(5)]
    residuals = [weighted_div_residual(xi, bath) for xi in basis.fields]
    lie_ratio = lie2_ratio = 0.0
    for f in probes:
        s1 = s2 = 0.0
        for xi in basis.fields:
            lf = lie_derivative(xi, f, bath)
            s1 += weighted_lp_norm(lf, 2, bath) ** 2
            s2 += weighted_lp_norm(lie_derivative(xi, lf, bath), 2, bath) ** 2
        lie_ratio = max(lie_ratio, s1 / weighted_sobolev_norm(f, 1, bath) ** 2)
        lie2_ratio = max(lie2_ratio, s2 / weighted_sobolev_norm(f, 2, bath) ** 2)
    sup_sum = sum(sup_sobolev_norm(xi, k + 1, grid) ** 2 for xi in basis.fields)
    failures = [f"xi_{i}: div(b xi) = {r:.3e} > {DIV_TOL:g}"
                for i, r in enumerate(residuals) if r > DIV_TOL]
    report = BasisReport(basis.m, residuals, lie_ratio, lie2_ratio, sup_sum,
                         passed=not failures, failures=failures)
    if failures and raise_on_failure:
        raise BasisValidationError("; ".join(failures))
    return report


def ito_correction(basis, omega, bath):
    """``1/2 sum_i L_i(L_i omega)``."""
    out = np.zeros(bath.grid.shape)
    for xi in basis.fields:
        out += lie_derivative(xi, lie_derivative(xi, omega, bath), bath)
    return 0.5 * out


def transport_increment(basis, omega, dW, bath):
    """``sum_i dW_i L_i omega``."""
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.shape != (basis.m,):
        raise ValueError(f"expected {basis.m} Brownian increments, got shape {dW.shape}")
    out = np.zeros(bath.grid.shape)
    for xi, w in zip(basis.fields, dW):
        if w != 0.0:
            out += w * lie_derivative(xi, omega, bath)
    return out


def adjointness_defect(xi, f, g, bath):
    """``<g, L f>_b + <L g, f>_b`` (zero when ``div(b xi) = 0``)."""
    return (weighted_inner(g, lie_derivative(xi, f, bath), bath)
            + weighted_inner(lie_derivative(xi, g, bath), f, bath))


def dissipation_defect(xi, f, bath):
    """``<f, L^2 f>_b + <L f, L f>_b``."""
    lf = lie_derivative(xi, f, bath)
    return weighted_inner(f, lie_derivative(xi, lf, bath), bath) + weighted_inner(lf, lf, bath)


# -- Brownian paths -------------------------------------------------------------------


def _steps_for(horizon, dt_fine):
    steps = horizon / dt_fine
    rounded = round(steps)
    if abs(steps - rounded) < 1e-9 * max(1.0, steps):
        return int(rounded)
    return int(math.ceil(steps))


def _mode_row(seed, mode, steps):
    gen = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), mode]))
    return gen.standard_normal(steps)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Table of fine Brownian increments, shape ``(m, steps)``."""

    seed: int
    dt_fine: float
    horizon: float
    increments: np.ndarray

    @classmethod
    def generate(cls, m, dt_fine, horizon, seed):
        if dt_fine <= 0 or horizon < 0:
            raise ValueError("Brownian path needs dt_fine > 0 and horizon >= 0")
        steps = _steps_for(horizon, dt_fine)
        table = np.empty((m, steps))
        for i in range(m):
            table[i] = _mode_row(seed, i, steps) * math.sqrt(dt_fine)
        table.setflags(write=False)
        return cls(int(seed), float(dt_fine), float(horizon), table)

    @property
    def m(self):
        return self.increments.shape[0]

    @property
    def steps(self):
        return self.increments.shape[1]

    def ratio(self, dt):
        r = dt / self.dt_fine
        ri = round(r)
        if ri < 1 or abs(r - ri) > 1e-9 * r:
            raise ValueError(f"step {dt:g} is not an integer multiple of dt_fine {self.dt_fine:g}")
        return int(ri)

    def increments_at(self, step_index, dt):
        """``W(t + dt) - W(t)`` with ``t = step_index * dt``, summed from the fine table."""
        r = self.ratio(dt)
        lo = step_index * r
        hi = lo + r
        if step_index < 0 or hi > self.steps:
            raise ValueError(f"increment window [{lo}, {hi}) leaves the horizon ({self.steps} fine steps)")
        if r == 1:
            return self.increments[:, lo].copy()
        return self.increments[:, lo:hi].sum(axis=1)

    def coarse_table(self, dt):
        r = self.ratio(dt)
        usable = (self.steps // r) * r
        return self.increments[:, :usable].reshape(self.m, -1, r).sum(axis=2)

    # -- binary IO ---------------------------------------------------------
    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BROWNIAN_MAGIC, self.m, self.dt_fine, self.horizon,
                                  self.seed & (2**64 - 1)))
            fh.write(np.ascontiguousarray(self.increments, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated Brownian table header")
        magic, m, dt_fine, horizon, seed = _HEADER.unpack_from(raw)
        if magic != BROWNIAN_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {BROWNIAN_MAGIC!r}")
        steps = _steps_for(horizon, dt_fine)
        payload = raw[_HEADER.size:]
        if len(payload) != 8 * m * steps:
            raise ValueError(f"{path}: truncated Brownian table payload "
                             f"({len(payload)} bytes, expected {8 * m * steps})")
        table = np.frombuffer(payload, dtype="<f8").reshape(m, steps).astype(float)
        table.setflags(write=False)
        return cls(int(seed), dt_fine, horizon, table)
