"""Time integration of the truncated vorticity equation and the viscous cascade.

Two integrators share one signature:

* ``ito_em``: Euler-Maruyama on the Ito form (explicit Ito correction);
* ``strat_heun``: Heun predictor-corrector on the Stratonovich form.

Viscosity enters through the exact heat semigroup applied after the explicit
update (integrating-factor splitting), so any ``nu >= 0`` is stable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .noise import NoiseBasis, ito_correction, transport_increment
from .stream import CompatibilityError, EllipticOperator
from .weighted import (
    lie_derivative,
    weighted_div_residual,
    weighted_inner,
    weighted_lp_norm,
    weighted_sobolev_norm,
)

log = logging.getLogger(__name__)

INTEGRATORS = ("ito_em", "strat_heun")
CUTOFF_NORMS = ("velocity_k_norm", "vorticity_km1_norm")
CFL_NUMBER = 0.5


class CFLError(ValueError):
    """Time step exceeds the advective stability limit."""


def cutoff_fR(x, R):
    """Smooth cutoff: 1 on ``[0, R]``, 0 on ``[R+1, inf)``, quintic smoothstep between."""
    if x < 0:
        raise ValueError(f"cutoff argument must be >= 0, got {x}")
    s = x - R
    if s <= 0.0:
        return 1.0
    if s >= 1.0:
        return 0.0
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class TruncationConfig:
    R: float
    cutoff_norm: str = "velocity_k_norm"
    sobolev_k: int = 2

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"truncation level R must be > 0, got {self.R}")
        if self.cutoff_norm not in CUTOFF_NORMS:
            raise ValueError(f"cutoff_norm must be one of {CUTOFF_NORMS}, got {self.cutoff_norm!r}")
        if self.sobolev_k < 2:
            raise ValueError(f"Sobolev index k must be >= 2, got {self.sobolev_k}")


@dataclass
class StoppingMonitor:
    """First-crossing scan of ``||omega||_{b,k-1,2} >= R / C``.

    ``certified`` stays true while every pre-trigger step had cutoff value 1,
    i.e. the truncated path coincides with the untruncated one.
    """

    R: float
    C_sobolev: float = 1.0
    triggered_at: Optional[float] = None
    trigger_index: Optional[int] = None
    certified: bool = True
    steps_seen: int = 0

    @property
    def threshold(self):
        return self.R / self.C_sobolev

    @property
    def triggered(self):
        return self.triggered_at is not None

    def check(self, t, norm_km1, cutoff_value=1.0):
        if self.triggered_at is None:
            if norm_km1 >= self.threshold:
                self.triggered_at = t
                self.trigger_index = self.steps_seen
            elif cutoff_value != 1.0:
                self.certified = False
        self.steps_seen += 1
        return self


def check_stopping(monitor, state, model):
    norm = weighted_sobolev_norm(state.omega, model.trunc.sobolev_k - 1, model.bath)
    return monitor.check(state.t, norm, state.cutoff)


@dataclass
class SimState:
    t: float
    omega: np.ndarray
    u: np.ndarray
    psi: Optional[np.ndarray] = None
    cutoff: float = 1.0


@dataclass
class Model:
    """Static ingredients of a run: operator, noise basis, truncation."""

    op: EllipticOperator
    basis: NoiseBasis
    trunc: TruncationConfig
    tol: float = 1e-10

    @property
    def bath(self):
        return self.op.bath

    @property
    def grid(self):
        return self.op.grid

    def velocity(self, omega, psi0=None):
        """``K`` applied to the weighted-mean-free part of ``omega``; returns ``(u, psi)``."""
        u, psi, _ = self.op.velocity_from_vorticity(
            self.op.remove_weighted_mean(omega), tol=self.tol, psi0=psi0)
        return u, psi

    def cutoff_value(self, u=None, omega=None):
        k = self.trunc.sobolev_k
        if self.trunc.cutoff_norm == "velocity_k_norm":
            x = weighted_sobolev_norm(u, k, self.bath)
        else:
            x = weighted_sobolev_norm(omega, k - 1, self.bath)
        return cutoff_fR(x, self.trunc.R)

    def initial_state(self, omega0, t=0.0):
        omega0 = self.grid.check_scalar(omega0, "omega0")
        self.op.check_compatible(omega0)
        u, psi = self.velocity(omega0)
        return SimState(t, omega0.copy(), u, psi, self.cutoff_value(u, omega0))


def transport(u, omega, bath):
    return lie_derivative(u, omega, bath)


def drift_truncated(state, model, nu=0.0, u_adv=None, cutoff=None):
    """``nu Lap omega - f_R u.grad omega + 1/2 sum L_i^2 omega``.

    ``u_adv`` overrides the advecting velocity (frozen-velocity cascade);
    ``cutoff`` overrides the cutoff value computed from it.
    """
    omega = state.omega
    u = state.u if u_adv is None else u_adv
    fr = model.cutoff_value(u, omega) if cutoff is None else cutoff
    out = ito_correction(model.basis, omega, model.bath)
    if fr != 0.0:
        out -= fr * transport(u, omega, model.bath)
    if nu:
        out += nu * model.grid.laplacian(omega)
    return out


def cfl_limit(grid, u):
    umax = float(np.sqrt((u**2).sum(axis=0)).max())
    return CFL_NUMBER * (1.0 / grid.n) / max(umax, 1.0)


def _check_cfl(grid, dt, u):
    if dt <= 0:
        raise CFLError(f"time step must be positive, got {dt}")
    limit = cfl_limit(grid, u)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:g} exceeds the CFL limit {limit:g}")


def step_ito_em(state, dt, dW, model, nu=0.0, u_adv=None, cutoff=None, update_velocity=True):
    """One Euler-Maruyama step of the Ito form; returns the new state."""
    u = state.u if u_adv is None else u_adv
    _check_cfl(model.grid, dt, u)
    drift = drift_truncated(state, model, 0.0, u_adv=u, cutoff=cutoff)
    new = state.omega + dt * drift - transport_increment(model.basis, state.omega, dW, model.bath)
    if nu:
        new = model.grid.heat_semigroup(new, nu, dt)
    return _advance(state, new, dt, model, update_velocity)


def heun_noise_increment(basis, omega, dW, bath):
    """Stratonovich noise increment ``(G(omega) + G(omega + G(omega))) / 2`` with ``G = -sum dW_i L_i``."""
    g0 = -transport_increment(basis, omega, dW, bath)
    g1 = -transport_increment(basis, omega + g0, dW, bath)
    return 0.5 * (g0 + g1)


def step_stratonovich_heun(state, dt, dW, model, nu=0.0, u_adv=None, cutoff=None,
                           update_velocity=True):
    """One step of the Stratonovich form.

    The noise term uses a Heun predictor-corrector; transport uses the same
    explicit drift as :func:`step_ito_em`, without the Ito correction.
    """
    u = state.u if u_adv is None else u_adv
    _check_cfl(model.grid, dt, u)
    fr = model.cutoff_value(u, state.omega) if cutoff is None else cutoff
    new = state.omega + heun_noise_increment(model.basis, state.omega, dW, model.bath)
    if fr != 0.0:
        new -= dt * fr * transport(u, state.omega, model.bath)
    if nu:
        new = model.grid.heat_semigroup(new, nu, dt)
    return _advance(state, new, dt, model, update_velocity)


def _advance(state, new, dt, model, update_velocity):
    t = state.t + dt
    if not update_velocity:
        return SimState(t, new, state.u, state.psi, state.cutoff)
    u, psi = model.velocity(new, psi0=state.psi)
    return SimState(t, new, u, psi, model.cutoff_value(u, new))


STEPPERS = {"ito_em": step_ito_em, "strat_heun": step_stratonovich_heun}


# -- diagnostics ---------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    l2b: float
    linf: float
    hk: float
    divres: float
    cutoff: float
    stopped: bool


def diagnostics_row(state, model, monitor):
    bath = model.bath
    return DiagnosticsRow(
        t=float(state.t),
        l2b=weighted_lp_norm(state.omega, 2, bath),
        linf=weighted_lp_norm(state.omega, np.inf, bath),
        hk=weighted_sobolev_norm(state.omega, model.trunc.sobolev_k, bath),
        divres=weighted_div_residual(state.u, bath),
        cutoff=float(state.cutoff),
        stopped=monitor.triggered,
    )


@dataclass
class RunResult:
    rows: list
    monitor: StoppingMonitor
    final: SimState
    omegas: list = field(default_factory=list)
    velocities: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([r.t for r in self.rows])


def _n_steps(T, dt):
    steps = T / dt
    n = round(steps)
    if abs(steps - n) > 1e-9 * max(steps, 1.0):
        raise ValueError(f"T = {T:g} is not an integer multiple of dt = {dt:g}")
    return int(n)


def run_path(omega0, model, path, dt, T, nu=0.0, integrator="ito_em", C_sobolev=1.0,
             keep_fields=False, keep_velocities=False,
             on_step: Optional[Callable] = None):
    """Integrate from ``omega0`` over ``[0, T]`` at fixed ``dt``.

    Records one :class:`DiagnosticsRow` per time level (including ``t = 0``).
    """
    if integrator not in STEPPERS:
        raise ValueError(f"unknown integrator {integrator!r}; choose from {INTEGRATORS}")
    steps = _n_steps(T, dt)
    if model.basis.m and path.m < model.basis.m:
        raise ValueError(f"Brownian path has {path.m} modes, basis needs {model.basis.m}")
    stepper = STEPPERS[integrator]
    state = model.initial_state(omega0)
    monitor = StoppingMonitor(model.trunc.R, C_sobolev)
    check_stopping(monitor, state, model)
    rows = [diagnostics_row(state, model, monitor)]
    omegas = [state.omega] if keep_fields else []
    velocities = [state.u] if keep_velocities else []
    for s in range(steps):
        dW = path.increments_at(s, dt)[: model.basis.m] if model.basis.m else np.zeros(0)
        state = stepper(state, dt, dW, model, nu)
        state.t = (s + 1) * dt
        check_stopping(monitor, state, model)
        rows.append(diagnostics_row(state, model, monitor))
        if keep_fields:
            omegas.append(state.omega)
        if keep_velocities:
            velocities.append(state.u)
        if on_step is not None:
            on_step(state)
    return RunResult(rows, monitor, state, omegas, velocities)


# -- viscous cascade ---------------------------------------------------------------------


@dataclass
class CascadeLevel:
    level: int
    nu: float
    rows: list
    sup_hk: float
    omegas: list = field(default_factory=list)


@dataclass
class CascadeResult:
    levels: list
    gaps: list  # gaps[j] = sup_t ||omega^(j+1) - omega^(j+2)||_{b,2}


def run_viscous_cascade(omega0, model, path, dt, T, n_max, integrator="ito_em",
                        keep_fields=False, frozen_level0=True):
    """Levels ``n = 1..n_max`` with ``nu_n = 1/n``, each advected by level ``n-1``'s velocity.

    Level 1 is advected by ``K omega0`` held fixed in time.  All levels use
    the same Brownian increments and time grid.
    """
    if n_max < 1:
        raise ValueError(f"cascade needs at least one level, got n_max = {n_max}")
    if integrator not in STEPPERS:
        raise ValueError(f"unknown integrator {integrator!r}; choose from {INTEGRATORS}")
    if not frozen_level0:
        raise NotImplementedError("only the frozen K omega0 level-0 velocity is implemented")
    stepper = STEPPERS[integrator]
    steps = _n_steps(T, dt)
    bath = model.bath
    base = model.initial_state(omega0)
    m = model.basis.m
    dWs = [path.increments_at(s, dt)[:m] if m else np.zeros(0) for s in range(steps)]

    # advecting velocity and cutoff of the previous level at every time level
    prev_u = [base.u] * (steps + 1)
    prev_cut = [base.cutoff] * (steps + 1)
    prev_omega = None
    levels, gaps = [], []
    for n in range(1, n_max + 1):
        nu = 1.0 / n
        need_u = n < n_max
        monitor = StoppingMonitor(model.trunc.R)
        state = SimState(0.0, base.omega.copy(), prev_u[0], base.psi, prev_cut[0])
        this_omega = [state.omega]
        this_u, this_cut = [base.u], [base.cutoff]
        check_stopping(monitor, state, model)
        rows = [diagnostics_row(state, model, monitor)]
        psi = base.psi
        for s in range(steps):
            state = SimState(state.t, state.omega, prev_u[s], psi, prev_cut[s])
            state = stepper(state, dt, dWs[s], model, nu, u_adv=prev_u[s], cutoff=prev_cut[s],
                            update_velocity=False)
            if need_u:
                u, psi = model.velocity(state.omega, psi0=psi)
                this_u.append(u)
                this_cut.append(model.cutoff_value(u, state.omega))
                divres = weighted_div_residual(u, bath)
            else:
                divres = weighted_div_residual(prev_u[s + 1], bath)
            this_omega.append(state.omega)
            state = SimState((s + 1) * dt, state.omega, prev_u[s + 1], psi, prev_cut[s + 1])
            check_stopping(monitor, state, model)
            row = diagnostics_row(state, model, monitor)
            rows.append(DiagnosticsRow(row.t, row.l2b, row.linf, row.hk, divres,
                                       row.cutoff, row.stopped))
        if prev_omega is not None:
            gaps.append(max(weighted_lp_norm(a - b, 2, bath)
                            for a, b in zip(prev_omega, this_omega)))
        sup_hk = max(r.hk for r in rows)
        levels.append(CascadeLevel(n, nu, rows, sup_hk, this_omega if keep_fields else []))
        prev_omega = this_omega
        if need_u:
            prev_u, prev_cut = this_u, this_cut
        log.debug("cascade level %d done (sup hk %.4g)", n, sup_hk)
    return CascadeResult(levels, gaps)
