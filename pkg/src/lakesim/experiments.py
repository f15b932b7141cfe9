"""Run orchestration: model setup, the invariant suite and the numerical experiments."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Model, TruncationConfig, run_path, run_viscous_cascade
from .grid import TWO_PI, Grid
from .noise import (
    BrownianPath,
    NoiseBasis,
    adjointness_defect,
    build_noise_basis,
    dissipation_defect,
    validate_basis,
)
from .oracles import dense_oracle_solve
from .stream import (
    EllipticOperator,
    coercivity_constant,
    regularity_probe,
    sobolev_constant_estimate,
)
from .weighted import (
    Bathymetry,
    apply_M,
    weighted_div_residual,
    weighted_inner,
    weighted_lp_norm,
    weighted_sobolev_norm,
)

log = logging.getLogger(__name__)

OPERATOR_TOL = 1e-9
DIV_TOL_BUILD = 1e-9
DIV_TOL_TRAJECTORY = 1e-8
ORACLE_TOL = 1e-8
TRANSPORT_TOL = 1e-3
VISCOUS_TOL = 1e-6
REDUCTION_TOL = 1e-10
CASCADE_SLACK = 1.1
CONTINUITY_ALLOWANCE = 0.05
MIN_CONTINUITY_PATHS = 16


def thread_limit():
    """Worker count: ``LAKESIM_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("LAKESIM_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"LAKESIM_THREADS must be an integer, got {raw!r}") from None
        return max(1, value)
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Ordered map over independent jobs; serial when only one worker is allowed."""
    items = list(items)
    workers = min(thread_limit(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- setup ----------------------------------------------------------------------------


@dataclass
class Setup:
    grid: Grid
    bath: Bathymetry
    op: EllipticOperator
    basis: NoiseBasis
    model: Model


def build_setup(cfg, basis=None, n=None):
    grid = Grid(cfg.n if n is None else n)
    bath = Bathymetry.from_family(grid, cfg.bathymetry, mean=cfg.bath_mean, amp=cfg.bath_amp,
                                  amp2=cfg.bath_amp2, delta=cfg.delta, floor=cfg.bath_floor)
    op = EllipticOperator(bath, preconditioner=cfg.preconditioner)
    if basis is None:
        basis = build_noise_basis(bath, cfg.noise_m, cfg.noise_p, cfg.noise_scale)
    trunc = TruncationConfig(cfg.R, cfg.cutoff_norm, cfg.k)
    return Setup(grid, bath, op, basis, Model(op, basis, trunc, tol=cfg.tol))


def initial_vorticity(cfg, setup):
    """Built-in initial vorticity, shifted to zero weighted mean."""
    x1, x2 = setup.grid.coords
    if cfg.initial == "mixed":
        w = (np.sin(TWO_PI * x1) + 0.5 * np.cos(TWO_PI * x2)
             + 0.3 * np.sin(TWO_PI * (x1 + x2)) + 0.2 * np.cos(TWO_PI * (2 * x1 - x2)))
    elif cfg.initial == "single_mode":
        w = np.sin(TWO_PI * x1)
    elif cfg.initial == "taylor_green":
        w = np.sin(TWO_PI * x1) + np.sin(TWO_PI * x2)
    else:
        w = np.zeros(setup.grid.shape)
    return setup.op.remove_weighted_mean(w)


def brownian_path(cfg, m, seed=None):
    return BrownianPath.generate(m, cfg.dt, cfg.T, cfg.seed if seed is None else seed)


def is_deterministic(cfg, basis=None):
    m = cfg.noise_m if basis is None else basis.m
    return m == 0 or (basis is None and cfg.noise_scale == 0)


def run_single(cfg, setup=None, path=None, omega0=None, keep_fields=False):
    setup = build_setup(cfg) if setup is None else setup
    path = brownian_path(cfg, setup.basis.m) if path is None else path
    omega0 = initial_vorticity(cfg, setup) if omega0 is None else omega0
    return run_path(omega0, setup.model, path, cfg.dt, cfg.T, nu=cfg.nu,
                    integrator=cfg.integrator, C_sobolev=cfg.C_sobolev, keep_fields=keep_fields)


# -- invariant suite ------------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": self.value, "tol": self.tol, "passed": self.passed}


@dataclass
class InvariantReport:
    checks: list
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c.name for c in self.checks if not c.passed]

    def as_dict(self):
        return {"passed": self.passed, "failures": self.failures,
                "checks": [c.as_dict() for c in self.checks], "info": self.info}


def _leq(name, value, tol):
    value = float(value)
    return Check(name, value, tol, bool(np.isfinite(value) and value <= tol))


def operator_identity_defects(basis, bath, num_fields=20, rng=None):
    """Worst scaled adjointness and dissipation defects over the basis and random fields."""
    rng = np.random.default_rng(0) if rng is None else rng
    grid = bath.grid
    adj = diss = 0.0
    for _ in range(num_fields):
        f = grid.random_smooth(rng, kmax=4)
        g = grid.random_smooth(rng, kmax=4)
        h1f = weighted_sobolev_norm(f, 1, bath)
        h1g = weighted_sobolev_norm(g, 1, bath)
        h2f = weighted_sobolev_norm(f, 2, bath)
        for xi in basis.fields:
            adj = max(adj, abs(adjointness_defect(xi, f, g, bath)) / (h1f * h1g))
            diss = max(diss, abs(dissipation_defect(xi, f, bath)) / h2f**2)
    return adj, diss


def _div_free_pair(grid, bath, rng):
    psi = grid.random_smooth(rng, kmax=4)
    phi = grid.random_smooth(rng, kmax=4)
    return grid.perp_gradient(psi) * bath.inv_b, grid.perp_gradient(phi) * bath.inv_b


def M_structure_defects(bath, samples=10, rng=None):
    """Symmetry, positivity and projected-identity residuals of ``M`` on ``div(b u) = 0`` fields."""
    rng = np.random.default_rng(5) if rng is None else rng
    grid = bath.grid
    sym = pos = ident = 0.0
    d2 = bath.delta**2
    for _ in range(samples):
        u, v = _div_free_pair(grid, bath, rng)
        Mu, Mv = apply_M(u, bath), apply_M(v, bath)
        scale = weighted_lp_norm(u, 2, bath) * weighted_lp_norm(v, 2, bath)
        sym = max(sym, abs(weighted_inner(Mu, v, bath) - weighted_inner(u, Mv, bath)) / scale)
        uu = weighted_inner(u, u, bath)
        pos = max(pos, (uu - weighted_inner(Mu, u, bath)) / uu)
        gb = bath.grad_b
        ugb, vgb = (u * gb).sum(axis=0), (v * gb).sum(axis=0)
        projected = weighted_inner(u, v, bath) + d2 / 3.0 * weighted_inner(ugb, vgb, bath)
        ident = max(ident, abs(weighted_inner(Mu, v, bath) - projected) / scale)
    return sym, pos, ident


def oracle_equivalence_error(bath, samples=3, rng=None, tol=1e-10):
    """Worst relative ``L^2_b`` gap between the CG velocity and the dense oracle."""
    rng = np.random.default_rng(3) if rng is None else rng
    op = EllipticOperator(bath)
    worst = 0.0
    for _ in range(samples):
        omega = op.remove_weighted_mean(bath.grid.random_smooth(rng, kmax=4))
        u, psi, _ = op.velocity_from_vorticity(omega, tol=tol)
        psi_d, u_d, _ = dense_oracle_solve(op, omega)
        worst = max(worst, weighted_lp_norm(psi - psi_d, 2, bath) / weighted_lp_norm(psi_d, 2, bath),
                    weighted_lp_norm(u - u_d, 2, bath) / weighted_lp_norm(u_d, 2, bath))
    return worst


def euler_reduction_error(op, rng=None):
    """``K omega`` against the Biot-Savart law ``perp_grad (-Lap)^-1 omega`` for constant ``b``."""
    rng = np.random.default_rng(4) if rng is None else rng
    grid = op.grid
    omega = op.remove_weighted_mean(grid.random_smooth(rng, kmax=4))
    u, _, _ = op.velocity_from_vorticity(omega)
    lap = grid.laplacian_symbol.copy()
    lap[0, 0] = 1.0
    psi = grid.irfft(-grid.rfft(omega) / lap)
    ref = grid.perp_gradient(psi)
    return float(np.abs(u - ref).max() / max(np.abs(ref).max(), 1e-300))


def run_invariant_suite(cfg, basis=None, steps=20):
    """Operator identities, incompressibility, transport formulae and oracle checks for ``cfg``."""
    setup = build_setup(cfg, basis=basis)
    grid, bath, op, model = setup.grid, setup.bath, setup.op, setup.model
    checks, info = [], {}

    breport = validate_basis(setup.basis, bath, k=cfg.k)
    info["basis"] = breport.as_dict()
    checks.append(_leq("basis_divergence", max(breport.div_residuals, default=0.0), DIV_TOL_BUILD))

    adj, diss = operator_identity_defects(setup.basis, bath)
    checks.append(_leq("adjointness", adj, OPERATOR_TOL))
    checks.append(_leq("dissipation_identity", diss, OPERATOR_TOL))

    sym, pos, ident = M_structure_defects(bath)
    checks.append(_leq("M_symmetry", sym, OPERATOR_TOL))
    checks.append(_leq("M_positivity", pos, OPERATOR_TOL))
    checks.append(_leq("M_projected_identity", ident, OPERATOR_TOL))

    omega0 = initial_vorticity(cfg, setup)
    u0, _, rep = op.velocity_from_vorticity(omega0, tol=cfg.tol)
    checks.append(_leq("incompressibility_initial", weighted_div_residual(u0, bath), DIV_TOL_BUILD))
    checks.append(_leq("closure_residual", rep.closure_residual, 10 * cfg.tol))

    n_steps = max(1, min(steps, round(cfg.T / cfg.dt)))
    short = replace(cfg, T=n_steps * cfg.dt)
    path = brownian_path(short, setup.basis.m)
    inviscid = run_path(omega0, model, path, short.dt, short.T, nu=0.0, integrator=cfg.integrator)
    l20 = inviscid.rows[0].l2b
    drift = max(abs(r.l2b - l20) for r in inviscid.rows) / l20 if l20 > 0 else 0.0
    checks.append(_leq("transport_l2_drift", drift, TRANSPORT_TOL))
    checks.append(_leq("incompressibility_trajectory",
                       max(r.divres for r in inviscid.rows), DIV_TOL_TRAJECTORY))
    viscous = run_path(omega0, model, path, short.dt, short.T, nu=1.0, integrator=cfg.integrator)
    growth = max(r.l2b for r in viscous.rows) / l20 - 1.0 if l20 > 0 else 0.0
    checks.append(_leq("viscous_l2_growth", growth, VISCOUS_TOL))

    small = Grid(16)
    small_bath = Bathymetry(small, Bathymetry.from_family(
        small, cfg.bathymetry, cfg.bath_mean, cfg.bath_amp, cfg.bath_amp2, floor=cfg.bath_floor).b,
        delta=cfg.delta, floor=cfg.bath_floor)
    checks.append(_leq("oracle_equivalence", oracle_equivalence_error(small_bath), ORACLE_TOL))

    if bath.is_constant and bath.delta == 0.0:
        u, v = _div_free_pair(grid, bath, np.random.default_rng(6))
        checks.append(_leq("M_identity", float(np.abs(apply_M(u, bath) - u).max()), REDUCTION_TOL))
        checks.append(_leq("euler_reduction", euler_reduction_error(op), REDUCTION_TOL))

    info["coercivity_constant"] = coercivity_constant(op)
    info["regularity_ratio"] = regularity_probe(op, cfg.k)
    info["sobolev_constant_estimate"] = sobolev_constant_estimate(op, cfg.k, num_samples=100)
    return InvariantReport(checks, info)


# -- viscous cascade ------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    levels: list  # (n, nu_n, nu_{n+1}, g_n)
    sup_hk: list
    trend_ok: bool
    worst_ratio: float

    @property
    def gaps(self):
        return [row[3] for row in self.levels]


def cascade_trend(gaps, slack=CASCADE_SLACK):
    """Worst ``g_{n+1} / g_n`` over ``n >= 2`` (``gaps[0]`` is ``g_1``) and whether it stays ``<= slack``."""
    ratios = [gaps[i + 1] / gaps[i] if gaps[i] > 0 else (0.0 if gaps[i + 1] == 0 else np.inf)
              for i in range(1, len(gaps) - 1)]
    worst = max(ratios, default=0.0)
    return worst <= slack, worst


def experiment_viscous_convergence(cfg, setup=None, path=None):
    if cfg.n_max < 3:
        raise ValueError(f"n_max: the convergence study needs at least 3 levels, got {cfg.n_max}")
    setup = build_setup(cfg) if setup is None else setup
    path = brownian_path(cfg, setup.basis.m) if path is None else path
    omega0 = initial_vorticity(cfg, setup)
    result = run_viscous_cascade(omega0, setup.model, path, cfg.dt, cfg.T, cfg.n_max,
                                 integrator=cfg.integrator)
    rows = [(j + 1, 1.0 / (j + 1), 1.0 / (j + 2), g) for j, g in enumerate(result.gaps)]
    ok, worst = cascade_trend(result.gaps)
    return ConvergenceTable(rows, [lv.sup_hk for lv in result.levels], ok, worst)


def _cascade_sup_hk(job):
    cfg, seed = job
    setup = build_setup(cfg)
    path = brownian_path(cfg, setup.basis.m, seed=seed)
    res = run_viscous_cascade(initial_vorticity(cfg, setup), setup.model, path, cfg.dt, cfg.T,
                              cfg.n_max, integrator=cfg.integrator)
    return [lv.sup_hk for lv in res.levels]


@dataclass
class MomentResult:
    means: list  # per level, mean over paths of sup_t ||omega||^4_{b,k,2}
    ratio: float


def moment_stability(cfg, paths=None):
    paths = cfg.paths if paths is None else paths
    sups = np.array(parallel_map(_cascade_sup_hk, [(cfg, cfg.seed + i) for i in range(paths)]))
    means = (sups**4).mean(axis=0)
    return MomentResult(list(means), float(means.max() / means.min()))


# -- integrator comparisons -------------------------------------------------------------


def observed_order(dts, values):
    """Least-squares slope of ``log(values)`` against ``log(dts)``."""
    return float(np.polyfit(np.log(dts), np.log(values), 1)[0])


def ito_stratonovich_gaps(cfg, dts, setup=None):
    """``sup_t ||omega^EM - omega^Heun||_{b,2}`` for each ``dt``, one shared Brownian path."""
    setup = build_setup(cfg) if setup is None else setup
    fine = min(dts)
    path = BrownianPath.generate(setup.basis.m, fine, cfg.T, cfg.seed)
    omega0 = initial_vorticity(cfg, setup)
    gaps = []
    for dt in dts:
        em = run_path(omega0, setup.model, path, dt, cfg.T, integrator="ito_em", keep_fields=True)
        heun = run_path(omega0, setup.model, path, dt, cfg.T, integrator="strat_heun",
                        keep_fields=True)
        gaps.append(max(weighted_lp_norm(a - b, 2, setup.bath)
                        for a, b in zip(em.omegas, heun.omegas)))
    return gaps


def transport_drifts(cfg, dts, nu=0.0, setup=None):
    """Relative ``L^2_b`` and grid-max drifts of inviscid runs at each ``dt`` on one shared path."""
    setup = build_setup(cfg) if setup is None else setup
    path = BrownianPath.generate(setup.basis.m, min(dts), cfg.T, cfg.seed)
    omega0 = initial_vorticity(cfg, setup)
    out = []
    for dt in dts:
        res = run_path(omega0, setup.model, path, dt, cfg.T, nu=nu, integrator=cfg.integrator)
        l20, li0 = res.rows[0].l2b, res.rows[0].linf
        out.append({"dt": dt,
                    "l2b": max(abs(r.l2b - l20) for r in res.rows) / l20,
                    "linf": max(abs(r.linf - li0) for r in res.rows) / li0,
                    "max_l2b_ratio": max(r.l2b for r in res.rows) / l20,
                    "divres": max(r.divres for r in res.rows),
                    "min_cutoff": min(r.cutoff for r in res.rows)})
    return out


# -- continuity in the initial condition ------------------------------------------------


def perturbation_field(cfg, setup):
    """Smooth zero-weighted-mean direction with ``||phi||_{b,k-1,2} = 1``."""
    rng = np.random.default_rng([cfg.seed, 1])
    phi = setup.op.remove_weighted_mean(setup.grid.random_smooth(rng, kmax=4))
    return phi / weighted_sobolev_norm(phi, cfg.k - 1, setup.bath)


def _continuity_pair(job):
    cfg, seed, epsilon = job
    setup = build_setup(cfg)
    path = brownian_path(cfg, setup.basis.m, seed=seed)
    omega0 = initial_vorticity(cfg, setup)
    a = run_path(omega0, setup.model, path, cfg.dt, cfg.T, integrator=cfg.integrator,
                 keep_fields=True)
    b = run_path(omega0 + epsilon * perturbation_field(cfg, setup), setup.model, path, cfg.dt,
                 cfg.T, integrator=cfg.integrator, keep_fields=True)
    diff = np.array([weighted_sobolev_norm(x - y, cfg.k - 1, setup.bath) ** 2
                     for x, y in zip(a.omegas, b.omegas)])
    hk = np.array([r.hk for r in a.rows])
    return a.times, diff, hk


@dataclass
class ContinuityResult:
    epsilon: float
    paths: int
    C: float
    mean: float  # at the worst time
    stderr: float
    bound: float
    passed: bool
    degenerate: bool = False
    worst_time: float = 0.0
    final_mean: float = float("nan")
    final_stderr: float = float("nan")
    sensitivity: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def _continuity_statistic(times, diffs, hks, d0, C):
    # B_t by the trapezoid rule on the diagnostic grid
    B = np.array([np.concatenate([[0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) * np.diff(times))])
                  for h in hks])
    ratio = np.exp(-C * B) * diffs / d0
    mean = ratio.mean(axis=0)
    se = ratio.std(axis=0, ddof=1) / np.sqrt(len(ratio)) if len(ratio) > 1 else np.zeros_like(mean)
    excess = mean - (1.0 + 2.0 * se + CONTINUITY_ALLOWANCE)
    worst = int(np.argmax(excess))
    return mean, se, worst


def experiment_ic_continuity(cfg, epsilon=None, paths=None, C=None):
    """Monte Carlo check of ``E[exp(-C B_t) ||omega_t - tilde omega_t||^2_{b,k-1,2}] <= ||omega_0 - tilde omega_0||^2``."""
    epsilon = cfg.epsilon if epsilon is None else epsilon
    C = cfg.C_sobolev if C is None else C
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    deterministic = is_deterministic(cfg)
    paths = (1 if deterministic else cfg.paths) if paths is None else paths
    if not deterministic and paths < MIN_CONTINUITY_PATHS:
        raise ValueError(f"paths: need at least {MIN_CONTINUITY_PATHS} paths, got {paths}")
    jobs = [(cfg, cfg.seed + i, epsilon) for i in range(paths)]
    results = parallel_map(_continuity_pair, jobs)
    times = results[0][0]
    diffs = np.array([r[1] for r in results])
    hks = np.array([r[2] for r in results])
    if epsilon == 0.0:
        gap = float(np.sqrt(diffs.max()))
        return ContinuityResult(epsilon, paths, C, float("nan"), float("nan"), float("nan"),
                                passed=gap <= 1e-12, degenerate=True)
    d0 = diffs[0, 0]

    def summary(c):
        mean, se, w = _continuity_statistic(times, diffs, hks, d0, c)
        bound = 1.0 + 2.0 * se[w] + CONTINUITY_ALLOWANCE
        return mean, se, w, bound

    mean, se, w, bound = summary(C)
    sens = {}
    for factor in (0.5, 1.5):
        m, s, wf, bd = summary(factor * C)
        sens[f"C*{factor}"] = {"mean": float(m[wf]), "stderr": float(s[wf]),
                               "passed": bool(m[wf] <= bd)}
    return ContinuityResult(epsilon, paths, C, float(mean[w]), float(se[w]), float(bound),
                            bool(mean[w] <= bound), worst_time=float(times[w]),
                            final_mean=float(mean[-1]), final_stderr=float(se[-1]),
                            sensitivity=sens)
