"""``key = value`` run configuration with validation and a canonical serializer."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .dynamics import CUTOFF_NORMS, INTEGRATORS
from .stream import PRECONDITIONERS
from .weighted import BATHYMETRY_FAMILIES

INITIAL_CONDITIONS = ("mixed", "single_mode", "taylor_green", "zero")
REQUIRED_KEYS = ("n", "T", "dt", "seed")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    n: int
    T: float
    dt: float
    seed: int
    k: int = 2
    delta: float = 0.1
    bathymetry: str = "single"
    bath_mean: float = 1.0
    bath_amp: float = 0.3
    bath_amp2: float = 0.0
    bath_floor: float = 1e-2
    noise_m: int = 4
    noise_p: float = 2.0
    noise_scale: float = 0.01
    R: float = 1000.0
    C_sobolev: float = 1.0
    cutoff_norm: str = "velocity_k_norm"
    integrator: str = "strat_heun"
    nu: float = 0.0
    n_max: int = 9
    initial: str = "mixed"
    paths: int = 32
    epsilon: float = 1e-3
    tol: float = 1e-10
    preconditioner: str = "scaled"
    out: str = ""

    def __post_init__(self):
        validate(self)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


HELP = {
    "n": "grid points per axis (power of two, >= 8)",
    "T": "final time (>= 0, integer multiple of dt)",
    "dt": "time step (> 0)",
    "seed": "Brownian table seed (non-negative 64-bit integer)",
    "k": "Sobolev index (>= 2)",
    "delta": "aspect ratio (>= 0)",
    "bathymetry": f"bathymetry family: {', '.join(BATHYMETRY_FAMILIES)}",
    "bath_mean": "mean depth (> 0)",
    "bath_amp": "first harmonic amplitude",
    "bath_amp2": "second harmonic amplitude (double family)",
    "bath_floor": "minimum admissible depth (> 0)",
    "noise_m": "number of noise fields (>= 0)",
    "noise_p": "noise amplitude decay exponent (> 0)",
    "noise_scale": "noise amplitude scale (>= 0)",
    "R": "truncation level (> 0)",
    "C_sobolev": "Sobolev constant in the stopping threshold (> 0)",
    "cutoff_norm": f"cutoff argument: {', '.join(CUTOFF_NORMS)}",
    "integrator": f"time integrator: {', '.join(INTEGRATORS)}",
    "nu": "viscosity for single runs (>= 0)",
    "n_max": "cascade levels (>= 1)",
    "initial": f"initial vorticity: {', '.join(INITIAL_CONDITIONS)}",
    "paths": "Monte Carlo paths (>= 1)",
    "epsilon": "initial-condition perturbation size (>= 0)",
    "tol": "CG relative residual tolerance, in (0, 1)",
    "preconditioner": f"CG preconditioner: {', '.join(PRECONDITIONERS)}",
    "out": "output directory (empty: stdout)",
}


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


def _check(cond, key, message):
    if not cond:
        raise ConfigError(key, message)


def validate(cfg):
    _check(_is_pow2(cfg.n) and cfg.n >= 8, "n", f"must be a power of two >= 8, got {cfg.n}")
    _check(cfg.T >= 0, "T", f"must be >= 0, got {cfg.T}")
    _check(cfg.dt > 0, "dt", f"must be > 0, got {cfg.dt}")
    steps = cfg.T / cfg.dt
    _check(abs(steps - round(steps)) <= 1e-9 * max(steps, 1.0), "T",
           f"{cfg.T} is not an integer multiple of dt = {cfg.dt}")
    _check(0 <= cfg.seed < 2**64, "seed", f"must be a non-negative 64-bit integer, got {cfg.seed}")
    _check(cfg.k >= 2, "k", f"must be >= 2, got {cfg.k}")
    _check(cfg.delta >= 0, "delta", f"must be >= 0, got {cfg.delta}")
    _check(cfg.bathymetry in BATHYMETRY_FAMILIES, "bathymetry",
           f"must be one of {BATHYMETRY_FAMILIES}, got {cfg.bathymetry!r}")
    _check(cfg.bath_mean > 0, "bath_mean", f"must be > 0, got {cfg.bath_mean}")
    _check(cfg.bath_floor > 0, "bath_floor", f"must be > 0, got {cfg.bath_floor}")
    low = cfg.bath_mean * (1 - abs(cfg.bath_amp) - abs(cfg.bath_amp2))
    _check(low >= cfg.bath_floor, "bath_amp",
           f"depth can fall to {low:.3g}, below bath_floor = {cfg.bath_floor}")
    _check(cfg.noise_m >= 0, "noise_m", f"must be >= 0, got {cfg.noise_m}")
    _check(cfg.noise_p > 0, "noise_p", f"must be > 0, got {cfg.noise_p}")
    _check(cfg.noise_scale >= 0, "noise_scale", f"must be >= 0, got {cfg.noise_scale}")
    _check(cfg.R > 0, "R", f"must be > 0, got {cfg.R}")
    _check(cfg.C_sobolev > 0, "C_sobolev", f"must be > 0, got {cfg.C_sobolev}")
    _check(cfg.cutoff_norm in CUTOFF_NORMS, "cutoff_norm",
           f"must be one of {CUTOFF_NORMS}, got {cfg.cutoff_norm!r}")
    _check(cfg.integrator in INTEGRATORS, "integrator",
           f"must be one of {INTEGRATORS}, got {cfg.integrator!r}")
    _check(cfg.nu >= 0, "nu", f"must be >= 0, got {cfg.nu}")
    _check(cfg.n_max >= 1, "n_max", f"must be >= 1, got {cfg.n_max}")
    _check(cfg.initial in INITIAL_CONDITIONS, "initial",
           f"must be one of {INITIAL_CONDITIONS}, got {cfg.initial!r}")
    _check(cfg.paths >= 1, "paths", f"must be >= 1, got {cfg.paths}")
    _check(cfg.epsilon >= 0, "epsilon", f"must be >= 0, got {cfg.epsilon}")
    _check(0 < cfg.tol < 1, "tol", f"must lie in (0, 1), got {cfg.tol}")
    _check(cfg.preconditioner in PRECONDITIONERS, "preconditioner",
           f"must be one of {PRECONDITIONERS}, got {cfg.preconditioner!r}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw, 0) if raw.lower().startswith("0x") else int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text):
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated :class:`RunConfig`."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(key, "unknown configuration key")
        if key in values:
            raise ConfigError(key, "given more than once")
        values[key] = _convert(key, raw)
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(key, "required key is missing")
    return RunConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize(cfg):
    """Canonical text form; ``parse_config(serialize(cfg)) == cfg``."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def help_text():
    defaults = {f.name: f.default for f in fields(RunConfig)}
    out = []
    for name, text in HELP.items():
        d = defaults[name]
        suffix = " (required)" if name in REQUIRED_KEYS else f" (default {d!r})"
        out.append(f"  {name:15s} {text}{suffix}")
    return "\n".join(out)
