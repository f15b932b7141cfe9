"""Pseudo-spectral simulator for the stochastic lake vorticity equation with transport noise."""
from .grid import Grid
from .weighted import Bathymetry
from .stream import EllipticOperator
from .noise import BrownianPath, NoiseBasis, build_noise_basis
from .config import RunConfig, parse_config

__version__ = "0.1.0"
