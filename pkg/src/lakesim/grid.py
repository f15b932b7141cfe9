"""Uniform periodic grid on the unit torus and its spectral operators.

Fields are plain numpy arrays: a scalar field has shape ``(n, n)`` with
``f[i, j]`` the value at ``(i/n, j/n)``; a vector field has shape
``(2, n, n)``.  Mode ``k`` carries the angular wavenumber ``2*pi*k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """An ``n x n`` grid on the torus of period 1 (``n`` a power of two, ``n >= 8``)."""

    n: int
    length: float = field(default=1.0, repr=False)

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"grid size n must be a power of two >= 8, got {n!r}")
        if self.length != 1.0:
            raise ValueError("only the unit torus (length 1.0) is supported")

    # -- coordinates -------------------------------------------------------
    @cached_property
    def coords(self):
        """Tuple ``(x1, x2)`` of meshgrid coordinate arrays."""
        x = np.arange(self.n) / self.n
        return tuple(np.meshgrid(x, x, indexing="ij"))

    @property
    def shape(self):
        return (self.n, self.n)

    # -- integer mode indices on the rfft2 layout --------------------------
    @cached_property
    def _modes(self):
        n = self.n
        k1 = np.fft.fftfreq(n, d=1.0 / n)[:, None]
        k2 = np.arange(n // 2 + 1, dtype=float)[None, :]
        # rfft keeps k2 = +n/2; that column is the Nyquist mode of axis 1
        return k1, k2

    @cached_property
    def _first_derivative_symbols(self):
        n = self.n
        k1, k2 = self._modes
        d1 = 1j * TWO_PI * np.where(np.abs(k1) == n // 2, 0.0, k1)
        d2 = 1j * TWO_PI * np.where(k2 == n // 2, 0.0, k2)
        return np.broadcast_to(d1, (n, n // 2 + 1)), np.broadcast_to(d2, (n, n // 2 + 1))

    @cached_property
    def laplacian_symbol(self):
        k1, k2 = self._modes
        return -(TWO_PI**2) * (k1**2 + k2**2)

    @cached_property
    def _dealias_mask(self):
        k1, k2 = self._modes
        return np.maximum(np.abs(k1), np.abs(k2)) <= self.n / 3.0

    @cached_property
    def wavenumber_magnitude(self):
        """|k| (integer-mode units) on the rfft2 layout."""
        k1, k2 = self._modes
        return np.sqrt(k1**2 + k2**2)

    # -- checks ------------------------------------------------------------
    def check_scalar(self, f, name="field"):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"{name} has shape {f.shape}, expected {self.shape}")
        return f

    def check_vector(self, v, name="vector field"):
        v = np.asarray(v, dtype=float)
        if v.shape != (2,) + self.shape:
            raise ValueError(f"{name} has shape {v.shape}, expected {(2,) + self.shape}")
        return v

    # -- transforms --------------------------------------------------------
    def forward(self, f):
        """Full complex spectrum, normalised so a constant ``c`` maps to ``c`` at mode (0, 0)."""
        f = self.check_scalar(f)
        if not np.all(np.isfinite(f)):
            raise ValueError("cannot transform a field with non-finite values")
        return sfft.fft2(f) / self.n**2

    def inverse(self, spectrum):
        spectrum = np.asarray(spectrum)
        if spectrum.shape != self.shape:
            raise ValueError(f"spectrum has shape {spectrum.shape}, expected {self.shape}")
        return sfft.ifft2(spectrum * self.n**2).real

    def rfft(self, f):
        return sfft.rfft2(f)

    def irfft(self, fh):
        return sfft.irfft2(fh, s=self.shape)

    # rfft/irfft act on the trailing two axes, so stacked fields transform in one call

    # -- differential operators --------------------------------------------
    def derivative(self, f, alpha):
        """Spectral derivative ``D^alpha f`` for a multi-index ``alpha = (a1, a2)``.

        Odd powers of a first-derivative symbol vanish on the Nyquist mode so
        derivatives of real fields stay real.
        """
        a1, a2 = (int(a) for a in alpha)
        if a1 < 0 or a2 < 0:
            raise ValueError(f"multi-index must be non-negative, got {alpha!r}")
        if a1 == a2 == 0:
            return np.array(f, dtype=float)
        return self.irfft(self.rfft(f) * self.derivative_symbol((a1, a2)))

    def derivative_symbol(self, alpha):
        a1, a2 = alpha
        k1, k2 = self._modes
        n = self.n
        s1 = (1j * TWO_PI * k1) ** a1
        s2 = (1j * TWO_PI * k2) ** a2
        if a1 % 2:
            s1 = np.where(np.abs(k1) == n // 2, 0.0, s1)
        if a2 % 2:
            s2 = np.where(k2 == n // 2, 0.0, s2)
        return s1 * s2

    def gradient(self, f):
        fh = self.rfft(f)
        return self.irfft(self._gradient_symbols * fh)

    @cached_property
    def _gradient_symbols(self):
        return np.stack(self._first_derivative_symbols)

    def perp_gradient(self, psi):
        """``(d2 psi, -d1 psi)``."""
        g = self.gradient(psi)
        return np.stack([g[1], -g[0]])

    def divergence(self, v):
        d1, d2 = self._first_derivative_symbols
        vh = self.rfft(v)
        return self.irfft(d1 * vh[0] + d2 * vh[1])

    def curl(self, v):
        """``d1 v2 - d2 v1``."""
        d1, d2 = self._first_derivative_symbols
        vh = self.rfft(v)
        return self.irfft(d1 * vh[1] - d2 * vh[0])

    def laplacian(self, f):
        return self.irfft(self.laplacian_symbol * self.rfft(f))

    def heat_semigroup(self, f, nu, t):
        """Exact ``exp(nu * t * Laplacian) f``."""
        if nu * t < 0:
            raise ValueError(f"heat semigroup needs nu*t >= 0, got nu={nu}, t={t}")
        if nu * t == 0:
            return np.array(f, dtype=float)
        return self.irfft(np.exp(nu * t * self.laplacian_symbol) * self.rfft(f))

    def dealias(self, f):
        """Zero every mode with ``max(|k1|, |k2|) > n/3`` (2/3 rule)."""
        return self.irfft(self._dealias_mask * self.rfft(f))

    def dealiased_product(self, f, g):
        return self.dealias(self.dealias(f) * self.dealias(g))

    def mean(self, f):
        return float(np.mean(f))

    def random_smooth(self, rng, kmax=4, decay=1.0, zero_mean=False):
        """Random real trigonometric polynomial with modes ``|k_i| <= kmax``."""
        n = self.n
        fh = np.zeros((n, n // 2 + 1), dtype=complex)
        ks = range(-kmax, kmax + 1)
        for a in ks:
            for c in range(0, kmax + 1):
                amp = (1.0 + a * a + c * c) ** (-decay / 2)
                fh[a % n, c] = amp * (rng.standard_normal() + 1j * rng.standard_normal())
        if zero_mean:
            fh[0, 0] = 0.0
        # irfft symmetrises the k2 = 0 column implicitly
        f = self.irfft(fh * n * n / 4)
        return f
