"""Dense-matrix reference computations for small grids.

Everything here is built from explicit DFT matrices rather than the FFT
routines in :mod:`lakesim.grid`, so it can serve as an independent check.
Intended for ``n <= 32``.
"""
from __future__ import annotations

import numpy as np

from .weighted import multi_indices

MAX_DENSE_N = 32


def _check_size(n):
    if n > MAX_DENSE_N:
        raise ValueError(f"dense oracle is limited to n <= {MAX_DENSE_N}, got n = {n}")


def fourier_diff_matrix(n, order=1):
    """Real ``n x n`` matrix of the 1D spectral derivative of the given order.

    Odd orders drop the Nyquist mode, matching the FFT operators.
    """
    j = np.arange(n)
    k = np.fft.fftfreq(n, d=1.0 / n)
    F = np.exp(-2j * np.pi * np.outer(k, j) / n)  # forward DFT, rows = modes
    sym = (2j * np.pi * k) ** order
    if order % 2:
        sym[np.abs(k) == n // 2] = 0.0
    D = (F.conj().T * sym) @ F / n
    return D.real


def derivative_matrices(n):
    """``(D1, D2)`` acting on row-major raveled fields, ``x1`` along axis 0."""
    _check_size(n)
    D = fourier_diff_matrix(n, 1)
    eye = np.eye(n)
    return np.kron(D, eye), np.kron(eye, D)


def dense_sobolev_norm(f, k, bath):
    n = bath.grid.n
    _check_size(n)
    w = bath.b.ravel()
    fv = np.asarray(f, dtype=float).ravel()
    eye = np.eye(n)
    total = 0.0
    for a1, a2 in multi_indices(k):
        Dk = np.kron(fourier_diff_matrix(n, a1) if a1 else eye,
                     fourier_diff_matrix(n, a2) if a2 else eye)
        d = Dk @ fv
        total += np.mean(d * d * w)
    return float(np.sqrt(total))


def dense_lie_derivative(xi, f, bath):
    """Literal ``xi . grad f`` with dense derivative matrices."""
    n = bath.grid.n
    D1, D2 = derivative_matrices(n)
    fv = np.asarray(f, dtype=float).ravel()
    out = xi[0].ravel() * (D1 @ fv) + xi[1].ravel() * (D2 @ fv)
    return out.reshape(n, n)


def dense_ito_correction(fields, omega, bath):
    out = np.zeros_like(omega, dtype=float)
    for xi in fields:
        out += dense_lie_derivative(xi, dense_lie_derivative(xi, omega, bath), bath)
    return 0.5 * out


def dense_elliptic_matrix(bath):
    """Explicit ``n^2 x n^2`` matrix of ``psi -> b^-1 curl(M(b^-1 perp_grad psi))``."""
    n = bath.grid.n
    D1, D2 = derivative_matrices(n)
    b = bath.b.ravel()
    B, Binv = np.diag(b), np.diag(1.0 / b)
    gb1, gb2 = D1 @ b, D2 @ b
    # u = b^-1 (D2 psi, -D1 psi)
    U1, U2 = Binv @ D2, -Binv @ D1
    V1, V2 = U1, U2
    if bath.delta:
        div_u = D1 @ U1 + D2 @ U2
        u_gb = np.diag(gb1) @ U1 + np.diag(gb2) @ U2
        scalar = -np.diag(b**3) @ div_u / 3.0 - 0.5 * np.diag(b**2) @ u_gb
        coeff = 0.5 * np.diag(b**2) @ div_u + B @ u_gb
        d2 = bath.delta**2
        V1 = U1 + d2 * Binv @ (D1 @ scalar + np.diag(gb1) @ coeff)
        V2 = U2 + d2 * Binv @ (D2 @ scalar + np.diag(gb2) @ coeff)
    return Binv @ (D1 @ V2 - D2 @ V1)


def assemble_by_columns(op):
    """Matrix of ``op.apply`` built by applying it to every grid basis function."""
    n = op.grid.n
    _check_size(n)
    N = n * n
    A = np.empty((N, N))
    e = np.zeros(N)
    for c in range(N):
        e[c] = 1.0
        A[:, c] = op.apply(e.reshape(n, n)).ravel()
        e[c] = 0.0
    return A


def dense_oracle_solve(op, omega):
    """Dense reference for the stream solve; returns ``(psi, u, A)``.

    ``A`` is assembled column by column from ``op.apply``; the weighted
    system ``diag(b) A psi = b omega`` is solved by SVD least squares and the
    result shifted to zero weighted mean.
    """
    n = op.grid.n
    _check_size(n)
    A = assemble_by_columns(op)
    b = op.bath.b.ravel()
    S = b[:, None] * A
    rhs = b * np.asarray(omega, dtype=float).ravel()
    psi, *_ = np.linalg.lstsq(S, rhs, rcond=1e-11)
    psi = psi.reshape(n, n)
    psi = psi - np.sum(psi * op.bath.b) / np.sum(op.bath.b)
    D1, D2 = derivative_matrices(n)
    pv = psi.ravel()
    u = np.stack([(D2 @ pv) / b, -(D1 @ pv) / b]).reshape(2, n, n)
    return psi, u, A
