"""Chebyshev-Lobatto and Fourier collocation utilities.

Radial grids live on [0, gamma] with the Lobatto nodes ordered from
gamma down to 0 (the origin is the last node, where the Dirichlet row
goes).  Angular grids are equispaced with an odd point count so the
spectral differentiation matrix is exact on the resolved band.
"""

from __future__ import annotations

import numpy as np


def cheb_lobatto(m, gamma):
    """Nodes (descending, gamma..0) and differentiation matrix on [0, gamma]."""
    if m < 2:
        raise ValueError("need at least two radial nodes")
    n = m - 1
    j = np.arange(m)
    x = np.cos(np.pi * j / n)               # 1 .. -1
    c = np.hstack([2.0, np.ones(n - 1), 2.0]) * (-1.0) ** j
    X = np.tile(x, (m, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(m))
    D -= np.diag(D.sum(axis=1))
    r = gamma * (x + 1.0) / 2.0
    Dr = D * (2.0 / gamma)
    return r, Dr


def cheb_bary_weights(m):
    """Barycentric weights for the Lobatto nodes."""
    w = (-1.0) ** np.arange(m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def cheb_interp_matrix(r_nodes, r_targets):
    """Barycentric interpolation matrix from Lobatto nodes to targets."""
    r_nodes = np.asarray(r_nodes, dtype=float)
    r_targets = np.asarray(r_targets, dtype=float).ravel()
    w = cheb_bary_weights(r_nodes.size)
    diff = r_targets[:, None] - r_nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff_safe = np.where(exact, 1.0, diff)
    terms = w[None, :] / diff_safe
    P = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if np.any(hit):
        P[hit] = 0.0
        idx = np.argmax(exact[hit], axis=1)
        P[np.where(hit)[0], idx] = 1.0
    return P


def fourier_grid(kmax):
    """Equispaced angular nodes, odd count 2*kmax + 1."""
    n = 2 * kmax + 1
    return np.arange(n) * (2.0 * np.pi / n)


def fourier_modes(kmax):
    return np.arange(-kmax, kmax + 1)


def values_to_coeffs(values, axis=0):
    """Fourier coefficients c_k, k = -K..K, from values on the odd grid."""
    n = values.shape[axis]
    kmax = (n - 1) // 2
    c = np.fft.fft(values, axis=axis) / n
    # fft order: 0, 1, .., K, -K, .., -1  ->  -K..K
    idx = np.concatenate([np.arange(n - kmax, n), np.arange(kmax + 1)])
    return np.take(c, idx, axis=axis)


def coeffs_to_values(coeffs, axis=0):
    """Inverse of :func:`values_to_coeffs`."""
    n = coeffs.shape[axis]
    kmax = (n - 1) // 2
    idx = np.concatenate([np.arange(kmax, n), np.arange(kmax)])
    c = np.take(coeffs, idx, axis=axis) * n
    return np.fft.ifft(c, axis=axis)


def fourier_diff_matrix(kmax):
    """Dense differentiation matrix on the odd equispaced grid."""
    n = 2 * kmax + 1
    eye = np.eye(n)
    ks = fourier_modes(kmax)
    c = values_to_coeffs(eye, axis=0)
    dc = (1j * ks)[:, None] * c
    D = coeffs_to_values(dc, axis=0)
    return D.real


def loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (ys > 0) & (xs > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])
