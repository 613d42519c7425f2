"""Shared eigen-decomposition of the commuting damping/rotation pair.

The rotation matrix is diagonalized once; because the damping matrix
commutes with it (validated at model load), both are diagonal in the same
basis and the eigenvalues of the full linear part are exactly affine in
the damping parameter.  Right eigenvectors are made deterministic by
rotating each so its largest-magnitude component is real positive, and
conjugate pairs are constructed explicitly so reality is exact.
"""

from __future__ import annotations

import numpy as np

from .errors import (NotDiagonalizableError, RealEigenvalueError)

COND_CAP = 1e8


def eig_pairs(delta, omega):
    """Eigen-structure of ``eps*delta + omega`` for commuting inputs.

    Returns a dict with:

    * ``omegas``  - imaginary parts, ordered (+w1, -w1, +w2, -w2, ...)
      with pairs sorted by ascending frequency magnitude
    * ``alphas``  - damping slopes (real parts per unit eps), same order
    * ``V``       - matrix of right eigenvectors (columns)
    * ``Vinv``    - inverse; rows are the biorthonormal left eigenvectors
    * ``cond``    - condition number of V
    * ``offdiag`` - max off-diagonal magnitude of Vinv @ delta @ V, a
      simultaneous-diagonalizability margin
    """
    omega = np.asarray(omega, dtype=float)
    delta = np.asarray(delta, dtype=float)
    dim = omega.shape[0]
    evals, evecs = np.linalg.eig(omega)

    scale = max(1.0, float(np.max(np.abs(omega))))
    if np.max(np.abs(evals.real)) > 1e-8 * scale:
        raise RealEigenvalueError(
            "rotation matrix has eigenvalues with nonzero real part")
    freqs = evals.imag
    if np.min(np.abs(freqs)) < 1e-10 * scale:
        raise RealEigenvalueError(
            "rotation matrix has a (numerically) real eigenvalue")

    # one representative per conjugate pair: positive frequency
    pos = np.where(freqs > 0)[0]
    if 2 * pos.size != dim:
        raise RealEigenvalueError("eigenvalues do not form conjugate pairs")
    order = pos[np.argsort(freqs[pos])]

    V = np.zeros((dim, dim), dtype=complex)
    omegas = np.zeros(dim)
    for p, idx in enumerate(order):
        v = evecs[:, idx]
        j = int(np.argmax(np.abs(v)))
        phase = v[j] / abs(v[j])
        v = v / phase
        if v[j].real < 0:
            v = -v
        V[:, 2 * p] = v
        V[:, 2 * p + 1] = np.conj(v)
        omegas[2 * p] = freqs[idx]
        omegas[2 * p + 1] = -freqs[idx]

    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > COND_CAP:
        raise NotDiagonalizableError(
            f"eigenvector condition number {cond:.3e} exceeds {COND_CAP:.0e}")
    Vinv = np.linalg.inv(V)

    D = Vinv @ delta.astype(complex) @ V
    diag = np.diag(D)
    off = D - np.diag(diag)
    offdiag = float(np.max(np.abs(off))) if dim > 1 else 0.0
    dscale = max(1.0, float(np.max(np.abs(delta))))
    if offdiag > 1e-8 * dscale * cond:
        raise NotDiagonalizableError(
            "damping matrix is not diagonal in the rotation eigenbasis "
            f"(off-diagonal magnitude {offdiag:.3e})")
    if np.max(np.abs(diag.imag)) > 1e-10 * dscale * cond:
        raise NotDiagonalizableError(
            "damping slopes came out complex; inputs are inconsistent")
    alphas = diag.real.copy()
    # force conjugate pairs to share their slope exactly
    for p in range(dim // 2):
        a = 0.5 * (alphas[2 * p] + alphas[2 * p + 1])
        alphas[2 * p] = alphas[2 * p + 1] = a

    return {
        "omegas": omegas,
        "alphas": alphas,
        "V": V,
        "Vinv": Vinv,
        "cond": cond,
        "offdiag": offdiag,
    }
