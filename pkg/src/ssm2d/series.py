"""Truncated Fourier-Taylor series: polynomial in a radius, trigonometric
in an angle.

A series of order ``N`` stores coefficient vectors ``w[n][k]`` for
``0 <= n <= N`` and ``-n <= k <= n`` so that ::

    W(r, theta) = sum_n  r**n  sum_k  w[n][k] * exp(i*k*theta)

Coefficients are Taylor-normalized: ``w[n][k]`` is the n-th derivative
divided by ``n!``, which keeps magnitudes tame at high order and makes
evaluation a plain power series.  Entries are complex numbers in numeric
mode or :class:`~ssm2d.jets.EpsPoly` jets in jet mode.

Three structural invariants are maintained by every constructor in this
package and asserted in the test-suite:

* reality:  ``w[n][-k] == conj(w[n][k])``
* support:  ``w[n][k] == 0`` for ``|k| > n`` (never even stored)
* parity:   ``w[n][k] == 0`` when ``k`` and ``n`` differ mod 2

Scalar component series are handled as plain "tables": a list indexed by
``n`` of length ``2n+1`` arrays over ``k``.  Products of tables convolve
in both indices and truncate at the requested order; because every stored
series has no constant term, truncated products of them are exact through
the truncation order.
"""

from __future__ import annotations

import numpy as np

from .jets import EpsPoly, JetMode, NumericMode, abs_s, conj_s


def _entry_array(n, mode, nu=None):
    """Zero coefficient array for order n: shape (2n+1,) or (2n+1, 2nu)."""
    shape = (2 * n + 1,) if nu is None else (2 * n + 1, 2 * nu)
    if mode.kind == "jet":
        a = np.empty(shape, dtype=object)
        it = np.nditer(np.zeros(shape), flags=["multi_index"])
        for _ in it:
            a[it.multi_index] = mode.zero()
        return a
    return np.zeros(shape, dtype=complex)


def table_zeros(order, mode):
    """Scalar table with all coefficients zero."""
    return [_entry_array(n, mode) for n in range(order + 1)]


def table_mul(a, b, order, mode):
    """Truncated product of two scalar tables."""
    out = table_zeros(order, mode)
    na, nb = len(a) - 1, len(b) - 1
    for n1 in range(min(na, order) + 1):
        arow = a[n1]
        if _row_is_zero(arow):
            continue
        for n2 in range(min(nb, order - n1) + 1):
            brow = b[n2]
            if _row_is_zero(brow):
                continue
            n3 = n1 + n2
            orow = out[n3]
            for i1 in range(2 * n1 + 1):
                x = arow[i1]
                if _is_zero_scalar(x):
                    continue
                k1 = i1 - n1
                base = k1 - n2 + n3  # index of k1 + (-n2) in the output row
                for i2 in range(2 * n2 + 1):
                    y = brow[i2]
                    if _is_zero_scalar(y):
                        continue
                    orow[base + i2] = orow[base + i2] + x * y
    return out


def _is_zero_scalar(x):
    if isinstance(x, EpsPoly):
        return not np.any(x.coeffs)
    return x == 0


def _row_is_zero(row):
    return all(_is_zero_scalar(x) for x in row.flat)


def table_scale(a, s):
    out = []
    for row in a:
        if row.dtype == object:
            new = np.empty_like(row)
            for idx in np.ndindex(row.shape):
                new[idx] = row[idx] * s
            out.append(new)
        else:
            out.append(row * s)
    return out


def table_add(a, b):
    out = []
    for n in range(max(len(a), len(b))):
        if n < len(a) and n < len(b):
            out.append(a[n] + b[n])
        elif n < len(a):
            out.append(a[n].copy())
        else:
            out.append(b[n].copy())
    return out


class FourierTaylor:
    """Vector-valued truncated Fourier-Taylor series."""

    def __init__(self, nu, order, mode, coeffs=None):
        self.nu = int(nu)
        self.order = int(order)
        self.mode = mode
        if coeffs is None:
            coeffs = [_entry_array(n, mode, self.nu) for n in range(order + 1)]
        self.coeffs = coeffs

    @property
    def dim(self):
        return 2 * self.nu

    # -- element access -----------------------------------------------------

    def get(self, n, k):
        """Coefficient vector w[n][k]; zero vector outside the support."""
        if n > self.order or abs(k) > n:
            return _entry_array(0, self.mode, self.nu)[0]
        return self.coeffs[n][k + n]

    def set(self, n, k, vec):
        self.coeffs[n][k + n] = np.asarray(vec, dtype=self.coeffs[n].dtype) \
            if self.coeffs[n].dtype != object else _as_object_vec(vec)

    def copy(self):
        return FourierTaylor(self.nu, self.order, self.mode,
                             [row.copy() for row in self.coeffs])

    def component(self, i):
        """Scalar table for state component ``i``."""
        return [row[:, i].copy() for row in self.coeffs]

    @classmethod
    def from_components(cls, tables, nu, order, mode):
        out = cls(nu, order, mode)
        for i, tab in enumerate(tables):
            for n in range(min(len(tab), order + 1)):
                out.coeffs[n][:, i] = tab[n]
        return out

    # -- calculus -------------------------------------------------------------

    def d_theta(self):
        """Series of the angular derivative (multiply mode k by i*k)."""
        out = self.copy()
        for n in range(self.order + 1):
            for idx in range(2 * n + 1):
                k = idx - n
                out.coeffs[n][idx] = self.coeffs[n][idx] * (1j * k)
        return out

    # -- invariant checks ----------------------------------------------------

    def reality_defect(self):
        """Max magnitude of w[n][-k] - conj(w[n][k]) over the support."""
        worst = 0.0
        for n in range(self.order + 1):
            for k in range(0, n + 1):
                a = self.coeffs[n][k + n]
                b = self.coeffs[n][-k + n]
                for i in range(self.dim):
                    worst = max(worst, abs_s(b[i] - conj_s(a[i])))
        return worst

    def parity_defect(self):
        """Max magnitude over entries that parity says must vanish."""
        worst = 0.0
        for n in range(self.order + 1):
            for idx in range(2 * n + 1):
                k = idx - n
                if (k - n) % 2 != 0:
                    for i in range(self.dim):
                        worst = max(worst, abs_s(self.coeffs[n][idx][i]))
        return worst

    # -- evaluation -----------------------------------------------------------

    def at_eps(self, eps):
        """Collapse a jet-mode series to numeric mode at a given eps."""
        if self.mode.kind != "jet":
            raise ValueError("at_eps only applies to jet-mode series")
        out = FourierTaylor(self.nu, self.order, NumericMode(eps))
        for n in range(self.order + 1):
            row = self.coeffs[n]
            orow = out.coeffs[n]
            for idx in range(2 * n + 1):
                for i in range(self.dim):
                    orow[idx, i] = row[idx, i](eps)
        return out

    def numeric_coeff_array(self, eps=None):
        """List of (2n+1, 2nu) complex arrays, jets evaluated at ``eps``."""
        if self.mode.kind == "numeric":
            return [row.astype(complex) for row in self.coeffs]
        if eps is None:
            raise ValueError("jet-mode series needs an eps to evaluate")
        return self.at_eps(eps).coeffs

    def evaluate(self, r, theta, eps=None):
        """Value of the series at one point; returns a complex vector."""
        rows = self.numeric_coeff_array(eps)
        r = float(r)
        out = np.zeros(self.dim, dtype=complex)
        rn = 1.0
        for n in range(self.order + 1):
            ks = np.arange(-n, n + 1)
            phases = np.exp(1j * ks * theta)
            out += rn * (phases @ rows[n])
            rn *= r
        return out

    def evaluate_many(self, r_arr, theta_arr, eps=None):
        """Vectorized evaluation; returns a (npts, 2nu) complex array."""
        rows = self.numeric_coeff_array(eps)
        r_arr = np.asarray(r_arr, dtype=float).ravel()
        theta_arr = np.asarray(theta_arr, dtype=float).ravel()
        out = np.zeros((r_arr.size, self.dim), dtype=complex)
        rn = np.ones_like(r_arr)
        for n in range(self.order + 1):
            ks = np.arange(-n, n + 1)
            phases = np.exp(1j * np.outer(theta_arr, ks))
            out += rn[:, None] * (phases @ rows[n])
            rn = rn * r_arr
        return out


def _as_object_vec(vec):
    a = np.empty(len(vec), dtype=object)
    for i, v in enumerate(vec):
        a[i] = v
    return a


def scalar_table_evaluate(table, r_arr, theta_arr):
    """Vectorized evaluation of a numeric scalar table."""
    r_arr = np.asarray(r_arr, dtype=float).ravel()
    theta_arr = np.asarray(theta_arr, dtype=float).ravel()
    out = np.zeros(r_arr.size, dtype=complex)
    rn = np.ones_like(r_arr)
    for n, row in enumerate(table):
        ks = np.arange(-n, n + 1)
        phases = np.exp(1j * np.outer(theta_arr, ks))
        out += rn * (phases @ row.astype(complex))
        rn = rn * r_arr
    return out
