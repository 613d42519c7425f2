"""Truncated polynomial arithmetic in the damping parameter.

An :class:`EpsPoly` stores a quantity together with its first few
derivatives with respect to the damping parameter ``eps`` at ``eps = 0``,
as coefficients of the truncated expansion ::

    p(eps) = c[0] + c[1]*eps + ... + c[d]*eps**d

All arithmetic truncates at the stored degree and is exact for every
retained coefficient.  When two jets of different degree are combined the
result carries the shorter degree, since higher coefficients would not be
trustworthy.

``divide_by_eps`` turns a quantity that vanishes at the conservative
limit into its slope: it shifts the coefficients down one degree and is
only legal when the constant coefficient is numerically zero.  A nonzero
constant term signals a structural inconsistency upstream, not a rounding
problem, so it raises instead of damping the value.

The module also defines the two evaluation modes used by the series
machinery: :class:`JetMode` computes with :class:`EpsPoly` scalars so the
conservative limit and its derivative come out exactly, while
:class:`NumericMode` fixes ``eps`` to a number and computes with plain
complex scalars.
"""

from __future__ import annotations

import numpy as np

from .errors import EpsDivisionError

#: hard tolerance on the constant coefficient in divide_by_eps
TOL_EPS0 = 1e-12


class EpsPoly:
    """Jet of a scalar in the damping parameter, truncated at ``degree``."""

    __slots__ = ("coeffs",)

    # keep numpy from trying to broadcast us into its own ufunc loops
    __array_ufunc__ = None

    def __init__(self, coeffs):
        c = np.asarray(coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("EpsPoly needs a non-empty 1-d coefficient list")
        self.coeffs = c

    # -- constructors --------------------------------------------------------

    @classmethod
    def constant(cls, value, degree=1):
        c = np.zeros(degree + 1, dtype=complex)
        c[0] = value
        return cls(c)

    @classmethod
    def zero(cls, degree=1):
        return cls.constant(0.0, degree)

    @classmethod
    def one(cls, degree=1):
        return cls.constant(1.0, degree)

    @classmethod
    def eps_power(cls, m, degree=1):
        """The monomial ``eps**m`` as a jet (zero when m exceeds degree)."""
        c = np.zeros(degree + 1, dtype=complex)
        if 0 <= m <= degree:
            c[m] = 1.0
        return cls(c)

    # -- basic queries ---------------------------------------------------------

    @property
    def degree(self):
        return self.coeffs.size - 1

    def __call__(self, eps):
        """Evaluate the truncated polynomial at a numerical ``eps``."""
        out = self.coeffs[-1]
        for c in self.coeffs[-2::-1]:
            out = out * eps + c
        return complex(out)

    def max_abs(self):
        return float(np.max(np.abs(self.coeffs)))

    def __repr__(self):
        return f"EpsPoly({list(self.coeffs)})"

    # -- ring operations -------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, EpsPoly):
            return other
        if isinstance(other, (int, float, complex, np.integer, np.floating,
                              np.complexfloating)):
            return EpsPoly.constant(complex(other), self.degree)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        d = min(self.degree, o.degree)
        return EpsPoly(self.coeffs[:d + 1] + o.coeffs[:d + 1])

    __radd__ = __add__

    def __neg__(self):
        return EpsPoly(-self.coeffs)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        d = min(self.degree, o.degree)
        return EpsPoly(self.coeffs[:d + 1] - o.coeffs[:d + 1])

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        if isinstance(other, EpsPoly):
            d = min(self.degree, other.degree)
            a, b = self.coeffs, other.coeffs
            out = np.zeros(d + 1, dtype=complex)
            for i in range(min(a.size, d + 1)):
                jmax = min(b.size, d + 1 - i)
                out[i:i + jmax] += a[i] * b[:jmax]
            return EpsPoly(out)
        if isinstance(other, (int, float, complex, np.integer, np.floating,
                              np.complexfloating)):
            return EpsPoly(self.coeffs * complex(other))
        return NotImplemented

    __rmul__ = __mul__

    def reciprocal(self):
        """Jet of ``1/p``; requires a nonzero constant coefficient."""
        a = self.coeffs
        if a[0] == 0:
            raise ZeroDivisionError("reciprocal of a jet with zero constant term")
        out = np.zeros_like(a)
        out[0] = 1.0 / a[0]
        for k in range(1, a.size):
            acc = 0.0j
            for j in range(1, k + 1):
                acc += a[j] * out[k - j]
            out[k] = -acc / a[0]
        return EpsPoly(out)

    def __truediv__(self, other):
        if isinstance(other, EpsPoly):
            return self * other.reciprocal()
        if isinstance(other, (int, float, complex, np.integer, np.floating,
                              np.complexfloating)):
            return EpsPoly(self.coeffs / complex(other))
        return NotImplemented

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o * self.reciprocal()

    # -- conjugation and parts ---------------------------------------------------

    def conjugate(self):
        # eps is a real parameter, so conjugation acts on the coefficients
        return EpsPoly(np.conj(self.coeffs))

    @property
    def real(self):
        return EpsPoly(self.coeffs.real.astype(complex))

    @property
    def imag(self):
        return EpsPoly(self.coeffs.imag.astype(complex))

    # -- the eps-specific operations -----------------------------------------------

    def times_eps(self):
        """Multiply by ``eps``, truncating the top coefficient."""
        c = np.zeros_like(self.coeffs)
        c[1:] = self.coeffs[:-1]
        return EpsPoly(c)

    def divide_by_eps(self, tol=TOL_EPS0):
        """Shift coefficients down one degree.

        Raises :class:`EpsDivisionError` when the constant coefficient
        exceeds ``tol``; that indicates the dividend does not actually
        vanish at the conservative limit.
        """
        if abs(self.coeffs[0]) > tol:
            raise EpsDivisionError(
                f"jet constant term {self.coeffs[0]!r} exceeds {tol:g}; "
                "division by eps is ill posed")
        if self.degree == 0:
            return EpsPoly.zero(0)
        return EpsPoly(self.coeffs[1:])

    def truncated(self, degree):
        """Copy truncated (or zero-padded) to the given degree."""
        c = np.zeros(degree + 1, dtype=complex)
        n = min(degree + 1, self.coeffs.size)
        c[:n] = self.coeffs[:n]
        return EpsPoly(c)


# -- evaluation modes ------------------------------------------------------------


class JetMode:
    """Compute with degree-``degree`` jets in the damping parameter."""

    kind = "jet"

    def __init__(self, degree=1):
        if degree < 0:
            raise ValueError("jet degree must be >= 0")
        self.degree = int(degree)

    def zero(self):
        return EpsPoly.zero(self.degree)

    def from_complex(self, z):
        return EpsPoly.constant(z, self.degree)

    def eps_power(self, m):
        return EpsPoly.eps_power(m, self.degree)

    def times_eps(self, s):
        return s.times_eps()

    def to_value(self, s, eps):
        return s(eps)

    def describe(self):
        return {"kind": "jet", "degree": self.degree}

    def __repr__(self):
        return f"JetMode(degree={self.degree})"


class NumericMode:
    """Compute with plain complex scalars at a fixed ``eps``."""

    kind = "numeric"

    def __init__(self, eps):
        self.eps = float(eps)

    @property
    def degree(self):
        return 0

    def zero(self):
        return 0.0j

    def from_complex(self, z):
        return complex(z)

    def eps_power(self, m):
        return complex(self.eps ** m)

    def times_eps(self, s):
        return s * self.eps

    def to_value(self, s, eps):
        return complex(s)

    def describe(self):
        return {"kind": "numeric", "eps": self.eps}

    def __repr__(self):
        return f"NumericMode(eps={self.eps})"


def conj_s(x):
    """Conjugate of a scalar that may be complex, float or a jet."""
    return x.conjugate()


def real_s(x):
    return x.real


def imag_s(x):
    return x.imag


def abs_s(x):
    """Magnitude proxy: max abs coefficient for jets, abs otherwise."""
    if isinstance(x, EpsPoly):
        return x.max_abs()
    return abs(x)
