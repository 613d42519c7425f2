"""Order-by-order solution of the polar invariance equation at the origin.

The manifold is sought as ``W(r, theta)`` with radial dynamics
``rdot = R(r) = eps * Rle(r)`` and angular dynamics ``thetadot = T(r)``,
satisfying ::

    D1 W . R + D2 W . T = A_eps W + N_eps(W)

In Taylor-normalized coefficients (``W_n``, ``c_n`` for Rle, ``d_n`` for
T) the order-p slice of the equation reads ::

    (eps*p*c1 + i*k*d0 - A_eps) w[p][k] + (eps*c_p + i*k*d_{p-1}) w[1][k]
        = G_p[k]

where ``G_p`` collects the nonlinearity slice and the lower-order
cross terms.  The anchors are ``c1 = -1``, ``d0 = 1`` and
``w[1][+-1] = v_ell`` pair with unit growth scale.  Pairing the ``k = 1``
equation with the left mode vector determines ``c_p`` (after a division
by eps that is exact in jet arithmetic because the conservative part of
the pairing vanishes) and ``d_{p-1}``; the remaining components follow by
diagonal solves in the eigenbasis.

At ``k = +-1`` only the aligned eigen-direction is singular.  The growth
and phase conditions set that tangential projection to zero; the
conjugate-direction and normal components are determined by the equation
and are generally nonzero (the conservative Duffing already produces a
third-order first-harmonic term along the conjugate eigenvector).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (EpsDivisionError, NearResonanceError, OrderError,
                     SolvabilityError)
from .jets import (EpsPoly, JetMode, NumericMode, abs_s, conj_s, imag_s,
                   real_s)
from .model import series_compose
from .series import FourierTaylor, _entry_array
from .spectral import make_wstar

DEFAULT_RES_MARGIN = 0.05


@dataclass
class ManifoldExpansion:
    """Computed expansion through ``order``.

    ``Rpoly``/``Tpoly`` hold Taylor-normalized coefficients (coefficient
    of ``r**n``); derivative-scale values are ``rho(n)``/``tau(n)``.
    ``Rpoly`` describes the eps-reduced radial rate, so the physical
    radial dynamics is ``eps * sum(Rpoly[n] r**n)``.
    """
    W: FourierTaylor
    Rpoly: list
    Tpoly: list
    order: int
    split_order: int
    eps_mode: object
    spec: object
    model: object
    d: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def nu(self):
        return self.W.nu

    @property
    def dim(self):
        return self.W.dim

    def rho(self, n):
        return self.Rpoly[n] * math.factorial(n)

    def tau(self, n):
        return self.Tpoly[n] * math.factorial(n)

    def _scalar_value(self, s, eps):
        if isinstance(s, EpsPoly):
            if eps is None:
                raise ValueError("jet-mode expansion needs eps to evaluate")
            return s(eps)
        return complex(s)

    def _check_eps(self, eps):
        if self.eps_mode.kind == "numeric":
            if eps is not None and abs(eps - self.eps_mode.eps) > 1e-15:
                raise ValueError(
                    f"expansion was computed at eps={self.eps_mode.eps}, "
                    f"cannot evaluate at eps={eps}")
            return self.eps_mode.eps
        if eps is None:
            raise ValueError("jet-mode expansion needs eps to evaluate")
        return float(eps)

    def eval_Rle(self, r, eps=None):
        """eps-reduced radial rate Rle(r)."""
        e = self._check_eps(eps)
        out = 0.0
        rn = 1.0
        for c in self.Rpoly:
            out += self._scalar_value(c, e).real * rn
            rn *= r
        return out

    def eval_R(self, r, eps=None):
        """Radial rate R(r) = eps * Rle(r)."""
        e = self._check_eps(eps)
        return e * self.eval_Rle(r, eps)

    def eval_T(self, r, eps=None):
        """Angular frequency T(r)."""
        e = self._check_eps(eps)
        out = 0.0
        rn = 1.0
        for c in self.Tpoly:
            out += self._scalar_value(c, e).real * rn
            rn *= r
        return out

    def numeric_at(self, eps):
        """Numeric-mode view of a jet expansion, jets evaluated at eps."""
        if self.eps_mode.kind == "numeric":
            if abs(eps - self.eps_mode.eps) > 1e-15:
                raise ValueError("numeric expansion is pinned to its eps")
            return self
        mode = NumericMode(eps)
        return ManifoldExpansion(
            W=self.W.at_eps(eps),
            Rpoly=[c(eps) for c in self.Rpoly],
            Tpoly=[c(eps) for c in self.Tpoly],
            order=self.order, split_order=self.split_order, eps_mode=mode,
            spec=self.spec, model=self.model, d=self.d,
            meta=dict(self.meta, jet_evaluated=True))


def _mat_vec(M, vec):
    """Matrix times a vector of generic scalars."""
    n = M.shape[0]
    out = np.empty(n, dtype=object)
    for i in range(n):
        acc = None
        for j in range(n):
            m = M[i, j]
            if m == 0:
                continue
            term = vec[j] * m
            acc = term if acc is None else acc + term
        out[i] = acc if acc is not None else 0.0j
    return out


def _bilinear(u, vec):
    acc = None
    for i in range(len(u)):
        if u[i] == 0:
            continue
        term = vec[i] * u[i]
        acc = term if acc is None else acc + term
    return acc if acc is not None else 0.0j


class _Builder:
    """Holds the in-progress tables during the recursion."""

    def __init__(self, model, spec, order, mode, res_margin):
        self.model = model
        self.spec = spec
        self.order = order
        self.mode = mode
        self.res_margin = res_margin
        self.W = FourierTaylor(model.nu, order, mode)
        z = mode.zero()
        self.c = [z, mode.from_complex(-1.0)] + [z] * (order - 1)
        self.d = [mode.from_complex(1.0)] + [z] * (order - 1)
        self.alphas = spec.alphas
        self.omegas = spec.omegas
        self.V = spec.right_vectors
        self.Vinv = spec.left_vectors
        # anchor: first order is the distinguished eigenvector pair
        v = spec.v_ell
        vbar = np.conj(v)
        for i in range(model.dim):
            self.W.coeffs[1][2, i] = mode.from_complex(v[i])
            self.W.coeffs[1][0, i] = mode.from_complex(vbar[i])

    def forcing_slice(self, p):
        """Order-p forcing G_p: nonlinearity slice minus known cross terms.

        Returns a (2p+1, dim) array over harmonics -p..p.  Parity makes
        the off-parity rows exactly zero.
        """
        mode = self.mode
        comp = series_compose(self.model, self.W, p, mode)
        G = comp.coeffs[p].copy()
        dim = self.model.dim
        # radial cross terms: eps * sum_{m=2}^{p-1} (p+1-m) c_m W_{p+1-m}
        for m in range(2, p):
            cm = self.c[m]
            if _scalar_is_zero(cm):
                continue
            q = p + 1 - m
            row = self.W.coeffs[q]
            for idx in range(2 * q + 1):
                k = idx - q
                for i in range(dim):
                    term = row[idx, i] * cm * float(p + 1 - m)
                    G[k + p, i] = G[k + p, i] - mode.times_eps(term)
        # angular cross terms: sum_{m=1}^{p-2} d_m (i k) W_{p-m}
        for m in range(1, p - 1):
            dm = self.d[m]
            if _scalar_is_zero(dm):
                continue
            q = p - m
            row = self.W.coeffs[q]
            for idx in range(2 * q + 1):
                k = idx - q
                if k == 0:
                    continue
                for i in range(dim):
                    G[k + p, i] = G[k + p, i] - row[idx, i] * dm * (1j * k)
        return G

    def solve_order(self, p):
        mode = self.mode
        spec = self.spec
        G = self.forcing_slice(p)
        vstar = spec.v_ell_star

        s = _bilinear(vstar, G[1 + p])
        sre, sim = real_s(s), imag_s(s)
        if mode.kind == "jet":
            try:
                cp = sre.divide_by_eps()
            except EpsDivisionError as exc:
                raise SolvabilityError(
                    f"order {p}: conservative part of the radial solvability "
                    f"pairing did not vanish ({exc})") from None
            cp = cp.truncated(mode.degree)
        else:
            if mode.eps == 0.0:
                raise SolvabilityError(
                    "numeric mode at eps = 0 cannot divide by eps; "
                    "use the jet path")
            cp = sre / mode.eps
        self.c[p] = cp
        self.d[p - 1] = sim

        kstart = 0 if p % 2 == 0 else 1
        for k in range(kstart, p + 1, 2):
            h = _mat_vec(self.Vinv, G[k + p])
            w_eig = np.empty(self.model.dim, dtype=object)
            for j in range(self.model.dim):
                if k == 1 and j == spec.ell:
                    # growth/phase conditions zero the tangential projection
                    w_eig[j] = mode.zero()
                    continue
                gap = abs(k - self.omegas[j])
                if j not in (spec.ell, spec.ell + 1) and gap < self.res_margin / 2:
                    raise NearResonanceError(
                        f"order {p}, harmonic {k}: divisor distance "
                        f"{gap:.3e} to eigenvalue {j} below margin "
                        f"{self.res_margin / 2:g}")
                if mode.kind == "jet":
                    div = EpsPoly([1j * (k - self.omegas[j]),
                                   -(p + self.alphas[j])]).truncated(mode.degree)
                    w_eig[j] = h[j] * div.reciprocal()
                else:
                    div = 1j * (k - self.omegas[j]) \
                        - (p + self.alphas[j]) * mode.eps
                    w_eig[j] = h[j] / div
            w = _mat_vec(self.V, w_eig)
            if k == 0:
                # conjugation symmetry makes this row real; enforce exactly
                for i in range(self.model.dim):
                    w[i] = real_s(w[i])
                    self.W.coeffs[p][p, i] = w[i]
            else:
                for i in range(self.model.dim):
                    self.W.coeffs[p][k + p, i] = w[i]
                    self.W.coeffs[p][-k + p, i] = conj_s(w[i])


def _scalar_is_zero(s):
    if isinstance(s, EpsPoly):
        return not np.any(s.coeffs)
    return s == 0


def expand(model, spec, order, mode, res_margin=DEFAULT_RES_MARGIN):
    """Solve the invariance equation through ``order``.

    ``mode`` is a :class:`~ssm2d.jets.JetMode` or
    :class:`~ssm2d.jets.NumericMode`.  Numeric mode at ``eps = 0`` is
    computed through a degree-1 jet pass, because the limit of the radial
    rate is an eps-derivative; the returned coefficients are the exact
    conservative limits.
    """
    if order < spec.sigma - 1:
        raise OrderError(
            f"order {order} is below the split order sigma-1 = {spec.sigma - 1}")

    if mode.kind == "numeric":
        if not (0.0 <= mode.eps <= model.eps_max + 1e-15):
            raise ValueError(
                f"eps={mode.eps} outside [0, {model.eps_max}]")
        if mode.eps == 0.0:
            jet = expand(model, spec, order, JetMode(1), res_margin)
            return jet.numeric_at(0.0)
        builder = _Builder(model, spec, order, mode, res_margin)
        emit_mode = mode
    else:
        internal = JetMode(mode.degree + 1)
        builder = _Builder(model, spec, order, internal, res_margin)
        emit_mode = mode

    for p in range(2, order + 1):
        builder.solve_order(p)

    if mode.kind == "jet":
        W = _truncate_series(builder.W, mode)
        Rpoly = [_trunc(c, mode.degree) for c in builder.c]
        Tpoly = [_trunc(dd, mode.degree) for dd in builder.d]
    else:
        W = builder.W
        Rpoly = [complex(c).real for c in builder.c]
        Tpoly = [complex(dd).real for dd in builder.d]

    return ManifoldExpansion(
        W=W, Rpoly=Rpoly, Tpoly=Tpoly, order=order,
        split_order=spec.sigma - 1, eps_mode=emit_mode, spec=spec,
        model=model, d=1.0,
        meta={"res_margin": res_margin, "model_hash": model.content_hash()})


def _trunc(s, degree):
    return s.truncated(degree) if isinstance(s, EpsPoly) else s


def _truncate_series(W, mode):
    out = FourierTaylor(W.nu, W.order, mode)
    for n in range(W.order + 1):
        for idx in range(2 * n + 1):
            for i in range(W.dim):
                out.coeffs[n][idx, i] = W.coeffs[n][idx, i].truncated(mode.degree)
    return out


def eta_term(model, exp, n):
    """Taylor-normalized order-n forcing slice from a partial expansion.

    Requires all orders below ``n`` to be present in ``exp``; returns a
    dict ``k -> coefficient vector``.
    """
    if n < 2 or n > exp.order:
        raise ValueError("forcing slice order must lie in [2, exp.order]")
    b = _Builder.__new__(_Builder)
    b.model = model
    b.spec = exp.spec
    b.order = exp.order
    b.mode = exp.eps_mode
    b.W = exp.W
    b.c = exp.Rpoly
    b.d = exp.Tpoly
    G = b.forcing_slice(n)
    return {k: G[k + n] for k in range(-n, n + 1)}


# -- evaluation -------------------------------------------------------------------


def _realize(values, tol=1e-12):
    values = np.asarray(values)
    scale = max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    worst = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if worst > tol * scale:
        raise ValueError(f"imaginary residue {worst:.3e} exceeds {tol:g}")
    return values.real


def eval_expansion(exp, r, theta, eps=None):
    """Point on the manifold; real vector of length 2 nu."""
    e = exp._check_eps(eps)
    val = exp.W.evaluate(r, theta, eps=e if exp.eps_mode.kind == "jet" else None)
    return _realize(val)


def eval_expansion_many(exp, r_arr, theta_arr, eps=None):
    e = exp._check_eps(eps)
    vals = exp.W.evaluate_many(
        r_arr, theta_arr, eps=e if exp.eps_mode.kind == "jet" else None)
    return _realize(vals)


def eval_R(exp, r, eps=None):
    return exp.eval_R(r, eps)


def eval_T(exp, r, eps=None):
    return exp.eval_T(r, eps)


# -- structural checks -------------------------------------------------------------


def growth_phase_check(exp):
    """Growth and phase pairings of the derivative slices, per order.

    Returns a list of records with derivative-scale pairings of
    ``D1^n W(0, .)``; in jet mode each record carries the conservative
    value and the eps-slope.  Orders >= 2 must pair to zero, order 1 to
    growth 1, phase 0.
    """
    proj = make_wstar(exp.spec)
    out = []
    for n in range(1, exp.order + 1):
        fac = math.factorial(n)
        fp = [exp.W.coeffs[n][1 + n, i] * fac for i in range(exp.dim)]
        fm = [exp.W.coeffs[n][-1 + n, i] * fac for i in range(exp.dim)]
        g, p = proj.growth_phase(fp, fm)
        if exp.eps_mode.kind == "jet":
            gc, pc = np.atleast_1d(g.coeffs), np.atleast_1d(p.coeffs)
            rec = {"order": n,
                   "growth": float(gc[0].real), "phase": float(pc[0].real),
                   "growth_slope": float(gc[1].real) if gc.size > 1 else 0.0,
                   "phase_slope": float(pc[1].real) if pc.size > 1 else 0.0}
        else:
            rec = {"order": n, "growth": float(complex(g).real),
                   "phase": float(complex(p).real),
                   "growth_slope": None, "phase_slope": None}
        out.append(rec)
    return out


def tangential_first_harmonic_defect(exp):
    """Max magnitude of the mode-aligned projections of w[n][+-1], n >= 2.

    This is the content of the growth and phase conditions; it is zero by
    construction and asserted exactly in the acceptance suite.
    """
    worst = 0.0
    vstar = exp.spec.v_ell_star
    v1star = exp.spec.left_vectors[exp.spec.ell + 1]
    for n in range(2, exp.order + 1):
        fp = exp.W.coeffs[n][1 + n]
        fm = exp.W.coeffs[n][-1 + n]
        worst = max(worst, abs_s(_bilinear(vstar, fp)),
                    abs_s(_bilinear(v1star, fm)))
    return worst


def to_cartesian(exp):
    """Cartesian coefficients b[p, q] of the immersion.

    With Taylor-normalized storage the index map is the identity:
    ``b[p, q] = w[p + q][p - q]``.  Realness shows up as
    ``b[q, p] = conj(b[p, q])``.
    """
    out = {}
    for n in range(1, exp.order + 1):
        for idx in range(2 * n + 1):
            k = idx - n
            if (k - n) % 2 != 0:
                continue
            p = (n + k) // 2
            q = (n - k) // 2
            out[(p, q)] = exp.W.coeffs[n][idx].copy()
    return out


def cartesian_evaluate(bcoeffs, x, y, eps=None):
    """Evaluate the Cartesian form sum b_pq (x+iy)^p (x-iy)^q."""
    z = x + 1j * y
    zb = x - 1j * y
    first = next(iter(bcoeffs.values()))
    dim = len(first)
    out = np.zeros(dim, dtype=complex)
    for (p, q), vec in bcoeffs.items():
        w = (z ** p) * (zb ** q)
        for i in range(dim):
            v = vec[i]
            if isinstance(v, EpsPoly):
                v = v(eps if eps is not None else 0.0)
            out[i] += v * w
    return out


# -- exact residual series ------------------------------------------------------------


def invariance_residual_series(exp, order_cap=None):
    """Exact residual series of the truncated manifold.

    The stored expansion is a polynomial in ``r`` and a trigonometric
    polynomial in ``theta``, so its invariance residual ::

        D1 W . R + D2 W . T - A_eps W - N_eps(W)

    is again a finite Fourier-Taylor series, computed here exactly by
    series algebra (numeric mode).  Slices up to the expansion order are
    zero by construction; their measured magnitude is returned as a
    solve-quality defect and the slices are then cleared so the tail can
    be evaluated without cancellation noise at small radii.

    Returns ``(series, defect)``.
    """
    if exp.eps_mode.kind != "numeric":
        raise ValueError("residual series needs a numeric-mode expansion")
    model, mode = exp.model, exp.eps_mode
    N = exp.order
    maxdeg = max((t.total_degree for t in model.terms), default=2)
    if order_cap is None:
        order_cap = max(maxdeg * N, 2 * N)

    Wp = _pad(exp.W, order_cap)
    dim = model.dim

    # D1 W . (eps * Rle): shift-down derivative against the radial rate
    res = [np.zeros((2 * n + 1, dim), dtype=complex) for n in range(order_cap + 1)]
    eps = mode.eps
    for n in range(1, N + 1):
        row = exp.W.coeffs[n].astype(complex)
        for m in range(1, N + 1):
            cm = complex(exp.Rpoly[m]).real
            if cm == 0.0:
                continue
            n3 = n - 1 + m
            if n3 > order_cap:
                continue
            res[n3][(n3 - n):(n3 - n) + 2 * n + 1] += eps * cm * n * row
    # D2 W . T
    for n in range(1, N + 1):
        row = exp.W.coeffs[n].astype(complex)
        ks = (np.arange(2 * n + 1) - n)[:, None]
        drow = 1j * ks * row
        for m in range(len(exp.Tpoly)):
            dm = complex(exp.Tpoly[m]).real
            if dm == 0.0:
                continue
            n3 = n + m
            if n3 > order_cap:
                continue
            res[n3][(n3 - n):(n3 - n) + 2 * n + 1] += dm * drow
    # - A_eps W
    A = model.a_matrix(eps)
    for n in range(1, N + 1):
        row = exp.W.coeffs[n].astype(complex)
        res[n][0:2 * n + 1] -= row @ A.T
    # - N_eps(W)
    comp = series_compose(model, Wp, order_cap, mode)
    for n in range(order_cap + 1):
        res[n] -= comp.coeffs[n].astype(complex)

    scale = max(max((float(np.max(np.abs(r))) for r in res if r.size), default=0.0),
                1.0)
    defect = 0.0
    for n in range(min(N, order_cap) + 1):
        defect = max(defect, float(np.max(np.abs(res[n]))) if res[n].size else 0.0)
        res[n][:] = 0.0
    out = FourierTaylor(model.nu, order_cap, mode,
                        coeffs=res)
    return out, defect / scale


def _pad(W, order):
    if W.order >= order:
        return W
    out = FourierTaylor(W.nu, order, W.mode)
    for n in range(W.order + 1):
        out.coeffs[n] = W.coeffs[n].copy()
    return out
