"""Eigen-analysis, structural assumption checks and the mode projector.

``analyze`` diagonalizes the linear part once and reads off damping
slopes, frequencies, the distinguished mode pair, the spectral ratio
(worst-case ratio of normal to tangential decay rates) and the smallest
admissible integer smoothness order.  ``check_assumptions`` turns the
structural requirements into a report with measured margins instead of
exceptions, so a failing model can still be inspected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _eig
from .errors import NoSpectralGapError, NotRealError, SelectionError
from .jets import EpsPoly
from .model import default_mode_index, eval_nonlinear


@dataclass(frozen=True)
class SpectralData:
    """Eigen-structure of the linear part.

    ``eigenvalues[k] = (alpha_k, omega_k)`` so the k-th eigenvalue is
    ``eps*alpha_k + i*omega_k`` for every eps.  ``right_vectors`` holds
    eigenvectors as columns, ``left_vectors`` the biorthonormal rows, so
    ``left_vectors[k] . right_vectors[:, k] = 1`` exactly by construction.
    """
    eigenvalues: tuple
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    ell: int
    aleph: float
    sigma: int
    diag_transform: np.ndarray
    cond: float = 0.0
    offdiag: float = 0.0
    aleph_grid: tuple = ()

    @property
    def dim(self):
        return len(self.eigenvalues)

    @property
    def alphas(self):
        return np.array([a for a, _ in self.eigenvalues])

    @property
    def omegas(self):
        return np.array([w for _, w in self.eigenvalues])

    @property
    def v_ell(self):
        return self.right_vectors[:, self.ell]

    @property
    def v_ell_star(self):
        return self.left_vectors[self.ell]

    def lam(self, j, eps):
        a, w = self.eigenvalues[j]
        return eps * a + 1j * w

    def lam_jet(self, j, degree=1):
        a, w = self.eigenvalues[j]
        c = np.zeros(degree + 1, dtype=complex)
        c[0] = 1j * w
        if degree >= 1:
            c[1] = a
        return EpsPoly(c)

    def is_normalized(self, tol=1e-12):
        a, w = self.eigenvalues[self.ell]
        return abs(a + 1.0) < tol and abs(w - 1.0) < tol


def analyze(model, sigma_cap=16, ell_hint=None, aleph_grid_points=33):
    """Eigen-decomposition plus the derived spectral quantities.

    The spectral ratio is the largest ratio of normal to tangential
    damping slopes; with the affine spectrum of this model class it is
    independent of eps, and the evaluation over a grid on [0, K] is kept
    as a consistency record.
    """
    eig = _eig.eig_pairs(model.delta, model.omega)
    alphas, omegas = eig["alphas"], eig["omegas"]

    if ell_hint is not None:
        if not (0 <= ell_hint < model.dim and omegas[ell_hint] > 0):
            raise SelectionError(
                f"ell_hint {ell_hint} does not name a positive-frequency mode")
        ell = int(ell_hint)
    else:
        ell = default_mode_index(alphas, omegas)

    others = [j for j in range(model.dim) if j not in (ell, ell + 1)]
    if others and abs(alphas[ell]) > 0:
        aleph = max(alphas[j] / alphas[ell] for j in others)
    else:
        aleph = 0.0
    grid = np.linspace(0.0, model.eps_max, aleph_grid_points)
    grid_vals = []
    for eps in grid:
        if eps == 0.0 or not others:
            grid_vals.append(aleph)
        else:
            grid_vals.append(max((eps * alphas[j]) / (eps * alphas[ell])
                                 for j in others))

    sigma = max(2, math.floor(aleph) + 1)
    if sigma > sigma_cap:
        raise NoSpectralGapError(
            f"required smoothness order {sigma} exceeds cap {sigma_cap} "
            f"(spectral ratio {aleph:.6g})")

    eigenvalues = tuple((float(alphas[j]), float(omegas[j]))
                        for j in range(model.dim))
    return SpectralData(eigenvalues=eigenvalues, right_vectors=eig["V"],
                        left_vectors=eig["Vinv"], ell=ell, aleph=float(aleph),
                        sigma=int(sigma), diag_transform=eig["V"],
                        cond=eig["cond"], offdiag=eig["offdiag"],
                        aleph_grid=tuple(zip(grid.tolist(), grid_vals)))


# -- assumption report -----------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    details: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": self.passed,
                "margin": self.margin, "details": self.details}


@dataclass
class AssumptionReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {"passed": self.passed,
                "checks": [c.as_dict() for c in self.checks]}

    def __iter__(self):
        return iter(self.checks)


def _poly_mul(a, b):
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def _poly_add_into(acc, other, scale=1.0):
    for e, c in other.items():
        acc[e] = acc.get(e, 0.0) + scale * c


def _conserved_identity_residual(model):
    """Coefficient-wise residual of Dc . (Omega x + N_0(x))."""
    dim = model.dim
    grad = []
    for j in range(dim):
        g = {}
        for exps, coef in model.conserved:
            if exps[j] == 0:
                continue
            e = list(exps)
            e[j] -= 1
            g[tuple(e)] = g.get(tuple(e), 0.0) + coef * exps[j]
        grad.append(g)

    # field components at eps = 0 as exponent dicts
    fcomp = []
    for i in range(dim):
        f = {}
        for j in range(dim):
            if model.omega[i, j] != 0.0:
                e = tuple(1 if m == j else 0 for m in range(dim))
                f[e] = f.get(e, 0.0) + model.omega[i, j]
        fcomp.append(f)
    for t in model.terms:
        if t.eps_degree == 0:
            fcomp[t.target][t.exponents] = \
                fcomp[t.target].get(t.exponents, 0.0) + t.coefficient

    resid = {}
    for j in range(dim):
        if grad[j] and fcomp[j]:
            _poly_add_into(resid, _poly_mul(grad[j], fcomp[j]))
    return {e: c for e, c in resid.items() if abs(c) > 0.0}


def _hessian_at_origin(model):
    dim = model.dim
    H = np.zeros((dim, dim))
    for exps, coef in model.conserved:
        if sum(exps) != 2:
            continue
        idx = [i for i, e in enumerate(exps) for _ in range(e)]
        i, j = idx
        if i == j:
            H[i, i] += 2.0 * coef
        else:
            H[i, j] += coef
            H[j, i] += coef
    return H


def check_assumptions(model, spec, eps_grid=None, res_margin=0.05):
    """Run the seven structural checks and report margins.

    Failures become report entries, never exceptions, so the caller can
    print the full picture.
    """
    if eps_grid is None:
        eps_grid = [0.0, model.eps_max / 2.0, model.eps_max]
    rep = AssumptionReport()
    dim = model.dim
    alphas, omegas = spec.alphas, spec.omegas

    # 1. diagonalizability of the linear part
    rep.checks.append(CheckResult(
        "diagonalizable", spec.cond < _eig.COND_CAP,
        margin=float(_eig.COND_CAP - spec.cond),
        details=f"eigenvector condition number {spec.cond:.6g}, "
                f"simultaneous-diagonalization off-norm {spec.offdiag:.3g}"))

    # 2. conjugate pairs, nonzero frequencies, affine real parts
    pair_ok = all(
        abs(alphas[2 * p] - alphas[2 * p + 1]) < 1e-12
        and abs(omegas[2 * p] + omegas[2 * p + 1]) < 1e-12
        for p in range(dim // 2))
    wmin = float(np.min(np.abs(omegas)))
    rep.checks.append(CheckResult(
        "conjugate_pairs", pair_ok and wmin > 1e-10, margin=wmin,
        details="eigenvalues eps*alpha + i*omega in conjugate pairs; "
                f"min |omega| = {wmin:.6g}"))

    # 3. distinguished pair normalized to -eps + i
    a_l, w_l = spec.eigenvalues[spec.ell]
    m3 = max(abs(a_l + 1.0), abs(w_l - 1.0))
    rep.checks.append(CheckResult(
        "mode_normalized", m3 < 1e-10, margin=float(-m3),
        details=f"lambda_ell(eps) = {a_l:.17g}*eps + {w_l:.17g}i"))

    # 4. spectral ratio below the smoothness order
    rep.checks.append(CheckResult(
        "spectral_gap", spec.aleph < spec.sigma,
        margin=float(spec.sigma - spec.aleph),
        details=f"spectral ratio {spec.aleph:.6g} < sigma {spec.sigma}"))

    # 5. conserved quantity of the eps = 0 flow
    if model.conserved is not None:
        resid = _conserved_identity_residual(model)
        worst = max((abs(c) for c in resid.values()), default=0.0)
        rng = np.random.default_rng(0)
        X = 0.1 * rng.standard_normal((64, dim))
        vals = np.zeros(64)
        for j in range(dim):
            g = np.zeros(64)
            for exps, coef in model.conserved:
                if exps[j] == 0:
                    continue
                term = np.full(64, coef * exps[j])
                for i, e in enumerate(exps):
                    p = e - 1 if i == j else e
                    if p:
                        term = term * X[:, i] ** p
                g += term
            f = (model.omega @ X.T).T + eval_nonlinear(model, X, 0.0)
            vals += g * f[:, j]
        sampled = float(np.max(np.abs(vals)))
        ok = worst < 1e-10 and sampled < 1e-10
        rep.checks.append(CheckResult(
            "conserved_identity", ok, margin=float(-max(worst, sampled)),
            details=f"coefficient-wise residual {worst:.3g}, "
                    f"sampled residual {sampled:.3g}"))
    else:
        rep.checks.append(CheckResult(
            "conserved_identity", False, margin=float("-inf"),
            details="no conserved quantity supplied"))

    # 6. positive-definite Hessian block on the mode plane
    if model.conserved is not None:
        H = _hessian_at_origin(model)
        v = spec.v_ell
        B = np.column_stack([v.real, v.imag])
        block = B.T @ H @ B
        lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (block + block.T))))
        rep.checks.append(CheckResult(
            "definite_hessian", lam_min > 0.0, margin=lam_min,
            details=f"min eigenvalue of the projected Hessian {lam_min:.6g}"))
    else:
        rep.checks.append(CheckResult(
            "definite_hessian", False, margin=float("-inf"),
            details="no conserved quantity supplied"))

    # 7. non-resonance of normal frequencies against integers
    margins = []
    for j in range(dim):
        if j in (spec.ell, spec.ell + 1):
            continue
        w = omegas[j]
        margins.append(abs(w - round(w)))
    m7 = float(min(margins)) if margins else float("inf")
    rep.checks.append(CheckResult(
        "nonresonant", m7 >= res_margin, margin=m7,
        details=f"min distance of normal frequencies to integers {m7:.6g} "
                f"(required {res_margin:g})"))

    return rep


# -- mode projector ----------------------------------------------------------------


class WStarProjector:
    """First-harmonic projector built from the distinguished left pair.

    ``wstar(theta) = (4 pi)^-1 (v_l* e^{-i theta} + v_{l+1}* e^{i theta})``
    is real valued; its pairing with a 2pi-periodic function extracts the
    growth component, and the pairing with its derivative the phase
    component.  On Fourier data both reduce to bilinear products with the
    first-harmonic coefficients, evaluated here exactly.
    """

    def __init__(self, v_l_star, v_l1_star, check_real=True):
        self.v_l_star = np.asarray(v_l_star, dtype=complex)
        self.v_l1_star = np.asarray(v_l1_star, dtype=complex)
        if check_real:
            defect = self.realness_defect()
            if defect > 1e-12:
                raise NotRealError(
                    f"projector is not real valued (defect {defect:.3e}); "
                    "left vectors are not a conjugate pair")

    def realness_defect(self, nsamples=32):
        thetas = np.linspace(0.0, 2.0 * np.pi, nsamples, endpoint=False)
        vals = self.wstar_many(thetas)
        return float(np.max(np.abs(vals.imag)))

    def wstar(self, theta):
        return (self.v_l_star * np.exp(-1j * theta)
                + self.v_l1_star * np.exp(1j * theta)) / (4.0 * np.pi)

    def wstar_many(self, thetas):
        e = np.exp(-1j * np.asarray(thetas))[:, None]
        return (self.v_l_star[None, :] * e
                + self.v_l1_star[None, :] / e) / (4.0 * np.pi)

    def growth_phase(self, f_plus, f_minus):
        """Growth and phase pairings from first-harmonic coefficients.

        ``f_plus``/``f_minus`` are the coefficients of e^{i theta} and
        e^{-i theta}; entries may be complex numbers or jets.  Works out
        to Re / Im of ``v_l* . f_plus`` for real-valued fields.
        """
        sp = sum(self.v_l_star[i] * f_plus[i] for i in range(len(self.v_l_star)))
        sm = sum(self.v_l1_star[i] * f_minus[i] for i in range(len(self.v_l1_star)))
        growth = (sp + sm) * 0.5
        phase = (sp - sm) * (-0.5j)
        return growth, phase


def make_wstar(spec):
    """Projector from the analyzed spectral data."""
    return WStarProjector(spec.left_vectors[spec.ell],
                          spec.left_vectors[spec.ell + 1])
