"""Vector-field data model and model-file handling.

A model is ::

    xdot = (eps*Delta + Omega) x + N_eps(x)

with commuting real matrices ``Delta`` (damping split) and ``Omega``
(conservative rotation), and a polynomial nonlinearity given term by term
as monomials of total degree >= 2.  Restricting to commuting splits keeps
the spectrum exactly affine in ``eps`` and the eigenvectors constant,
which is what makes the jet arithmetic exact.

Model files are UTF-8 JSON::

    { "nu": int,
      "delta": [[2nu x 2nu reals]],
      "omega": [[2nu x 2nu reals]],
      "terms": [ {"target": int, "exponents": [int x 2nu],
                  "eps_degree": int, "coefficient": real}, ... ],
      "conserved": [ {"exponents": [int x 2nu], "coefficient": real}, ... ],
      "eps_max": real }

``conserved`` is optional and gives a scalar polynomial that the
conservative (eps = 0) flow preserves.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _eig
from .errors import (CommutatorError, DegenerateModeError, DimensionError,
                     EquilibriumError, ParseError, SelectionError)
from .jets import JetMode, NumericMode
from .series import FourierTaylor, table_add, table_mul, table_scale, table_zeros

COMMUTATOR_RTOL = 1e-10


@dataclass(frozen=True)
class MonomialTerm:
    """One monomial of the nonlinearity: coefficient * eps**m * x**exponents
    added to component ``target``."""
    target: int
    exponents: tuple
    eps_degree: int
    coefficient: float

    @property
    def total_degree(self):
        return int(sum(self.exponents))


@dataclass(frozen=True)
class PolyVectorField:
    """Validated model; treat as immutable after construction."""
    nu: int
    delta: np.ndarray
    omega: np.ndarray
    terms: tuple
    conserved: tuple | None
    eps_max: float
    source_hash: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return 2 * self.nu

    def a_matrix(self, eps):
        return eps * self.delta + self.omega

    def content_hash(self):
        """Hash of the model content (stable under re-serialization)."""
        if self.source_hash:
            return self.source_hash
        blob = json.dumps(model_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def model_to_dict(model):
    d = {
        "nu": model.nu,
        "delta": model.delta.tolist(),
        "omega": model.omega.tolist(),
        "terms": [
            {"target": t.target, "exponents": list(t.exponents),
             "eps_degree": t.eps_degree, "coefficient": t.coefficient}
            for t in model.terms
        ],
        "eps_max": model.eps_max,
    }
    if model.conserved is not None:
        d["conserved"] = [
            {"exponents": list(e), "coefficient": c}
            for (e, c) in model.conserved
        ]
    return d


def _require(cond, exc, msg):
    if not cond:
        raise exc(msg)


def _finite(x):
    return isinstance(x, (int, float)) and math.isfinite(x)


def model_from_dict(data, source_hash=""):
    """Build and validate a model from parsed JSON data."""
    _require(isinstance(data, dict), ParseError, "model file must hold a JSON object")
    for key in ("nu", "delta", "omega", "terms", "eps_max"):
        _require(key in data, ParseError, f"model file misses key {key!r}")

    nu = data["nu"]
    _require(isinstance(nu, int) and nu >= 1, ParseError, "nu must be a positive integer")
    dim = 2 * nu

    try:
        delta = np.array(data["delta"], dtype=float)
        omega = np.array(data["omega"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"matrix entries must be real numbers: {exc}") from None
    _require(delta.shape == (dim, dim), DimensionError,
             f"delta must be {dim}x{dim}, got {delta.shape}")
    _require(omega.shape == (dim, dim), DimensionError,
             f"omega must be {dim}x{dim}, got {omega.shape}")
    _require(bool(np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))),
             ParseError, "matrices contain non-finite entries")

    terms = []
    _require(isinstance(data["terms"], list), ParseError, "terms must be a list")
    for i, raw in enumerate(data["terms"]):
        _require(isinstance(raw, dict), ParseError, f"terms[{i}] must be an object")
        try:
            tgt = raw["target"]
            exps = tuple(int(e) for e in raw["exponents"])
            epsd = raw["eps_degree"]
            coef = raw["coefficient"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"terms[{i}] is malformed: {exc}") from None
        _require(isinstance(tgt, int) and 0 <= tgt < dim, DimensionError,
                 f"terms[{i}].target out of range")
        _require(len(exps) == dim, DimensionError,
                 f"terms[{i}].exponents must have length {dim}")
        _require(all(e >= 0 for e in exps), ParseError,
                 f"terms[{i}].exponents must be nonnegative")
        _require(isinstance(epsd, int) and epsd >= 0, ParseError,
                 f"terms[{i}].eps_degree must be a nonnegative integer")
        _require(_finite(coef), ParseError, f"terms[{i}].coefficient must be finite")
        term = MonomialTerm(tgt, exps, epsd, float(coef))
        _require(term.total_degree >= 2, EquilibriumError,
                 f"terms[{i}] has total degree {term.total_degree} < 2; "
                 "the origin would not keep a vanishing Jacobian")
        terms.append(term)

    conserved = None
    if "conserved" in data and data["conserved"] is not None:
        conserved = []
        for i, raw in enumerate(data["conserved"]):
            try:
                exps = tuple(int(e) for e in raw["exponents"])
                coef = raw["coefficient"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"conserved[{i}] is malformed: {exc}") from None
            _require(len(exps) == dim, DimensionError,
                     f"conserved[{i}].exponents must have length {dim}")
            _require(_finite(coef), ParseError,
                     f"conserved[{i}].coefficient must be finite")
            conserved.append((exps, float(coef)))
        conserved = tuple(conserved)

    eps_max = data["eps_max"]
    _require(_finite(eps_max) and eps_max > 0, ParseError, "eps_max must be positive")

    comm = delta @ omega - omega @ delta
    scale = max(np.max(np.abs(delta)) * np.max(np.abs(omega)), 1e-300)
    if np.max(np.abs(comm)) >= COMMUTATOR_RTOL * scale:
        raise CommutatorError(
            "delta and omega do not commute "
            f"(|[D,O]|_max = {np.max(np.abs(comm)):.3e}, "
            f"tolerance {COMMUTATOR_RTOL * scale:.3e})")

    delta.setflags(write=False)
    omega.setflags(write=False)
    return PolyVectorField(nu=nu, delta=delta, omega=omega, terms=tuple(terms),
                           conserved=conserved, eps_max=float(eps_max),
                           source_hash=source_hash)


def load_model(path):
    """Load and validate a model file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from None
    try:
        data = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"model file {path} is not valid JSON: {exc}") from None
    return model_from_dict(data, source_hash=hashlib.sha256(blob).hexdigest())


# -- evaluation ---------------------------------------------------------------


def eval_field(model, x, eps):
    """Right-hand side (eps*Delta + Omega) x + N_eps(x) at one point."""
    x = np.asarray(x, dtype=float)
    out = model.a_matrix(eps) @ x
    for t in model.terms:
        val = t.coefficient * eps ** t.eps_degree
        for i, e in enumerate(t.exponents):
            if e:
                val *= x[i] ** e
        out[t.target] += val
    return out


def eval_nonlinear(model, X, eps):
    """Nonlinear part at many points; X has shape (npts, 2nu)."""
    X = np.asarray(X)
    out = np.zeros_like(X)
    for t in model.terms:
        val = np.full(X.shape[0], t.coefficient * eps ** t.eps_degree,
                      dtype=X.dtype)
        for i, e in enumerate(t.exponents):
            if e:
                val = val * X[:, i] ** e
        out[:, t.target] += val
    return out


def eval_nonlinear_jacobian(model, X, eps):
    """Jacobian of the nonlinear part at many points: (npts, 2nu, 2nu)."""
    X = np.asarray(X)
    npts, dim = X.shape
    out = np.zeros((npts, dim, dim), dtype=X.dtype)
    for t in model.terms:
        base = t.coefficient * eps ** t.eps_degree
        for j, ej in enumerate(t.exponents):
            if not ej:
                continue
            val = np.full(npts, base * ej, dtype=X.dtype)
            for i, e in enumerate(t.exponents):
                p = e - 1 if i == j else e
                if p:
                    val = val * X[:, i] ** p
            out[:, t.target, j] += val
    return out


def conserved_value(model, X):
    """Conserved polynomial at many points; X has shape (npts, 2nu)."""
    if model.conserved is None:
        raise ValueError("model has no conserved quantity")
    X = np.asarray(X)
    out = np.zeros(X.shape[0], dtype=X.dtype)
    for exps, coef in model.conserved:
        val = np.full(X.shape[0], coef, dtype=X.dtype)
        for i, e in enumerate(exps):
            if e:
                val = val * X[:, i] ** e
        out += val
    return out


# -- normalization -------------------------------------------------------------


@dataclass(frozen=True)
class ScaleReport:
    """Factors applied by :func:`normalize_model`."""
    time_factor: float
    eps_factor: float
    ell: int

    def as_dict(self):
        return {"time_factor": self.time_factor,
                "eps_factor": self.eps_factor, "ell": self.ell}


def default_mode_index(alphas, omegas):
    """Distinguished pair: least damped; frequency magnitude breaks ties."""
    npairs = len(alphas) // 2
    best = None
    for p in range(npairs):
        key = (-alphas[2 * p], abs(omegas[2 * p]))
        if best is None or key < best[0]:
            best = (key, p)
    return 2 * best[1]


def normalize_model(model, ell_hint=None):
    """Rescale time and eps so the distinguished eigenvalue is ``-eps + i``.

    Time is divided by the mode frequency and eps is rescaled by the ratio
    of damping slope to frequency; the report records both factors.
    Idempotent on an already-normalized model (factors 1, 1).
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

    w_l = omegas[ell]
    a_l = alphas[ell]
    if abs(a_l) < 1e-14:
        raise DegenerateModeError(
            "selected mode pair has no first-order damping; cannot normalize")
    if a_l > 0:
        raise DegenerateModeError(
            "selected mode pair is excited, not damped, at first order")

    time_factor = w_l            # new time = old time * w_l
    eps_factor = -a_l / w_l      # new eps = old eps * eps_factor

    omega_new = model.omega / time_factor
    delta_new = model.delta / (-a_l)
    terms_new = tuple(
        MonomialTerm(t.target, t.exponents, t.eps_degree,
                     t.coefficient * (w_l / (-a_l)) ** t.eps_degree / w_l)
        for t in model.terms)
    normalized = PolyVectorField(
        nu=model.nu, delta=delta_new, omega=omega_new, terms=terms_new,
        conserved=model.conserved, eps_max=model.eps_max * eps_factor,
        source_hash="",
        meta={"normalized_from": model.content_hash(),
              "time_factor": time_factor, "eps_factor": eps_factor})
    normalized.delta.setflags(write=False)
    normalized.omega.setflags(write=False)
    return normalized, ScaleReport(time_factor=float(time_factor),
                                   eps_factor=float(eps_factor), ell=ell)


# -- series composition ---------------------------------------------------------


def series_compose(model, W, order, mode=None):
    """Fourier-Taylor expansion of N_eps(W(r, theta)) through ``order``.

    Products convolve in both the radial order and the harmonic index.
    Because W carries no constant term, the truncated result is exact
    through ``order``.
    """
    if mode is None:
        mode = W.mode
    if W.order < order:
        raise ValueError("W must be expanded at least to the requested order")
    comps = [W.component(i) for i in range(W.dim)]
    out_tables = [table_zeros(order, mode) for _ in range(W.dim)]
    for t in model.terms:
        prod = None
        for i, e in enumerate(t.exponents):
            for _ in range(e):
                prod = comps[i] if prod is None else table_mul(prod, comps[i],
                                                               order, mode)
        if prod is None:
            continue
        factor = mode.eps_power(t.eps_degree) * t.coefficient
        out_tables[t.target] = table_add(out_tables[t.target],
                                         table_scale(prod, factor))
    return FourierTaylor.from_components(out_tables, W.nu, order, mode)


def compose_scalar(poly_terms, W, order, mode=None):
    """Scalar table of a state polynomial composed with W."""
    if mode is None:
        mode = W.mode
    comps = [W.component(i) for i in range(W.dim)]
    out = table_zeros(order, mode)
    for exps, coef in poly_terms:
        prod = None
        for i, e in enumerate(exps):
            for _ in range(e):
                prod = comps[i] if prod is None else table_mul(prod, comps[i],
                                                               order, mode)
        if prod is None:
            # constant terms only shift the level, keep them at n = 0, k = 0
            out[0][0] = out[0][0] + mode.from_complex(coef)
            continue
        out = table_add(out, table_scale(prod, mode.from_complex(coef)))
    return out
