"""Independent oracles used by the test-suite.

These deliberately avoid the library's series machinery: the symbolic
oracle goes through sympy expressions, the orbit oracle through direct
numerical integration with event detection, and the projector oracle
through trapezoid quadrature (exact on trigonometric polynomials).
"""

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

from ssm2d.model import eval_field


def symbolic_field(model_dict):
    """Sympy expressions for the right-hand side of the model."""
    dim = 2 * model_dict["nu"]
    xs = sp.symbols(f"x0:{dim}")
    eps = sp.Symbol("eps")
    delta = sp.Matrix(model_dict["delta"])
    omega = sp.Matrix(model_dict["omega"])
    vec = (eps * delta + omega) * sp.Matrix(xs)
    for t in model_dict["terms"]:
        mono = sp.nsimplify(t["coefficient"], rational=True) \
            * eps ** t["eps_degree"]
        for i, e in enumerate(t["exponents"]):
            mono *= xs[i] ** e
        vec[t["target"]] += mono
    return xs, eps, [sp.expand(v) for v in vec]


def symbolic_field_value(model_dict, x, eps_val, digits=30):
    xs, eps, vec = symbolic_field(model_dict)
    subs = {eps: sp.Float(eps_val, digits)}
    subs.update({xs[i]: sp.Float(x[i], digits) for i in range(len(xs))})
    return np.array([float(v.evalf(digits, subs=subs)) for v in vec])


def symbolic_compose_slices(model_dict, W_rows, eps_val, order, digits=30):
    """Fourier-Taylor slices of N_eps(W) by sympy expansion.

    ``W_rows[n]`` is a (2n+1, dim) complex array.  Harmonics are carried
    by an auxiliary symbol ``z = exp(i theta)``; negative powers are
    cleared before coefficient extraction.  Returns slices[n][k] as
    complex vectors for n <= order.
    """
    dim = 2 * model_dict["nu"]
    r, z = sp.symbols("r z")
    Wexpr = []
    for i in range(dim):
        acc = sp.Integer(0)
        for n, row in enumerate(W_rows):
            for idx in range(2 * n + 1):
                k = idx - n
                c = complex(row[idx, i])
                if c == 0:
                    continue
                cc = sp.Float(c.real, digits) + sp.I * sp.Float(c.imag, digits)
                acc += cc * r ** n * z ** k
        Wexpr.append(acc)

    nmax = order
    slices = [np.zeros((2 * n + 1, dim), dtype=complex)
              for n in range(nmax + 1)]
    epsf = sp.Float(eps_val, digits)
    for t in model_dict["terms"]:
        mono = sp.nsimplify(t["coefficient"], rational=True) \
            * epsf ** t["eps_degree"]
        for i, e in enumerate(t["exponents"]):
            mono *= Wexpr[i] ** e
        expr = sp.expand(mono * z ** (3 * nmax))  # clear negative powers
        poly = sp.Poly(expr, r, z)
        for (pr, pz), coef in poly.terms():
            n = int(pr)
            k = int(pz) - 3 * nmax
            if n > nmax or abs(k) > n:
                continue
            c = complex(coef.evalf(digits))
            slices[n][k + n, t["target"]] += c
    return slices


def trapezoid_projection(wstar_vals, f_vals, thetas):
    """Growth-type pairing by trapezoid quadrature on a periodic grid."""
    prods = np.einsum("ti,ti->t", wstar_vals, f_vals)
    return float(np.real(np.sum(prods) * (thetas[1] - thetas[0])))


def conservative_orbit(model, a, t_max=20.0):
    """Closed orbit of the conservative flow from (a, 0, ...).

    Returns the period and a callable giving the dense state.  The
    period is the first downward crossing of the second state component
    past a filter window, which for these oscillators is the full
    return.
    """
    x0 = np.zeros(model.dim)
    x0[0] = a

    def rhs(t, y):
        return eval_field(model, y, 0.0)

    def event(t, y):
        return y[1]
    event.direction = -1.0

    sol = solve_ivp(rhs, (0.0, t_max), x0, method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True,
                    events=event)
    times = [t for t in sol.t_events[0] if t > 0.5]
    if not times:
        raise RuntimeError("no full return detected; raise t_max")
    return float(times[0]), sol.sol


def orbit_growth_radius(model, spec, a, nsamples=512):
    """Radius label and angular frequency of a conservative orbit.

    The radius is the magnitude of the distinguished left-vector pairing
    with the orbit's first Fourier harmonic, the quantity whose unit
    growth fixes the radial parametrization.
    """
    period, dense = conservative_orbit(model, a)
    thetas = np.arange(nsamples) * (2.0 * np.pi / nsamples)
    ts = thetas * period / (2.0 * np.pi)
    states = dense(ts).T
    f1 = (states * np.exp(-1j * thetas)[:, None]).mean(axis=0)
    r = abs(np.dot(spec.v_ell_star, f1))
    return float(r), 2.0 * np.pi / period
