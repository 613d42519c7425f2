"""Tail correction beyond the truncated expansion.

Writing the approximate manifold ``What`` (the expansion evaluated at the
problem's eps) and its invariance residual ``Res``, the correction ``C``
solves the reduced equation ::

    eps*Rle(r) D1C + T(r) D2C = A_eps C + [N(What + C) - N(What)] - Res

so that ``What + C`` solves the full invariance equation.  ``C`` is the
damping-scaled correction of the analysis multiplied by eps; storing it
unscaled keeps the conservative limit finite, where the equation loses
its radial term and the correction absorbs the truncation tail of the
expansion.  Contraction ratios and every cross-method comparison are
unchanged by this linear change of variable.

Two solution paths are provided:

* a Picard iteration of the characteristics integral operator
  (the object whose contraction yields existence and parameter
  continuity), restricted to eps >= eps_min where the oscillatory
  quadrature is affordable;
* a Chebyshev x Fourier collocation solve, which also covers eps = 0,
  where the problem decouples radius by radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve

from .errors import (DivergenceError, LeadingOrderError, NoConvergenceError,
                     QuadratureError, RegimeError, SingularCollocationError)
from .expansion import invariance_residual_series
from .grids import (cheb_interp_matrix, cheb_lobatto, fourier_diff_matrix,
                    fourier_grid, fourier_modes, loglog_slope,
                    values_to_coeffs)
from .model import eval_nonlinear, eval_nonlinear_jacobian

EPS_MIN_DEFAULT = 0.05
TAIL_TOL = 1e-12  # truncation level for the characteristic integral


def _eval_rows_shifted(rows, rho, shift, thetas, chunk=16384):
    """Evaluate a coefficient table at ``(rho[x], thetas[m] + shift[x])``.

    ``rows[n]`` is a (2n+1, dim) complex array.  Returns a complex array
    of shape (len(rho), len(thetas), dim).  The radial sum is a Horner
    recurrence per harmonic, the shift enters as a modulation, and the
    angular sum is one contraction with the phase matrix.
    """
    N = len(rows) - 1
    dim = rows[0].shape[-1] if rows[0].ndim > 1 else 1
    nk = 2 * N + 1
    C = np.zeros((N + 1, nk, dim), dtype=complex)
    for n, row in enumerate(rows):
        C[n, N - n:N + n + 1, :] = row
    ks = np.arange(-N, N + 1)
    E = np.exp(1j * np.outer(ks, thetas))
    out = np.empty((rho.size, thetas.size, dim), dtype=complex)
    for lo in range(0, rho.size, chunk):
        hi = min(lo + chunk, rho.size)
        r = rho[lo:hi]
        A = np.broadcast_to(C[N], (r.size, nk, dim)).copy()
        for n in range(N - 1, -1, -1):
            A *= r[:, None, None]
            A += C[n]
        A = A * np.exp(1j * np.outer(shift[lo:hi], ks))[:, :, None]
        out[lo:hi] = np.einsum("xkc,km->xmc", A, E)
    return out


def _series_rows(exp):
    return [row.astype(complex) for row in exp.W.coeffs]


@dataclass
class CorrectionField:
    """Tail correction on the tensor grid.

    ``coeffs[i, kidx, c]`` are Fourier coefficients at radial node ``i``
    for harmonic ``k = kidx - kmax``; ``factored`` marks the scaled
    representation ``C = r**sigma * V``.
    """
    gamma: float
    r_nodes: np.ndarray
    kmax: int
    coeffs: np.ndarray
    factored: bool = False
    sigma: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, problem):
        nk = 2 * problem.K_theta + 1
        return cls(problem.gamma, problem.r_nodes, problem.K_theta,
                   np.zeros((problem.M_r, nk, problem.dim), dtype=complex),
                   sigma=problem.sigma)

    @classmethod
    def from_values(cls, problem, values):
        coeffs = values_to_coeffs(values.astype(complex), axis=1)
        return cls(problem.gamma, problem.r_nodes, problem.K_theta, coeffs,
                   sigma=problem.sigma)

    def values(self, thetas=None):
        """Real grid values (M_r, n_theta, dim)."""
        if thetas is None:
            thetas = fourier_grid(self.kmax)
        ks = fourier_modes(self.kmax)
        E = np.exp(1j * np.outer(ks, thetas))
        vals = np.einsum("ikc,km->imc", self._plain_coeffs(), E)
        return vals.real

    def _plain_coeffs(self):
        if not self.factored:
            return self.coeffs
        scale = self.r_nodes.astype(float) ** self.sigma
        return self.coeffs * scale[:, None, None]

    def reality_defect(self):
        c = self.coeffs
        return float(np.max(np.abs(c - np.conj(c[:, ::-1, :]))))

    def sup_diff(self, other):
        return float(np.max(np.abs(self.values() - other.values())))

    def sup(self):
        return float(np.max(np.abs(self.values())))

    def to_factored(self):
        """Scaled representation; the origin value extends by interpolation."""
        if self.factored:
            return self
        r = self.r_nodes
        pos = r > 0
        scaled = np.zeros_like(self.coeffs)
        scaled[pos] = self.coeffs[pos] / (r[pos, None, None] ** self.sigma)
        if np.any(~pos):
            P = cheb_interp_matrix(r[pos], np.array([0.0]))
            origin = np.einsum("j,jkc->kc", P[0], scaled[pos])
            scaled[~pos] = origin
        return CorrectionField(self.gamma, self.r_nodes, self.kmax, scaled,
                               factored=True, sigma=self.sigma,
                               meta=dict(self.meta))

    def unfactored(self):
        if not self.factored:
            return self
        return CorrectionField(self.gamma, self.r_nodes, self.kmax,
                               self._plain_coeffs(), factored=False,
                               sigma=self.sigma, meta=dict(self.meta))


def weighted_norm(fld, delta, sigma, min_s=1.0 / 64.0):
    """Exponentially harmonic-weighted, radially scaled sup norm.

    ``sup_k sup_s exp(delta |k|) |s**-sigma a_k(gamma s) / gamma|`` over
    the real radial nodes with ``s >= min_s``; the cutoff avoids the
    0/0 amplification of roundoff at the innermost nodes.
    """
    f = fld.unfactored()
    s = f.r_nodes / f.gamma
    keep = s >= min_s
    ks = fourier_modes(f.kmax)
    w = np.exp(delta * np.abs(ks))
    mags = np.abs(f.coeffs[keep]) * w[None, :, None]
    mags = mags / (s[keep, None, None] ** sigma) / f.gamma
    return float(np.max(mags))


# -- problem construction ----------------------------------------------------------


@dataclass
class CorrectionProblem:
    """Grids, forcing and cached machinery for one correction solve."""
    model: object
    spec: object
    exp: object
    gamma: float
    eps: float
    sigma: int
    M_r: int
    K_theta: int
    r_nodes: np.ndarray
    Dr: np.ndarray
    thetas: np.ndarray
    Dtheta: np.ndarray
    res_values: np.ndarray          # unscaled residual of What on the grid
    fhat_values: np.ndarray         # residual / eps for eps > 0, else residual
    res_rows: list
    what_rows: list
    fhat_scale_slope: float
    eps_min: float = EPS_MIN_DEFAULT
    tau_max: float = 0.0
    substep: float = 0.0
    meta: dict = field(default_factory=dict)
    _flow: object = None
    _picard_pre: dict = None
    _grid_eval_cache: dict = None

    @property
    def dim(self):
        return self.model.dim

    def refined(self, factor=2):
        return make_problem(self.model, self.spec, self.exp, self.gamma,
                            self.eps, M_r=factor * self.M_r,
                            K_theta=factor * self.K_theta,
                            eps_min=self.eps_min)

    # grid values of the truncated manifold and its derivatives
    def grid_eval(self):
        if self._grid_eval_cache is None:
            R, TH = np.meshgrid(self.r_nodes, self.thetas, indexing="ij")
            rows = self.what_rows
            what = _eval_series(rows, R.ravel(), TH.ravel()).real
            shape = (self.M_r, self.thetas.size, self.dim)
            d1 = _eval_series_d1(rows, R.ravel(), TH.ravel()).real
            d2 = _eval_series_d2(rows, R.ravel(), TH.ravel()).real
            self._grid_eval_cache = {
                "what": what.reshape(shape),
                "d1": d1.reshape(shape),
                "d2": d2.reshape(shape),
            }
        return self._grid_eval_cache

    def rle_at(self, r):
        out = np.zeros_like(np.asarray(r, dtype=float))
        rn = np.ones_like(out)
        for c in self.exp.Rpoly:
            out += complex(c).real * rn
            rn = rn * r
        return out

    def t_at(self, r):
        out = np.zeros_like(np.asarray(r, dtype=float))
        rn = np.ones_like(out)
        for c in self.exp.Tpoly:
            out += complex(c).real * rn
            rn = rn * r
        return out


def _eval_series(rows, r, th):
    out = np.zeros((r.size, rows[0].shape[-1]), dtype=complex)
    rn = np.ones_like(r)
    for n, row in enumerate(rows):
        ks = np.arange(-n, n + 1)
        E = np.exp(1j * np.outer(th, ks))
        out += rn[:, None] * (E @ row)
        rn = rn * r
    return out


def _eval_series_d1(rows, r, th):
    out = np.zeros((r.size, rows[0].shape[-1]), dtype=complex)
    rn = np.ones_like(r)
    for n in range(1, len(rows)):
        ks = np.arange(-n, n + 1)
        E = np.exp(1j * np.outer(th, ks))
        out += (n * rn)[:, None] * (E @ rows[n])
        rn = rn * r
    return out


def _eval_series_d2(rows, r, th):
    out = np.zeros((r.size, rows[0].shape[-1]), dtype=complex)
    rn = np.ones_like(r)
    for n, row in enumerate(rows):
        ks = np.arange(-n, n + 1)
        E = np.exp(1j * np.outer(th, ks))
        out += rn[:, None] * (E @ ((1j * ks)[:, None] * row))
        rn = rn * r
    return out


def make_problem(model, spec, exp, gamma, eps, M_r=24, K_theta=12,
                 eps_min=EPS_MIN_DEFAULT):
    """Assemble the correction problem on the tensor grid.

    The forcing is the exact residual series of the truncated expansion
    evaluated on the grid.  Its radial decay is fitted on the nodes with
    ``r >= gamma / 64``; a slope below ``sigma - 0.5`` means the
    expansion did not actually solve the equation through the split
    order and raises :class:`LeadingOrderError`.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    if exp.eps_mode.kind != "numeric" or abs(exp.eps_mode.eps - eps) > 1e-15:
        raise ValueError("correction needs a numeric-mode expansion at the "
                         "problem's eps")
    if exp.order < spec.sigma - 1:
        raise ValueError("expansion order below the split order")

    r_nodes, Dr = cheb_lobatto(M_r, gamma)
    thetas = fourier_grid(K_theta)
    Dtheta = fourier_diff_matrix(K_theta)

    res_series, defect = invariance_residual_series(exp)
    res_rows = [row.astype(complex) for row in res_series.coeffs]
    R, TH = np.meshgrid(r_nodes, thetas, indexing="ij")
    res_vals = _eval_series(res_rows, R.ravel(), TH.ravel())
    res_vals = res_vals.real.reshape(M_r, thetas.size, model.dim)

    sigma = spec.sigma
    pos = r_nodes >= gamma / 64.0
    sups = np.max(np.abs(res_vals), axis=(1, 2))
    slope = loglog_slope(r_nodes[pos], sups[pos])
    allzero = float(np.max(sups)) == 0.0
    if not allzero and not math.isnan(slope) and slope < sigma - 0.5:
        raise LeadingOrderError(
            f"residual forcing decays like r^{slope:.2f}, expected at least "
            f"r^{sigma}; the expansion does not solve the split orders")

    fhat = res_vals if eps == 0.0 else res_vals / eps

    # tail cut where the transported integrand drops below 1e-12: the
    # correction inherits the leading radial order of the forcing, which
    # the parity structure often pushes above the smoothness order
    aleph = spec.aleph
    n_min = sigma
    for n, row in enumerate(res_rows):
        if row.size and float(np.max(np.abs(row))) > 0.0:
            n_min = max(sigma, n)
            break
    tau_max = 12.0 * math.log(10.0) / max(n_min - aleph, 1e-6)
    exp_num = exp
    what_rows = _series_rows(exp_num)

    tmax = float(np.max(np.abs(
        [sum(complex(c).real * gamma ** n for n, c in enumerate(exp.Tpoly))]
    )))
    omega_max = float(np.max(np.abs(spec.omegas)))
    substep = eps * math.pi / (4.0 * (K_theta * max(tmax, 1.0) + omega_max)) \
        if eps > 0 else 0.0

    return CorrectionProblem(
        model=model, spec=spec, exp=exp_num, gamma=gamma, eps=eps,
        sigma=sigma, M_r=M_r, K_theta=K_theta, r_nodes=r_nodes, Dr=Dr,
        thetas=thetas, Dtheta=Dtheta, res_values=res_vals, fhat_values=fhat,
        res_rows=res_rows, what_rows=what_rows,
        fhat_scale_slope=float(slope) if not allzero else float("nan"),
        eps_min=eps_min, tau_max=tau_max, substep=substep,
        meta={"residual_slice_defect": defect})


# -- collocation solve --------------------------------------------------------------


def _delta_n(problem, what, u):
    """Pointwise N(What + u) - N(What) on flattened points."""
    return (eval_nonlinear(problem.model, what + u, problem.eps)
            - eval_nonlinear(problem.model, what, problem.eps))


def _reduced_residual(problem, u_vals):
    """G(u) of the reduced equation on the grid (wants G = 0)."""
    ge = problem.grid_eval()
    what = ge["what"].reshape(-1, problem.dim)
    eps = problem.eps
    rle = problem.rle_at(problem.r_nodes)
    tvals = problem.t_at(problem.r_nodes)
    A = problem.model.a_matrix(eps)
    du_r = np.einsum("ij,jmc->imc", problem.Dr, u_vals)
    du_t = np.einsum("mn,inc->imc", problem.Dtheta, u_vals)
    lin = eps * rle[:, None, None] * du_r + tvals[:, None, None] * du_t \
        - u_vals @ A.T
    dn = _delta_n(problem, what, u_vals.reshape(-1, problem.dim))
    return lin - dn.reshape(u_vals.shape) + problem.res_values


def check_collocation_divisors(problem, margin=0.025):
    """Normal-direction divisors of the decoupled solves.

    Tangential divisors at k = +-1 vanish like T(r) - 1 near the origin
    by construction; they are part of the formulation, not a resonance,
    so only directions off the distinguished pair are screened.
    """
    spec = problem.spec
    tvals = problem.t_at(problem.r_nodes)
    ks = fourier_modes(problem.K_theta)
    for j in range(problem.dim):
        if j in (spec.ell, spec.ell + 1):
            continue
        a_j, w_j = spec.eigenvalues[j]
        for i, r in enumerate(problem.r_nodes):
            gaps = np.abs(1j * ks * tvals[i] - (problem.eps * a_j + 1j * w_j))
            kbad = int(np.argmin(gaps))
            if gaps[kbad] < margin:
                raise SingularCollocationError(
                    f"divisor |i k T(r) - lambda_{j}| = {gaps[kbad]:.3e} "
                    f"below margin {margin:g} at (k={ks[kbad]}, j={j}, "
                    f"r={r:.6g})")


def _solve_collocation_once(problem, guess, tol, max_iter, linear_only=False,
                            gtol=1e-12):
    """Chord Newton on the collocated system.

    The operator carries a family of nearly null reparametrization
    directions (radius-dependent phase shifts of the manifold), so once
    the residual reaches the rounding floor, further steps only amplify
    noise along them.  Iteration therefore stops on the residual, keeping
    the best iterate, rather than on the step size alone.
    """
    check_collocation_divisors(problem)
    Mr, nth, dim = problem.M_r, problem.thetas.size, problem.dim
    ge = problem.grid_eval()
    what_flat = ge["what"].reshape(-1, dim)
    u = np.zeros((Mr, nth, dim)) if guess is None else guess.values().copy()
    origin = int(np.argmin(problem.r_nodes))  # r = 0 node

    if problem.eps == 0.0:
        # radial term vanishes; the problem decouples per radial node
        for i in range(Mr):
            if i == origin:
                u[i] = 0.0
                continue
            u[i] = _node_newton(problem, i, u[i], tol, max_iter, linear_only,
                                gtol)
        return CorrectionField.from_values(problem, u)

    # The tangential radial solves admit an analytic homogeneous branch
    # growing like r, invisible to the residual; collocating the scaled
    # variable v = C / r**2 removes it from the ansatz (its counterpart
    # ~ 1/r is not a polynomial), which pins the same solution as the
    # decaying characteristics integral.
    eps = problem.eps
    r = problem.r_nodes
    rle = problem.rle_at(r)
    tvals = problem.t_at(r)
    A = problem.model.a_matrix(eps)
    P = Mr * nth
    rle_over_r = np.empty(Mr)
    pos = r > 0
    rle_over_r[pos] = rle[pos] / r[pos]
    rle_over_r[~pos] = complex(problem.exp.Rpoly[1]).real
    r2 = np.where(pos, r * r, 1.0)

    J = (np.kron(np.diag(eps * rle) @ problem.Dr, np.eye(nth * dim))
         + np.kron(np.diag(2.0 * eps * rle_over_r), np.eye(nth * dim))
         + np.kron(np.diag(tvals), np.kron(problem.Dtheta, np.eye(dim)))
         - np.kron(np.eye(P), A))
    if not linear_only:
        dn0 = eval_nonlinear_jacobian(problem.model,
                                      what_flat + u.reshape(-1, dim), eps)
        Jv = J.reshape(P, dim, P, dim)
        Jv[np.arange(P), :, np.arange(P), :] -= dn0
    lu = lu_factor(J)

    def gv(v):
        """Residual of the scaled equation; rows at the origin use the
        limit form, where the forcing vanishes."""
        du_r = np.einsum("ij,jmc->imc", problem.Dr, v)
        du_t = np.einsum("mn,inc->imc", problem.Dtheta, v)
        out = (eps * rle[:, None, None] * du_r
               + 2.0 * eps * rle_over_r[:, None, None] * v
               + tvals[:, None, None] * du_t - v @ A.T)
        c_vals = (r2[:, None, None] * v)
        if linear_only:
            rhs = -problem.res_values
        else:
            dn = _delta_n(problem, what_flat, c_vals.reshape(-1, dim))
            rhs = dn.reshape(v.shape) - problem.res_values
        rhs = rhs / r2[:, None, None]
        rhs[~pos] = 0.0
        return out - rhs

    v = u / r2[:, None, None]
    v[~pos] = 0.0
    best_v, best_g = v.copy(), float("inf")
    prev_g = float("inf")
    for it in range(max_iter):
        G = gv(v)
        gnorm = float(np.max(np.abs(G)))
        if gnorm < best_g:
            best_g, best_v = gnorm, v.copy()
        if gnorm < gtol or (it > 0 and gnorm > 0.3 * prev_g):
            break
        prev_g = gnorm
        step = lu_solve(lu, -G.ravel()).reshape(v.shape)
        v = v + step
        if float(np.max(np.abs(step))) < tol:
            best_v, best_g = v, gnorm
            break
    else:
        raise NoConvergenceError(
            f"collocation Newton did not converge in {max_iter} iterations "
            f"(best residual {best_g:.3e})")
    c_vals = r2[:, None, None] * best_v
    c_vals[~pos] = 0.0
    fld = CorrectionField.from_values(problem, c_vals)
    fld.meta["newton_residual"] = best_g
    return fld


def _linear_residual(problem, u_vals):
    eps = problem.eps
    rle = problem.rle_at(problem.r_nodes)
    tvals = problem.t_at(problem.r_nodes)
    A = problem.model.a_matrix(eps)
    du_r = np.einsum("ij,jmc->imc", problem.Dr, u_vals)
    du_t = np.einsum("mn,inc->imc", problem.Dtheta, u_vals)
    return (eps * rle[:, None, None] * du_r + tvals[:, None, None] * du_t
            - u_vals @ A.T + problem.res_values)


def _node_newton(problem, i, u0, tol, max_iter, linear_only, gtol=1e-12):
    """Newton solve of the single-radius problem with all harmonics coupled."""
    nth, dim = problem.thetas.size, problem.dim
    ge = problem.grid_eval()
    what = ge["what"][i]
    tval = problem.t_at(problem.r_nodes[i:i + 1])[0]
    A = problem.model.a_matrix(problem.eps)
    J = (tval * np.kron(problem.Dtheta, np.eye(dim))
         - np.kron(np.eye(nth), A))
    u = u0.copy()
    if not linear_only:
        dn0 = eval_nonlinear_jacobian(problem.model, what + u, problem.eps)
        Jv = J.reshape(nth, dim, nth, dim)
        Jv[np.arange(nth), :, np.arange(nth), :] -= dn0
    lu = lu_factor(J)
    best_u, best_g = u.copy(), float("inf")
    prev_g = float("inf")
    for it in range(max_iter):
        du_t = np.einsum("mn,nc->mc", problem.Dtheta, u)
        lin = tval * du_t - u @ A.T + problem.res_values[i]
        if not linear_only:
            lin -= _delta_n(problem, what, u)
        gnorm = float(np.max(np.abs(lin)))
        if gnorm < best_g:
            best_g, best_u = gnorm, u.copy()
        if gnorm < gtol or gnorm > 0.3 * prev_g:
            return best_u
        prev_g = gnorm
        step = lu_solve(lu, -lin.ravel()).reshape(u.shape)
        u = u + step
        if float(np.max(np.abs(step))) < tol:
            return u
        if linear_only and it >= 1:
            return u
    raise NoConvergenceError(
        f"node Newton at r={problem.r_nodes[i]:.6g} did not converge")


def reduced_residual_sup(problem, fld):
    """Sup of the reduced-equation residual of a field on the grid."""
    G = _reduced_residual(problem, fld.values(problem.thetas))
    origin = int(np.argmin(problem.r_nodes))
    G[origin] = 0.0
    return float(np.max(np.abs(G)))


def combined_residual_sup(problem, fld, n_theta_factor=2):
    """Sup of the full invariance residual of ``What + C`` on the grid.

    The angular grid is refined to expose content beyond the collocation
    band; radial values stay on the nodes where the field lives.
    """
    nth = n_theta_factor * problem.thetas.size
    thetas = np.arange(nth) * (2.0 * np.pi / nth)
    ks = fourier_modes(problem.K_theta)
    E = np.exp(1j * np.outer(ks, thetas))
    vals = np.einsum("ikc,km->imc", fld._plain_coeffs(), E).real
    dr_vals = np.einsum("ij,jkc->ikc", problem.Dr, fld._plain_coeffs())
    d1c = np.einsum("ikc,km->imc", dr_vals, E).real
    d2c = np.einsum("ikc,km->imc",
                    fld._plain_coeffs() * (1j * ks)[None, :, None], E).real

    R, TH = np.meshgrid(problem.r_nodes, thetas, indexing="ij")
    rows = problem.what_rows
    what = _eval_series(rows, R.ravel(), TH.ravel()).real
    d1w = _eval_series_d1(rows, R.ravel(), TH.ravel()).real
    d2w = _eval_series_d2(rows, R.ravel(), TH.ravel()).real
    shape = (problem.M_r, nth, problem.dim)

    x = what.reshape(shape) + vals
    d1 = d1w.reshape(shape) + d1c
    d2 = d2w.reshape(shape) + d2c
    eps = problem.eps
    rvec = eps * problem.rle_at(problem.r_nodes)
    tvec = problem.t_at(problem.r_nodes)
    A = problem.model.a_matrix(eps)
    nl = eval_nonlinear(problem.model, x.reshape(-1, problem.dim), eps)
    res = (rvec[:, None, None] * d1 + tvec[:, None, None] * d2
           - x @ A.T - nl.reshape(shape))
    return float(np.max(np.abs(res)))


def solve_collocation(problem, guess=None, tol=1e-11, max_iter=50,
                      residual_tol=1e-9, max_refine=2):
    """Newton collocation solve with automatic grid doubling.

    The converged field must satisfy the reduced equation to
    ``residual_tol`` on its own grid; if not, the grids are doubled and
    the solve repeated, at most ``max_refine`` times.
    """
    prob = problem
    for attempt in range(max_refine + 1):
        fld = _solve_collocation_once(prob, guess, tol, max_iter)
        resid = reduced_residual_sup(prob, fld)
        fld.meta["reduced_residual"] = resid
        fld.meta["grid"] = (prob.M_r, prob.K_theta)
        if resid < residual_tol:
            fld.meta["problem"] = prob
            return fld
        if attempt < max_refine:
            prob = prob.refined()
            guess = None
    raise NoConvergenceError(
        f"collocation residual {resid:.3e} still above {residual_tol:g} "
        f"after {max_refine} grid doublings")


def linear_response(problem):
    """Solution of the linearized problem (nonlinear increment dropped).

    This is the first Picard iterate of the collocation path and the
    discrete counterpart of the integral operator applied to zero.
    """
    return _solve_collocation_once(problem, None, 1e-12, 8, linear_only=True)


# -- characteristics and the integral operator ------------------------------------------


@dataclass
class FlowCache:
    """Conjugate flow samples on the quadrature grid.

    ``rho[t, i]`` solves ``drho/dtau = Rle(rho)`` from ``r_i``;
    ``phi[t, i]`` accumulates the angular speed along it, so the angle
    characteristic is ``theta + phi / eps``.
    """
    taus: np.ndarray
    wts: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    c_rho: float
    substep: float

    def monotone(self):
        return bool(np.all(np.diff(self.rho, axis=0) <= 1e-12))


def build_flow_cache(problem, substep=None):
    if substep is None:
        substep = problem.substep
    tau_max = problem.tau_max
    # Gauss-Legendre panels sized so node spacing stays below the substep
    nodes_per_panel = 12
    width = min(nodes_per_panel * substep, tau_max / 8.0)
    npanels = max(8, int(math.ceil(tau_max / width)))
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes_per_panel)
    edges = np.linspace(0.0, tau_max, npanels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    taus = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    wts = (half[:, None] * gl_w[None, :]).ravel()

    r0 = problem.r_nodes
    m = r0.size

    def rhs(t, y):
        rho = y[:m]
        return np.concatenate([problem.rle_at(rho), problem.t_at(rho)])

    y0 = np.concatenate([r0, np.zeros(m)])
    sol = solve_ivp(rhs, (0.0, tau_max), y0, method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    if not sol.success:
        raise QuadratureError(f"conjugate flow integration failed: {sol.message}")
    Y = sol.sol(taus)
    rho = np.clip(Y[:m].T, 0.0, problem.gamma)
    phi = Y[m:].T

    pos = r0 > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = rho[:, pos] / r0[None, pos]
        up = np.max(ratio * np.exp(taus)[:, None])
        dn = np.max(np.exp(-taus)[:, None] / np.maximum(ratio, 1e-300))
    c_rho = float(max(up, dn))
    return FlowCache(taus=taus, wts=wts, rho=rho, phi=phi, c_rho=c_rho,
                     substep=substep)


def _picard_precompute(problem, flow):
    """Iterate-independent pieces of the integral operator.

    Caches the truncated-manifold values along the characteristics
    (restricted to the state components the nonlinearity reads) and the
    forcing contribution, which equals the operator applied to the zero
    field.
    """
    spec = problem.spec
    eps = problem.eps
    V = spec.right_vectors
    Vinv = spec.left_vectors
    alphas, omegas = spec.alphas, spec.omegas
    taus = flow.taus
    weights = flow.wts[:, None] * np.exp(
        np.outer(-taus, alphas) - 1j * np.outer(taus, omegas) / eps)

    needed = sorted({i for t in problem.model.terms
                     for i, e in enumerate(t.exponents) if e}
                    | {t.target for t in problem.model.terms})
    nt, m = taus.size, problem.M_r
    nth = problem.thetas.size
    what_needed = np.empty((nt, m, nth, len(needed)))
    F_eig = np.zeros((m, nth, problem.dim), dtype=complex)

    chunk = max(1, 200000 // (m * nth) * 64)
    for lo in range(0, nt, chunk):
        hi = min(lo + chunk, nt)
        rho = flow.rho[lo:hi].ravel()
        shift = (flow.phi[lo:hi] / eps).ravel()
        wvals = _eval_rows_shifted(problem.what_rows, rho, shift,
                                   problem.thetas).real
        wvals = wvals.reshape(hi - lo, m, nth, problem.dim)
        what_needed[lo:hi] = wvals[..., needed]
        rvals = _eval_rows_shifted(problem.res_rows, rho, shift,
                                   problem.thetas).real
        rvals = rvals.reshape(hi - lo, m, nth, problem.dim)
        g = np.einsum("jc,timc->timj", Vinv, rvals)
        F_eig += np.einsum("tj,timj->imj", weights[lo:hi], g)
    # T(0) = -(1/eps) int w (0 - Res) = +(1/eps) int w Res
    F_term = np.einsum("cj,imj->imc", V, F_eig).real / eps
    return {"weights": weights, "needed": needed,
            "what_needed": what_needed, "F_term": F_term}


def ensure_picard(problem, qtol=1e-9, max_refine=2):
    """Build and validate the quadrature; refine the substep if needed.

    The forcing response (the operator applied to zero) is checked
    against the independently computed collocation linear response; on
    disagreement the substep is halved, at most ``max_refine`` times.
    """
    if problem.eps < problem.eps_min:
        raise RegimeError(
            f"Picard path needs eps >= {problem.eps_min:g}; "
            f"got {problem.eps:g} (use the collocation path)")
    if problem._picard_pre is not None:
        return
    reference = linear_response(problem).values(problem.thetas)
    scale = max(float(np.max(np.abs(reference))), 1e-30)
    substep = problem.substep
    for attempt in range(max_refine + 1):
        flow = build_flow_cache(problem, substep)
        pre = _picard_precompute(problem, flow)
        diff = float(np.max(np.abs(pre["F_term"] - reference)))
        if diff <= max(qtol, 1e-6 * scale):
            problem._flow = flow
            problem._picard_pre = pre
            pre["validation_diff"] = diff
            return
        substep /= 2.0
    raise QuadratureError(
        f"quadrature refinement exhausted; forcing response still differs "
        f"from the collocation linear response by {diff:.3e}")


def picard_step(problem, fld):
    """One application of the characteristics integral operator."""
    ensure_picard(problem)
    flow = problem._flow
    pre = problem._picard_pre
    spec = problem.spec
    eps = problem.eps
    V, Vinv = spec.right_vectors, spec.left_vectors
    taus = flow.taus
    nt, m, nth = taus.size, problem.M_r, problem.thetas.size
    dim = problem.dim
    needed = pre["needed"]
    ks = fourier_modes(problem.K_theta)
    E = np.exp(1j * np.outer(ks, problem.thetas))

    C_eig = np.zeros((m, nth, dim), dtype=complex)
    coeffs = fld.unfactored().coeffs  # (m, nk, dim)
    chunk = max(1, 200000 // (m * nth) * 64)
    model = problem.model
    for lo in range(0, nt, chunk):
        hi = min(lo + chunk, nt)
        nb = hi - lo
        rho = flow.rho[lo:hi]                     # (nb, m)
        shift = flow.phi[lo:hi] / eps
        P = cheb_interp_matrix(problem.r_nodes, rho.ravel())
        a = P @ coeffs.reshape(m, -1)
        a = a.reshape(nb * m, ks.size, dim)
        a = a * np.exp(1j * shift.ravel()[:, None] * ks[None, :])[:, :, None]
        cvals = np.einsum("xkc,km->xmc", a, E).real
        cvals = cvals.reshape(nb, m, nth, dim)

        wfull = np.zeros((nb, m, nth, dim))
        wfull[..., needed] = pre["what_needed"][lo:hi]
        x0 = wfull.reshape(-1, dim)
        dn = (eval_nonlinear(model, x0 + cvals.reshape(-1, dim), eps)
              - eval_nonlinear(model, x0, eps))
        dn = dn.reshape(nb, m, nth, dim)
        g = np.einsum("jc,timc->timj", Vinv, dn)
        C_eig += np.einsum("tj,timj->imj", pre["weights"][lo:hi], g)
    # -(1/eps) int w * DeltaN, plus the cached forcing response
    vals = -np.einsum("cj,imj->imc", V, C_eig).real / eps + pre["F_term"]
    origin = int(np.argmin(problem.r_nodes))
    vals[origin] = 0.0
    return CorrectionField.from_values(problem, vals)


def solve_picard(problem, tol=1e-10, max_iter=60):
    """Iterate the integral operator from zero to its fixed point."""
    fld = CorrectionField.zeros(problem)
    for it in range(max_iter):
        nxt = picard_step(problem, fld)
        diff = nxt.sup_diff(fld)
        fld = nxt
        if diff < tol:
            fld.meta["picard_iters"] = it + 1
            return fld
    raise NoConvergenceError(
        f"Picard iteration stalled above {tol:g} after {max_iter} steps "
        f"(last difference {diff:.3e})")


def contraction_estimate(problem, n_iters=8, delta=0.5):
    """Observed contraction rate of the operator in the weighted norm.

    Iterates from zero and returns ``(q_observed, difference norms)``
    where ``q_observed`` is the largest ratio of successive difference
    norms past the initial transient.  A ratio above 1.5 raises
    :class:`DivergenceError` (reduce gamma).
    """
    if problem.eps == 0.0:
        return _contraction_estimate_cons(problem, n_iters, delta)
    fld = CorrectionField.zeros(problem)
    prev = None
    norms = []
    for _ in range(n_iters):
        nxt = picard_step(problem, fld)
        dvals = nxt.values() - fld.values()
        dfld = CorrectionField(problem.gamma, problem.r_nodes,
                               problem.K_theta,
                               values_to_coeffs(dvals.astype(complex), axis=1),
                               sigma=problem.sigma)
        norms.append(weighted_norm(dfld, delta, problem.sigma))
        fld = nxt
        if prev is not None and norms[-1] > 1.5 * prev:
            raise DivergenceError(
                f"difference norms grow (ratio {norms[-1] / prev:.3f} > 1.5); "
                "reduce gamma")
        prev = norms[-1]
    return _observed_ratio(norms), norms


def _observed_ratio(norms):
    """Largest ratio of successive difference norms past the first,
    ignoring pairs that already sit at the rounding floor."""
    if not norms or norms[0] == 0.0:
        return 0.0
    floor = max(1e-13 * norms[0], 1e-15)
    ratios = [norms[i + 1] / norms[i] for i in range(len(norms) - 1)
              if norms[i] > floor and norms[i + 1] > floor]
    if not ratios:
        return 0.0
    return float(max(ratios[1:]) if len(ratios) > 1 else ratios[0])


def _contraction_estimate_cons(problem, n_iters, delta):
    """Conservative-limit variant: per-node linear splitting iteration."""
    check_collocation_divisors(problem)
    ge = problem.grid_eval()
    what = ge["what"]
    tvals = problem.t_at(problem.r_nodes)
    A = problem.model.a_matrix(0.0)
    nth, dim = problem.thetas.size, problem.dim
    origin = int(np.argmin(problem.r_nodes))
    lus = {}
    for i in range(problem.M_r):
        if i == origin:
            continue
        J = tvals[i] * np.kron(problem.Dtheta, np.eye(dim)) \
            - np.kron(np.eye(nth), A)
        lus[i] = lu_factor(J)
    u = np.zeros((problem.M_r, nth, dim))
    norms = []
    prev = None
    for _ in range(n_iters):
        rhs = _delta_n(problem, what.reshape(-1, dim),
                       u.reshape(-1, dim)).reshape(u.shape) \
            - problem.res_values
        nxt = np.zeros_like(u)
        for i in range(problem.M_r):
            if i == origin:
                continue
            nxt[i] = lu_solve(lus[i], rhs[i].ravel()).reshape(nth, dim)
        dvals = nxt - u
        dfld = CorrectionField(problem.gamma, problem.r_nodes,
                               problem.K_theta,
                               values_to_coeffs(dvals.astype(complex), axis=1),
                               sigma=problem.sigma)
        norms.append(weighted_norm(dfld, delta, problem.sigma))
        u = nxt
        if prev is not None and prev > 0 and norms[-1] > 1.5 * prev:
            raise DivergenceError(
                f"difference norms grow (ratio {norms[-1] / prev:.3f} > 1.5); "
                "reduce gamma")
        prev = norms[-1]
    return _observed_ratio(norms), norms
