import dataclasses
import math

import numpy as np
import pytest

from ssm2d import presets
from ssm2d.errors import OrderError
from ssm2d.jets import JetMode, NumericMode
from ssm2d.expansion import (cartesian_evaluate, eta_term, eval_expansion,
                             expand, growth_phase_check,
                             invariance_residual_series,
                             tangential_first_harmonic_defect, to_cartesian)
from ssm2d.model import normalize_model
from ssm2d.spectral import analyze

from . import oracles


def test_linear_model_expansion_is_exact(linear):
    exp = expand(linear["model"], linear["spec"], 6, NumericMode(0.1))
    assert exp.Rpoly[1] == -1.0
    assert all(c == 0.0 for i, c in enumerate(exp.Rpoly) if i != 1)
    assert exp.Tpoly[0] == 1.0
    assert all(c == 0.0 for c in exp.Tpoly[1:])
    for n in range(2, 7):
        assert np.all(exp.W.coeffs[n] == 0.0)
    v = linear["spec"].v_ell
    assert np.allclose(exp.W.coeffs[1][2], v, rtol=0, atol=0)


def test_order_error(duffing):
    with pytest.raises(OrderError):
        expand(duffing["model"], duffing["spec"], 2, NumericMode(0.0))


def test_anchors_and_parity(duffing, expansions):
    exp = expansions(7, eps=0.1)
    assert exp.Rpoly[1] == -1.0
    assert exp.Tpoly[0] == 1.0
    assert all(exp.Rpoly[n] == 0.0 for n in range(0, 8, 2))
    assert all(exp.Tpoly[n] == 0.0 for n in range(1, 7, 2))
    assert exp.W.reality_defect() == 0.0
    assert exp.W.parity_defect() == 0.0
    assert tangential_first_harmonic_defect(exp) == 0.0


def test_backbone_curvature_matches_amplitude_relation(duffing, expansions):
    """T(r) = 1 + (3/8) a(r)^2 + O(r^4) for the unit-coefficient cubic."""
    exp = expansions(5, eps=0.0)
    v0 = abs(duffing["spec"].v_ell[0])
    d2 = complex(exp.Tpoly[2]).real
    assert d2 == pytest.approx((3.0 / 8.0) * (2.0 * v0) ** 2, rel=1e-12)


def test_eta_parity_and_symbolic_value(duffing, expansions):
    exp = expansions(3, eps=0.0)
    eta2 = eta_term(duffing["model"], exp, 2)
    for k, vec in eta2.items():
        assert np.all(np.abs(vec.astype(complex)) == 0.0)
    eta3 = eta_term(duffing["model"], exp, 3)
    rows = [r.astype(complex) for r in exp.W.coeffs]
    ref = oracles.symbolic_compose_slices(presets.duffing_pair_dict(),
                                          rows, 0.0, 3)
    # order-3 forcing is the pure nonlinearity slice at this order
    assert np.allclose(eta3[3].astype(complex), ref[3][3 + 3], atol=1e-12)
    assert np.allclose(eta3[1].astype(complex), ref[3][1 + 3], atol=1e-12)


def test_eta_linear_model(linear):
    exp = expand(linear["model"], linear["spec"], 5, NumericMode(0.1))
    eta = eta_term(linear["model"], exp, 2)
    for vec in eta.values():
        assert np.all(vec.astype(complex) == 0.0)


def test_jet_slope_matches_finite_difference(duffing):
    m, spec = duffing["model"], duffing["spec"]
    jet = expand(m, spec, 3, JetMode(1))
    h = 1e-4
    num = expand(m, spec, 3, NumericMode(h))
    num0 = expand(m, spec, 3, NumericMode(0.0))
    # radial-rate cubic coefficient: slope from the jet vs one-sided FD
    fd = (complex(num.Rpoly[3]).real - complex(num0.Rpoly[3]).real) / h
    assert abs(fd - jet.Rpoly[3].coeffs[1].real) < 1e-5
    # angular-frequency quartic coefficient, nontrivial eps dependence
    fd_t = (complex(num.Tpoly[4]).real - complex(num0.Tpoly[4]).real) / h
    assert abs(fd_t - jet.Tpoly[4].coeffs[1].real) < 1e-3
    assert np.allclose(
        [complex(c).real for c in num0.Rpoly],
        [c.coeffs[0].real for c in jet.Rpoly], rtol=0, atol=1e-15)


def test_numeric_at_zero_equals_jet_value(duffing):
    m, spec = duffing["model"], duffing["spec"]
    jet = expand(m, spec, 5, JetMode(1))
    num0 = expand(m, spec, 5, NumericMode(0.0))
    for n in range(6):
        a = num0.W.coeffs[n].astype(complex)
        b = np.vectorize(lambda j: complex(j.coeffs[0]))(jet.W.coeffs[n]) \
            if n > 0 else a
        assert np.allclose(a, b, rtol=0, atol=0)


def test_growth_phase_check(duffing, expansions):
    exp = expand(duffing["model"], duffing["spec"], 5, JetMode(1))
    recs = growth_phase_check(exp)
    assert recs[0]["growth"] == pytest.approx(1.0)
    assert recs[0]["phase"] == pytest.approx(0.0, abs=1e-14)
    for rec in recs[1:]:
        assert abs(rec["growth"]) < 1e-11
        assert abs(rec["phase"]) < 1e-11
        assert abs(rec["growth_slope"]) < 1e-11
        assert abs(rec["phase_slope"]) < 1e-11


def test_growth_phase_detects_planted_violation(duffing):
    exp = expand(duffing["model"], duffing["spec"], 5, JetMode(1))
    from ssm2d.jets import EpsPoly
    v = duffing["spec"].v_ell
    for i in range(4):
        exp.W.coeffs[3][4, i] = exp.W.coeffs[3][4, i] + EpsPoly.constant(
            1e-3 * v[i], 1)
    recs = growth_phase_check(exp)
    assert recs[2]["growth"] == pytest.approx(1e-3 * math.factorial(3),
                                              rel=1e-9)


def test_to_cartesian_roundtrip(duffing, expansions, rng):
    exp = expansions(4, eps=0.1)
    b = to_cartesian(exp)
    for (p, q), vec in b.items():
        assert np.allclose(b[(q, p)].astype(complex),
                           np.conj(vec.astype(complex)), rtol=0, atol=0)
    for _ in range(100):
        r = rng.uniform(0, 0.1)
        th = rng.uniform(0, 2 * np.pi)
        x, y = r * np.cos(th), r * np.sin(th)
        w_polar = eval_expansion(exp, r, th)
        w_cart = cartesian_evaluate(b, x, y)
        assert np.max(np.abs(w_cart.real - w_polar)) < 1e-10
        assert np.max(np.abs(w_cart.imag)) < 1e-12


def test_to_cartesian_linear(linear):
    exp = expand(linear["model"], linear["spec"], 4, NumericMode(0.0))
    b = to_cartesian(exp)
    nonzero = {k for k, v in b.items()
               if np.max(np.abs(v.astype(complex))) > 0}
    assert nonzero == {(1, 0), (0, 1)}


def test_eval_expansion_boundary_and_periodicity(duffing, expansions):
    exp = expansions(5, eps=0.1)
    assert np.all(eval_expansion(exp, 0.0, 1.234) == 0.0)
    a = eval_expansion(exp, 0.3, 0.0)
    b = eval_expansion(exp, 0.3, 2 * np.pi)
    assert np.max(np.abs(a - b)) < 1e-13
    lin_exp = expand(duffing["spec"] and presets.linear_pair() and
                     __import__("ssm2d.model", fromlist=["normalize_model"])
                     .normalize_model(presets.linear_pair())[0],
                     analyze(presets.linear_pair()), 3, NumericMode(0.0))
    v = analyze(presets.linear_pair()).v_ell
    got = eval_expansion(lin_exp, 0.3, np.pi / 2)
    want = 0.3 * 2 * np.real(v * 1j)
    assert np.allclose(got, want, atol=1e-14)


def test_reality_of_evaluations(duffing, expansions, rng):
    exp = expansions(7, eps=0.1)
    rs = rng.uniform(0, 0.3, size=1000)
    ths = rng.uniform(0, 2 * np.pi, size=1000)
    vals = exp.W.evaluate_many(rs, ths)
    assert np.max(np.abs(vals.imag)) < 1e-12
    for r in rs[:10]:
        assert isinstance(exp.eval_T(r), float)
        assert isinstance(exp.eval_R(r), float)


def test_equivariance_under_phase_rotation(duffing):
    """Rotating the mode pair rotates the chart, not the manifold."""
    spec = duffing["spec"]
    th0 = 0.7
    V = spec.right_vectors.copy()
    Vinv = spec.left_vectors.copy()
    V[:, spec.ell] *= np.exp(1j * th0)
    V[:, spec.ell + 1] *= np.exp(-1j * th0)
    Vinv[spec.ell] *= np.exp(-1j * th0)
    Vinv[spec.ell + 1] *= np.exp(1j * th0)
    spec_rot = dataclasses.replace(spec, right_vectors=V, left_vectors=Vinv,
                                   diag_transform=V)
    exp = expand(duffing["model"], spec, 5, NumericMode(0.1))
    exp_rot = expand(duffing["model"], spec_rot, 5, NumericMode(0.1))
    for r in (0.05, 0.1):
        for th in (0.0, 1.0, 2.5):
            a = eval_expansion(exp_rot, r, th)
            b = eval_expansion(exp, r, th + th0)
            assert np.max(np.abs(a - b)) < 1e-12


def test_conjugate_component_of_first_harmonic_is_required(duffing,
                                                           expansions):
    """The exact conservative orbit family fixes w[3][1] along the
    conjugate eigenvector; zeroing the whole vector would break
    invariance at fifth order."""
    exp = expansions(5, eps=0.0)
    spec = duffing["spec"]
    w31 = exp.W.coeffs[3][4].astype(complex)
    # Lindstedt value: x = a cos f + (a^3/32) cos 3f, omega = 1 + 3 a^2/8,
    # growth radius r = a (1 + omega)/4 gives the coefficient below
    v0 = abs(spec.v_ell[0])
    scale = (2.0 * v0) ** 3 / (2.0 * v0) / 4.0  # amplitude-map factor
    expected = -0.75 * np.conj(spec.v_ell) * (2.0 * v0 * v0)
    assert np.allclose(w31, expected, rtol=1e-10)


def test_residual_series_defect_small(duffing, expansions):
    for eps in (0.0, 0.1):
        exp = expansions(7, eps=eps)
        _, defect = invariance_residual_series(exp)
        assert defect < 1e-12
