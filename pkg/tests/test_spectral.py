import numpy as np
import pytest

from ssm2d import presets
from ssm2d.errors import NotRealError, NoSpectralGapError
from ssm2d.model import model_from_dict, normalize_model
from ssm2d.spectral import (WStarProjector, analyze, check_assumptions,
                            make_wstar)

from . import oracles


def test_analyze_reference_values():
    m = presets.duffing_pair()
    spec = analyze(m)
    assert np.allclose(sorted(spec.alphas), [-1.5, -1.5, -0.5, -0.5])
    assert np.allclose(np.sort(np.abs(spec.omegas)),
                       [1, 1, np.sqrt(2), np.sqrt(2)])
    assert spec.aleph == pytest.approx(3.0)
    assert spec.sigma == 4
    assert spec.ell == 0


def test_biorthonormality(duffing):
    spec = duffing["spec"]
    prod = spec.left_vectors @ spec.right_vectors
    assert np.max(np.abs(prod - np.eye(4))) < 1e-12


def test_reconstruction_at_sampled_eps(duffing):
    m, spec = duffing["model"], duffing["spec"]
    lam = np.array([a + 0j for a, _ in spec.eigenvalues])
    for eps in (0.0, m.eps_max / 2, m.eps_max):
        L = np.diag([eps * a + 1j * w for a, w in spec.eigenvalues])
        rebuilt = spec.diag_transform @ L @ spec.left_vectors
        assert np.max(np.abs(rebuilt - m.a_matrix(eps))) < 1e-10


def test_aleph_invariant_under_time_rescale():
    m = presets.duffing_pair()
    spec0 = analyze(m)
    norm, _ = normalize_model(m)
    spec1 = analyze(norm)
    assert abs(spec0.aleph - spec1.aleph) < 1e-12


def test_sigma_cap():
    d = presets.linear_pair_dict()
    d["delta"] = np.kron(np.diag([-1.0, -40.0]), np.eye(2)).tolist()
    m = model_from_dict(d)
    with pytest.raises(NoSpectralGapError):
        analyze(m, sigma_cap=16)


def test_assumptions_pass_on_reference(duffing):
    rep = check_assumptions(duffing["model"], duffing["spec"],
                            eps_grid=[0.0, 0.1, 0.25], res_margin=0.1)
    assert rep.passed
    by_name = {c.name: c for c in rep}
    assert by_name["nonresonant"].margin == pytest.approx(np.sqrt(2) - 1)


def test_integer_normal_frequency_fails_assumption_seven():
    d = presets.linear_pair_dict()
    d["omega"] = [[0, 1, 0, 0], [-1, 0, 0, 0],
                  [0, 0, 0, 1], [0, 0, -4, 0]]  # second frequency 2
    m = model_from_dict(d)
    norm, _ = normalize_model(m)
    spec = analyze(norm)
    rep = check_assumptions(norm, spec)
    by_name = {c.name: c for c in rep}
    assert not by_name["nonresonant"].passed
    assert not rep.passed


def test_perturbed_conserved_quantity_fails():
    d = presets.duffing_pair_dict()
    for entry in d["conserved"]:
        if entry["exponents"] == [4, 0, 0, 0]:
            entry["coefficient"] = 0.3
    m = model_from_dict(d)
    norm, _ = normalize_model(m)
    spec = analyze(norm)
    rep = check_assumptions(norm, spec)
    by_name = {c.name: c for c in rep}
    assert not by_name["conserved_identity"].passed


def test_negated_conserved_quantity_fails_hessian():
    d = presets.duffing_pair_dict()
    for entry in d["conserved"]:
        entry["coefficient"] = -entry["coefficient"]
    m = model_from_dict(d)
    norm, _ = normalize_model(m)
    spec = analyze(norm)
    rep = check_assumptions(norm, spec)
    by_name = {c.name: c for c in rep}
    # the flow identity still holds; definiteness flips sign
    assert by_name["conserved_identity"].passed
    assert not by_name["definite_hessian"].passed


def test_wstar_realness_and_projections(duffing):
    spec = duffing["spec"]
    proj = make_wstar(spec)
    assert proj.realness_defect() < 1e-12
    v = spec.v_ell
    # growth 1, phase 0 on the anchor derivative
    g, p = proj.growth_phase(v, np.conj(v))
    assert complex(g).real == pytest.approx(1.0)
    assert complex(p).real == pytest.approx(0.0, abs=1e-14)
    # phase quadrature: i (v e^{i theta} - conj)
    g2, p2 = proj.growth_phase(1j * v, np.conj(1j * v))
    assert complex(g2).real == pytest.approx(0.0, abs=1e-14)
    assert complex(p2).real == pytest.approx(1.0)
    # second harmonic is invisible
    g3, p3 = proj.growth_phase(np.zeros(4), np.zeros(4))
    assert complex(g3) == 0 and complex(p3) == 0


def test_wstar_against_quadrature_oracle(duffing, rng):
    spec = duffing["spec"]
    proj = make_wstar(spec)
    thetas = np.arange(256) * (2 * np.pi / 256)
    wvals = proj.wstar_many(thetas).real
    v = spec.v_ell
    for f_plus in (v, 1j * v, 0.3 * v + np.array([0.1, 0, 0.2, 0])):
        f_vals = (np.exp(1j * thetas)[:, None] * f_plus[None, :]
                  + np.exp(-1j * thetas)[:, None] * np.conj(f_plus)[None, :])
        g_ref = oracles.trapezoid_projection(wvals, f_vals.real, thetas)
        g, _ = proj.growth_phase(f_plus, np.conj(f_plus))
        assert complex(g).real == pytest.approx(g_ref, abs=1e-12)


def test_wstar_rejects_wrong_pairing(duffing):
    spec = duffing["spec"]
    with pytest.raises(NotRealError):
        WStarProjector(spec.left_vectors[0], spec.left_vectors[2])
