import json

import numpy as np
import pytest

from ssm2d import presets
from ssm2d.errors import (CommutatorError, DegenerateModeError,
                          EquilibriumError, ParseError)
from ssm2d.jets import NumericMode
from ssm2d.model import (eval_field, load_model, model_from_dict,
                         normalize_model, series_compose)
from ssm2d.series import FourierTaylor
from ssm2d.grids import loglog_slope

from . import oracles


def test_load_reference_model(model_files):
    m = load_model(model_files["duffing_pair"])
    assert m.nu == 2
    assert len(m.terms) == 1
    assert m.terms[0].total_degree == 3
    assert m.conserved is not None
    assert m.source_hash


def test_roundtrip_field_eval_against_symbolic_oracle(model_files, rng):
    m = load_model(model_files["duffing_pair"])
    d = presets.duffing_pair_dict()
    for _ in range(10):
        x = 0.3 * rng.standard_normal(4)
        eps = rng.uniform(0, 0.5)
        ours = eval_field(m, x, eps)
        ref = oracles.symbolic_field_value(d, x, eps)
        assert np.max(np.abs(ours - ref)) < 1e-14


def test_degree_below_two_rejected():
    d = presets.duffing_pair_dict()
    d["terms"][0]["exponents"] = [1, 0, 0, 0]
    with pytest.raises(EquilibriumError):
        model_from_dict(d)


def test_noncommuting_blocks_rejected():
    d = presets.duffing_pair_dict()
    d["delta"] = [[0, 1, 0, 0], [0, 0, 0, 0],
                  [0, 0, 0, 0], [0, 0, 0, 0]]
    d["omega"] = [[0, 0, 0, 0], [1, 0, 0, 0],
                  [0, 0, 0, 1], [0, 0, -2, 0]]
    with pytest.raises(CommutatorError):
        model_from_dict(d)


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_model(p)
    with pytest.raises(ParseError):
        load_model(tmp_path / "missing.json")
    d = presets.duffing_pair_dict()
    del d["omega"]
    p2 = tmp_path / "missing_key.json"
    p2.write_text(json.dumps(d))
    with pytest.raises(ParseError):
        load_model(p2)


def test_eval_field_trivia(duffing):
    m = duffing["model"]
    assert np.all(eval_field(m, np.zeros(4), 0.3) == 0.0)
    lin = presets.linear_pair()
    e1 = np.array([1.0, 0, 0, 0])
    assert np.allclose(eval_field(lin, e1, 0.0), lin.omega[:, 0])


def test_normalize_reference_model():
    m = presets.duffing_pair()
    norm, rep = normalize_model(m)
    assert rep.time_factor == pytest.approx(1.0)
    assert rep.eps_factor == pytest.approx(0.5)
    # idempotence: the normalized model renormalizes with unit factors
    again, rep2 = normalize_model(norm)
    assert rep2.time_factor == pytest.approx(1.0, abs=1e-14)
    assert rep2.eps_factor == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(again.delta, norm.delta)


def test_normalize_general_slopes():
    # lambda_ell = -2 eps + 3i: time x3, eps x(2/3)
    d = presets.linear_pair_dict()
    d["delta"] = np.kron(np.diag([-2.0, -5.0]), np.eye(2)).tolist()
    d["omega"] = [[0, 3, 0, 0], [-3, 0, 0, 0],
                  [0, 0, 0, 3 * np.sqrt(2)], [0, 0, -3 * np.sqrt(2), 0]]
    m = model_from_dict(d)
    norm, rep = normalize_model(m)
    assert rep.time_factor == pytest.approx(3.0)
    assert rep.eps_factor == pytest.approx(2.0 / 3.0)
    from ssm2d.spectral import analyze
    spec = analyze(norm)
    assert spec.eigenvalues[spec.ell] == pytest.approx((-1.0, 1.0))


def test_normalize_preserves_frequency_ratio():
    d = presets.duffing_pair_dict()
    d["omega"] = (5.0 * np.array(d["omega"])).tolist()
    m = model_from_dict(d)
    norm, rep = normalize_model(m)
    assert rep.time_factor == pytest.approx(5.0)
    evals = np.linalg.eigvals(norm.omega)
    freqs = np.sort(np.abs(evals.imag))
    assert freqs[-1] / freqs[0] == pytest.approx(np.sqrt(2.0))


def test_degenerate_mode_error():
    d = presets.linear_pair_dict()
    d["delta"] = np.zeros((4, 4)).tolist()
    with pytest.raises(DegenerateModeError):
        normalize_model(model_from_dict(d))


def test_identical_slopes_give_unit_ratio():
    d = presets.linear_pair_dict()
    d["delta"] = (-np.eye(4)).tolist()
    m = model_from_dict(d)
    norm, rep = normalize_model(m)
    from ssm2d.spectral import analyze
    spec = analyze(norm)
    assert spec.aleph == pytest.approx(1.0)
    assert spec.sigma == 2


def test_series_compose_cubic_identity(duffing):
    """cos^3 = (3 cos + cos 3)/4 shows up in the single-harmonic cube."""
    m = duffing["model"]
    mode = NumericMode(0.0)
    W = FourierTaylor(2, 3, mode)
    W.coeffs[1][2, 0] = 0.5 + 0j   # x0 = r cos(theta)
    W.coeffs[1][0, 0] = 0.5 + 0j
    comp = series_compose(m, W, 3, mode)
    row = comp.coeffs[3]
    # target component 1 receives -x0^3
    assert row[3 + 3, 1] == pytest.approx(-1.0 / 8.0)
    assert row[1 + 3, 1] == pytest.approx(-3.0 / 8.0)
    assert row[3 + 0, 1] == 0.0
    assert row[3 + 2, 1] == 0.0


def test_series_compose_empty_terms(linear):
    mode = NumericMode(0.1)
    W = FourierTaylor(2, 3, mode)
    W.coeffs[1][2, 0] = 1.0
    W.coeffs[1][0, 0] = 1.0
    comp = series_compose(linear["model"], W, 3, mode)
    for row in comp.coeffs:
        assert np.all(row == 0.0)


def test_series_compose_linear_in_terms(duffing, coupled):
    mode = NumericMode(0.0)
    from ssm2d.expansion import expand
    exp = expand(duffing["model"], duffing["spec"], 3, mode)
    W = exp.W
    full = series_compose(coupled["model"], W, 3, mode)
    # split the term list in two and compose each part
    import dataclasses
    m1 = dataclasses.replace(coupled["model"],
                             terms=coupled["model"].terms[:1])
    m2 = dataclasses.replace(coupled["model"],
                             terms=coupled["model"].terms[1:])
    p1 = series_compose(m1, W, 3, mode)
    p2 = series_compose(m2, W, 3, mode)
    for n in range(4):
        assert np.allclose(full.coeffs[n],
                           p1.coeffs[n] + p2.coeffs[n], rtol=0, atol=1e-15)


def test_series_compose_against_symbolic_oracle(duffing, expansions):
    exp = expansions(3, eps=0.0)
    comp = series_compose(duffing["model"], exp.W, 3, NumericMode(0.0))
    rows = [r.astype(complex) for r in exp.W.coeffs]
    ref = oracles.symbolic_compose_slices(presets.duffing_pair_dict(),
                                          rows, 0.0, 3)
    # oracle model is unnormalized but the nonlinearity is identical
    for n in range(4):
        assert np.allclose(comp.coeffs[n].astype(complex), ref[n],
                           rtol=0, atol=1e-12)


def test_compose_consistency_with_pointwise(duffing, expansions, rng):
    """Truncated composition matches pointwise evaluation to O(r^{N+1})."""
    m = duffing["model"]
    exp = expansions(3, eps=0.0)
    comp = series_compose(m, exp.W, 3, NumericMode(0.0))
    radii = np.geomspace(1e-3, 1e-1, 7)
    th = rng.uniform(0, 2 * np.pi, size=16)
    errs = []
    for r in radii:
        x = exp.W.evaluate_many(np.full_like(th, r), th).real
        direct = np.array([eval_field(m, xi, 0.0) - m.a_matrix(0.0) @ xi
                           for xi in x])
        series = comp.evaluate_many(np.full_like(th, r), th).real
        errs.append(np.max(np.abs(series - direct)))
    slope = loglog_slope(radii, errs)
    assert slope >= 3.5  # N + 0.5
