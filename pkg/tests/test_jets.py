import numpy as np
import pytest

from ssm2d.errors import EpsDivisionError
from ssm2d.jets import EpsPoly, JetMode, NumericMode


def random_jet(rng, degree=3):
    c = rng.standard_normal(degree + 1) + 1j * rng.standard_normal(degree + 1)
    return EpsPoly(c)


def test_ring_laws(rng):
    for _ in range(200):
        a, b, c = (random_jet(rng) for _ in range(3))
        lhs = ((a + b) + c).coeffs
        rhs = (a + (b + c)).coeffs
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-14)
        assert np.allclose((a * b).coeffs, (b * a).coeffs, rtol=1e-15)
        assert np.allclose((a * (b + c)).coeffs, (a * b + a * c).coeffs,
                           rtol=0, atol=1e-13 * max(1, a.max_abs()
                                                    * (b.max_abs()
                                                       + c.max_abs())))


def test_truncation_is_exact_below_degree(rng):
    # product coefficients below the truncation degree match the full
    # convolution computed by numpy
    for _ in range(50):
        a, b = random_jet(rng, 4), random_jet(rng, 4)
        full = np.convolve(a.coeffs, b.coeffs)
        assert np.allclose((a * b).coeffs, full[:5], rtol=1e-15)


def test_eps_shift_roundtrip(rng):
    for _ in range(50):
        p = random_jet(rng, 3)
        # headroom: top coefficient is lost by multiply, so null it first
        p = EpsPoly(np.append(p.coeffs[:-1], 0.0))
        q = p.times_eps().divide_by_eps()
        assert np.allclose(q.coeffs, p.coeffs[:q.coeffs.size], rtol=1e-16)


def test_divide_by_eps_requires_vanishing_constant():
    p = EpsPoly([1e-6, 2.0])
    with pytest.raises(EpsDivisionError):
        p.divide_by_eps()
    q = EpsPoly([0.0, 2.0, 3.0]).divide_by_eps()
    assert np.allclose(q.coeffs, [2.0, 3.0])
    # values within tolerance pass and are treated as zero
    r = EpsPoly([1e-14, 2.0]).divide_by_eps()
    assert np.allclose(r.coeffs, [2.0])


def test_reciprocal_and_division(rng):
    for _ in range(50):
        a = random_jet(rng, 3)
        a.coeffs[0] += 3.0  # keep the constant term away from zero
        one = (a * a.reciprocal()).coeffs
        assert abs(one[0] - 1.0) < 1e-14
        assert np.max(np.abs(one[1:])) < 1e-13 * max(1.0, a.max_abs()) ** 2
        b = random_jet(rng, 3)
        assert np.allclose(((b / a) * a).coeffs[:2], b.coeffs[:2],
                           rtol=0, atol=1e-12 * max(1.0, b.max_abs()))


def test_evaluation_matches_polynomial():
    p = EpsPoly([1.0, -2.0, 0.5])
    for eps in (0.0, 0.1, 0.37):
        assert abs(p(eps) - (1.0 - 2.0 * eps + 0.5 * eps ** 2)) < 1e-15


def test_conjugate_and_parts():
    p = EpsPoly([1 + 2j, -3j])
    assert np.allclose(p.conjugate().coeffs, [1 - 2j, 3j])
    assert np.allclose(p.real.coeffs, [1.0, 0.0])
    assert np.allclose(p.imag.coeffs, [2.0, -3.0])


def test_mixed_degree_truncates_to_shorter():
    a = EpsPoly([1.0, 1.0, 1.0])
    b = EpsPoly([2.0, 2.0])
    assert (a + b).degree == 1
    assert (a * b).degree == 1


def test_modes():
    jm = JetMode(1)
    assert jm.eps_power(0).coeffs[0] == 1.0
    assert jm.eps_power(2).max_abs() == 0.0  # truncated away
    nm = NumericMode(0.2)
    assert nm.eps_power(3) == pytest.approx(0.008)
    assert nm.times_eps(5.0) == pytest.approx(1.0)
