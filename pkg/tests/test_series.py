import numpy as np

from ssm2d.jets import JetMode, NumericMode
from ssm2d.series import (FourierTaylor, table_mul, table_zeros,
                          scalar_table_evaluate)


def random_series(rng, nu, order, mode):
    W = FourierTaylor(nu, order, mode)
    for n in range(1, order + 1):
        for k in range(0, n + 1):
            if (k - n) % 2 != 0:
                continue
            vec = rng.standard_normal(2 * nu) + 1j * rng.standard_normal(2 * nu)
            if k == 0:
                vec = vec.real.astype(complex)
            for i in range(2 * nu):
                W.coeffs[n][k + n, i] = vec[i]
                W.coeffs[n][-k + n, i] = np.conj(vec[i])
    return W


def test_reality_support_parity_of_random_series(rng):
    W = random_series(rng, 2, 5, NumericMode(0.1))
    assert W.reality_defect() == 0.0
    assert W.parity_defect() == 0.0


def test_table_mul_matches_direct_polynomial(rng):
    # product of two scalar tables agrees with pointwise multiplication
    mode = NumericMode(0.0)
    a = table_zeros(3, mode)
    b = table_zeros(3, mode)
    a[1][0] = 1.0 - 0.5j   # k = -1
    a[1][2] = 1.0 + 0.5j   # k = +1
    b[2][0] = 0.3          # k = -2
    b[2][4] = 0.3          # k = +2
    prod = table_mul(a, b, 6, mode)
    r, th = 0.37, 1.1
    va = scalar_table_evaluate(a, [r], [th])[0]
    vb = scalar_table_evaluate(b, [r], [th])[0]
    vp = scalar_table_evaluate(prod, [r], [th])[0]
    assert abs(vp - va * vb) < 1e-15


def test_product_preserves_reality(rng):
    mode = NumericMode(0.0)
    for _ in range(10):
        a = random_series(rng, 1, 4, mode).component(0)
        b = random_series(rng, 1, 4, mode).component(1)
        prod = table_mul(a, b, 8, mode)
        for n, row in enumerate(prod):
            assert np.allclose(row, np.conj(row[::-1]), rtol=0, atol=1e-13)


def test_theta_derivative():
    mode = NumericMode(0.0)
    W = FourierTaylor(1, 2, mode)
    W.coeffs[1][2, 0] = 1.0 + 0.0j
    W.coeffs[1][0, 0] = 1.0 - 0.0j
    D = W.d_theta()
    # d/dtheta of 2 r cos(theta) is -2 r sin(theta)
    v = D.evaluate(0.5, 0.3)
    assert abs(v[0] - (-2 * 0.5 * np.sin(0.3))) < 1e-15


def test_jet_series_collapse(rng):
    jm = JetMode(1)
    W = FourierTaylor(1, 2, jm)
    from ssm2d.jets import EpsPoly
    W.coeffs[1][2, 0] = EpsPoly([1.0, 0.5])
    W.coeffs[1][0, 0] = EpsPoly([1.0, 0.5])
    num = W.at_eps(0.2)
    assert abs(num.coeffs[1][2, 0] - 1.1) < 1e-15
    v = W.evaluate(0.5, 0.0, eps=0.2)
    assert abs(v[0] - 2 * 0.5 * 1.1) < 1e-15


def test_evaluate_many_matches_single(rng):
    W = random_series(rng, 2, 4, NumericMode(0.0))
    rs = rng.uniform(0, 0.3, size=7)
    ths = rng.uniform(0, 2 * np.pi, size=7)
    many = W.evaluate_many(rs, ths)
    for i in range(7):
        one = W.evaluate(rs[i], ths[i])
        assert np.allclose(many[i], one, rtol=0, atol=1e-14)
