import math

import numpy as np
import pytest
from scipy import integrate, special

from eddyheat.kraichnan import (
    KraichnanParams,
    Regime,
    covariance_at,
    covariance_at_origin,
    epsQ_upper_bound,
    q_lower_bound,
    radial_normalisation,
    regime_report,
    torus_cross_check,
)


def _polar_reference(p, z):
    """Brute-force polar quadrature of the spectral integral in 2D."""
    out = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            def f(th, k):
                kh = np.array([math.cos(th), math.sin(th)])
                proj = (a == b) - kh[a] * kh[b]
                return p.sigma2 * p.k0**p.zeta * k ** (-1 - p.zeta) * proj * math.cos(k * (kh @ z))
            out[a, b] = integrate.dblquad(f, p.k0, p.k1, 0, 2 * math.pi, epsabs=1e-11, epsrel=1e-11)[0]
    return out


def test_origin_closed_form():
    p = KraichnanParams(1.0, 1.0, 1.0, 8.0)
    assert np.allclose(covariance_at(p, np.zeros(2)), covariance_at_origin(p), rtol=1e-10)
    expected = p.sigma2 * math.pi * (1 - (p.k0 / p.k1) ** p.zeta) / p.zeta
    assert np.allclose(covariance_at_origin(p), expected * np.eye(2), rtol=1e-12)


def test_against_polar_quadrature():
    p = KraichnanParams(1.0, 0.5, 1.0, 4.0)
    z = np.array([0.3, -0.2])
    assert np.allclose(covariance_at(p, z), _polar_reference(p, z), rtol=1e-7, atol=1e-9)


def test_log_branch_at_zero_zeta():
    p = KraichnanParams(1.0, 0.0, 2.0, 16.0)
    assert radial_normalisation(p) == pytest.approx(math.log(8.0))


def test_empty_shell():
    p = KraichnanParams(1.0, 1.0, 3.0, 3.0)
    assert radial_normalisation(p) == 0.0
    assert q_lower_bound(p) == 0.0


def test_eps_bound_example():
    assert epsQ_upper_bound(KraichnanParams(1.0, 1.0, 10.0)) == pytest.approx(1e-2)


def test_infinite_shell_plateau():
    finite = q_lower_bound(KraichnanParams(1.0, 1.0, 1.0, 1e8))
    assert q_lower_bound(KraichnanParams(1.0, 1.0, 1.0)) == pytest.approx(finite, rel=1e-6)


def test_regimes():
    assert regime_report(KraichnanParams(1.0, 4 / 3, 1.0)).regime is Regime.UV_CASCADE
    rep = regime_report(KraichnanParams(1.0, 0.0, 1.0, 10.0))
    assert rep.enstrophy_case and rep.regime is Regime.IR_CASCADE
    white = regime_report(KraichnanParams(1.0, -2.0, 1.0, 10.0))
    assert white.white_in_space and white.regime is Regime.IR_CASCADE


def test_invalid_params():
    with pytest.raises(ValueError):
        KraichnanParams(1.0, -3.0, 1.0, 10.0)
    with pytest.raises(ValueError):
        KraichnanParams(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        KraichnanParams(1.0, 1.0, 2.0, 1.0)


@pytest.mark.parametrize("zeta", [-2.0, 0.0, 1.0])
def test_bounds_against_eigenvalues(zeta):
    p = KraichnanParams(1.0, zeta, 1.0, 12.0)
    lam_min = np.linalg.eigvalsh(covariance_at(p, np.zeros(2)))[0]
    assert q_lower_bound(p) <= lam_min * (1 + 1e-12)
    assert torus_cross_check(p)["top_eigenvalue"] <= epsQ_upper_bound(p) * (1 + 1e-9)


def test_3d_origin_isotropic():
    p = KraichnanParams(1.0, 1.0, 1.0, 6.0, d=3)
    Q = covariance_at(p, np.zeros(3))
    assert np.allclose(Q, Q[0, 0] * np.eye(3), rtol=1e-8)
    assert np.allclose(Q, covariance_at_origin(p), rtol=1e-8)


def test_bessel_identity_used_in_2d():
    # the angular average of the projector times cos reduces to J0 and J2
    p = KraichnanParams(1.0, 2.0, 1.0, 3.0)
    z = np.array([0.7, 0.0])
    ref = integrate.quad(lambda k: k ** (-1 - p.zeta) * math.pi * (special.j0(k * 0.7) - special.jv(2, k * 0.7)), 1.0, 3.0,
                         epsabs=1e-13)[0]
    assert covariance_at(p, z)[1, 1] == pytest.approx(ref, rel=1e-8)
