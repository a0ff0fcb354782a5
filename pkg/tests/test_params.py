import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import beta

from blowuplab.params import (DomainError, derive_params, japanese_bracket, kappa_psi2_integral,
                              params_from_epsilon)


def beta_oracle(alpha):
    # int_0^inf s^(2+a) (1+s^2)^(-5/2) ds = B((3+a)/2, (2-a)/2) / 2
    return 0.5 * beta((3.0 + alpha) / 2.0, (2.0 - alpha) / 2.0)


def test_one_third_endpoint():
    p = derive_params(1.0 / 3.0)
    assert p.epsilon == 0.0
    assert p.c_far == pytest.approx(1.85, abs=5e-3)


def test_alpha_030():
    p = derive_params(0.30)
    assert p.epsilon == pytest.approx(1.0 / 30.0, abs=1e-15)
    assert p.kappa == derive_params(1.0 / 3.0).kappa


def test_kappa_band():
    assert 0.96 < derive_params(0.25).kappa < 0.97


def test_kappa_psi2_beta_oracle_frozen():
    # frozen from B(5/3, 5/6) / 2
    assert kappa_psi2_integral(1.0 / 3.0, tol=1e-12) == pytest.approx(0.3832754902562654, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.0 / 3.0))
def test_kappa_psi2_matches_beta(alpha):
    assert kappa_psi2_integral(alpha, tol=1e-12) == pytest.approx(beta_oracle(alpha), rel=1e-10)


def test_kappa_psi_lipschitz_near_one_third():
    a, b = derive_params(1.0 / 3.0), derive_params(0.33)
    assert abs(a.kappa_psi - b.kappa_psi) <= 10.0 * abs(1.0 / 3.0 - 0.33)


def test_kappa_psi2_increasing():
    vals = [kappa_psi2_integral(a) for a in np.linspace(0.02, 1.0 / 3.0, 20)]
    assert np.all(np.diff(vals) > 0)


def test_derived_constants():
    p = derive_params(0.3)
    assert p.kappa_psi1 == pytest.approx(p.alpha / (3.0 * p.kappa_psi2), rel=1e-15)
    assert p.kappa_psi == pytest.approx(8.0 * p.kappa_psi1, rel=1e-15)
    assert p.kappa_poisson == pytest.approx(4.0 * p.kappa_psi1, rel=1e-15)
    assert p.hat_eps_beta == pytest.approx(9.0 / 8.0 * p.epsilon)
    assert p.alpha_hat == pytest.approx(1.0 / 3.0 + p.epsilon / 8.0)


def test_kappa_psi_order_one():
    for a in np.linspace(0.2, 1.0 / 3.0, 6):
        assert 0.5 < derive_params(a).kappa_psi < 5.0


@pytest.mark.parametrize("alpha", [0.0, -0.1, 0.34, math.nan])
def test_alpha_domain(alpha):
    with pytest.raises(DomainError):
        derive_params(alpha)


def test_epsilon_domain():
    with pytest.raises(DomainError):
        params_from_epsilon(-1.0)
    with pytest.raises(DomainError):
        params_from_epsilon(1.0 / 3.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1.0 / 3.0))
def test_alpha_plus_epsilon(alpha):
    p = derive_params(alpha)
    assert abs(p.alpha + p.epsilon - 1.0 / 3.0) <= 1e-15
    eps_like = ("epsilon", "eps2", "hat_eps_beta")
    assert all(v > 0 for k, v in p.to_dict().items() if k not in eps_like)
    assert all(p.to_dict()[k] >= 0 for k in eps_like)


def test_json_roundtrip():
    p = params_from_epsilon(0.05)
    d = p.to_json_dict()
    assert all(float(f"{v:.17g}") == v for v in d.values())
    assert d["alpha"] == p.alpha


def test_japanese_bracket():
    assert japanese_bracket(0.0) == 1.0
    assert japanese_bracket(np.array([3.0]))[0] == pytest.approx(math.sqrt(10.0))
