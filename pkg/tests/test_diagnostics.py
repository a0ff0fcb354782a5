import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab.biot_savart import Field2D, HalfPlaneGrid
from blowuplab.diagnostics import (VelocityField, WeightSpec, asymptotics_report,
                                   j_hat_surrogate, log_weight_eval, log_weighted_sup_norm,
                                   outgoing_check, trajectory_integrate, weight_eval,
                                   weighted_sup_norm)
from blowuplab.nonlocal1d import Grid1D, OddGridFunction1D
from blowuplab.params import DomainError, params_from_epsilon

P = params_from_epsilon(0.05)
GRID = HalfPlaneGrid.graded(24, 20, r_core=3.0, z_core=3.0, r_max=20.0, z_max=15.0)
radii = st.floats(1e-3, 1e4)


# --- j_hat


def test_j_hat_origin_and_limit():
    assert j_hat_surrogate(0.0, P) == 1.0
    e = P.hat_eps_beta
    far = j_hat_surrogate(1e300, P)
    assert far == pytest.approx(math.sqrt(1.0 + 36.0 / e ** 2), rel=1e-6)


def test_j_hat_monotone():
    x = np.geomspace(1e-3, 1e8, 400)
    assert np.all(np.diff(j_hat_surrogate(x, P)) > 0)


def test_j_hat_negative():
    with pytest.raises(DomainError):
        j_hat_surrogate(-1.0, P)


# --- weights


def test_gamma_ag_axis():
    spec = WeightSpec(P, "Gamma_ag")
    pts = np.stack([np.zeros(5), np.linspace(0, 9, 5)], axis=-1)
    assert np.allclose(weight_eval(spec, pts), 1.0)


def test_phi_one_origin():
    spec = WeightSpec(P, "phi_one")
    assert log_weight_eval(spec, 0.0) == pytest.approx(9.0 / P.kappa1)
    assert weight_eval(WeightSpec(P, "phi_one", normalized_one=True), 0.0) == 1.0


def test_gamma_at_unit_radius():
    spec = WeightSpec(P, "Gamma")
    expect = 2.0 * 2.0 ** (-P.eps2 / 2.0) * j_hat_surrogate(1.0, P) ** (-P.kappa)
    assert weight_eval(spec, 1.0) == pytest.approx(expect, rel=1e-12)


def test_singular_weights_reject_origin():
    for sel in ("Gamma", "phi"):
        with pytest.raises(DomainError):
            weight_eval(WeightSpec(P, sel), 0.0)


def test_weight_spec_errors():
    with pytest.raises(DomainError):
        WeightSpec(P, "nope")
    with pytest.raises(DomainError):
        WeightSpec(P, mu_ne=(1.0,), b_ne=(0.0, 1.0))
    with pytest.raises(DomainError):
        weight_eval(WeightSpec(P, "X3"), 1.0)


def test_x3_is_max_of_parts():
    prof = lambda r: r * (1.0 + r * r) ** -0.7
    spec = WeightSpec(P, "X3", profile=prof, normalized_one=True)
    r = np.geomspace(1e-2, 1e3, 50)
    lw = log_weight_eval(spec, r)
    lne = np.max([-math.log(m) + b * np.log(r) for m, b in zip(spec.mu_ne, spec.b_ne)], axis=0)
    assert np.all(lw >= lne - 1e-12)


@given(radii)
def test_weights_positive(r):
    for sel in ("Gamma", "Gamma_ag", "phi"):
        w = weight_eval(WeightSpec(P, sel), np.array([[r, 0.3 * r]]))
        assert w > 0


@given(st.floats(0, 1e6), st.floats(-1e6, 1e6))
def test_gamma_ag_in_unit_interval(r, z):
    w = weight_eval(WeightSpec(P, "Gamma_ag"), np.array([[r, z]]))
    assert 0.0 < w <= 1.0


@given(st.floats(0, 1e12))
def test_phi_one_bounds(r):
    lw = log_weight_eval(WeightSpec(P, "phi_one"), r)
    assert 0.0 < lw <= 9.0 / P.kappa1 * (1 + 1e-15)
    assert 0.0 < weight_eval(WeightSpec(P, "phi_one", normalized_one=True), r) <= 1.0


# --- weighted sup norms


def test_sup_norm_zero():
    assert weighted_sup_norm(Field2D(GRID, np.zeros(GRID.shape)), WeightSpec(P, "Gamma_ag")) == 0.0
    assert log_weighted_sup_norm(Field2D(GRID, np.zeros(GRID.shape)), WeightSpec(P)) == -math.inf


def test_sup_norm_of_inverse_weight():
    spec = WeightSpec(P, "Gamma_ag")
    R, Z = GRID.mesh()
    w = weight_eval(spec, np.stack([R, Z], axis=-1))
    assert weighted_sup_norm(Field2D(GRID, 1.0 / w), spec) == pytest.approx(1.0, rel=1e-12)


def test_sup_norm_brute_force_1d():
    g = Grid1D.graded(x_min=1e-3, x_switch=1.0, x_max=1e3, ratio=1.1)
    x = g.nodes
    f = OddGridFunction1D(g, x * np.exp(-x))
    spec = WeightSpec(P, "phi", normalized_one=True)
    brute = max(abs(v) * weight_eval(spec, xi) for v, xi in zip(f.values, x) if xi > 0)
    assert weighted_sup_norm(f, spec) == pytest.approx(brute, rel=1e-12)


def test_sup_norm_rejects_arrays():
    with pytest.raises(DomainError):
        weighted_sup_norm(np.ones(3), WeightSpec(P))


@settings(max_examples=30)
@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-6))
def test_sup_norm_homogeneous(c):
    R, Z = GRID.mesh()
    vals = Z * np.exp(-(R - 1.0) ** 2 - Z ** 2)
    spec = WeightSpec(P, "Gamma_ag")
    a = weighted_sup_norm(Field2D(GRID, c * vals), spec)
    b = weighted_sup_norm(Field2D(GRID, vals), spec)
    assert a == pytest.approx(abs(c) * b, rel=1e-12)


# --- outgoing flow and trajectories


def test_outgoing_check_linear():
    Q = VelocityField.from_function(GRID, lambda r, z: (2.0 * r, 2.0 * z))
    assert outgoing_check(Q) == pytest.approx(2.0)
    Q = VelocityField.from_function(GRID, lambda r, z: (-r, -z))
    assert outgoing_check(Q) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        outgoing_check(Q, exclusion_radius=0.0)


def test_trajectory_exponential():
    Q = VelocityField.from_function(GRID, lambda r, z: (2.0 * r, 2.0 * z))
    x0 = np.array([1.0, 0.5])
    rep = trajectory_integrate(Q, x0, s_range=(-1.0, 0.5), dt=1e-2)
    exact = np.exp(2.0 * rep.s)[:, None] * x0
    assert np.max(np.abs(rep.path - exact)) <= 1e-8
    assert rep.lambda_empirical == pytest.approx(2.0, rel=1e-8)
    assert not rep.bound_violation
    assert rep.monotone_forward and not rep.exited


def test_trajectory_exits_box():
    Q = VelocityField.from_function(GRID, lambda r, z: (2.0 * r, 2.0 * z))
    rep = trajectory_integrate(Q, (5.0, 5.0), s_range=(0.0, 3.0))
    assert rep.exited


def test_trajectory_still():
    rep = trajectory_integrate(lambda r, z: (0.0, 0.0), (1.0, 2.0), s_range=(-1.0, 1.0))
    assert np.all(rep.path == np.array([1.0, 2.0]))
    assert rep.lambda_empirical == 0.0
    assert not rep.monotone_forward


def test_trajectory_errors():
    with pytest.raises(DomainError):
        trajectory_integrate(lambda r, z: (0.0, 0.0), (1.0, 1.0), s_range=(0.5, 1.0))
    with pytest.raises(DomainError):
        trajectory_integrate(np.zeros(2), (1.0, 1.0))


# --- asymptotics report


def test_report_leading_order():
    e = 0.05
    rep = asymptotics_report(epsilon=e, c_l=64.0 / (9.0 * e), c_w=-64.0 / (27.0 * e))
    assert rep.rows["alpha_star"]["value"] == pytest.approx(1.0 / 3.0)
    assert rep.rows["alpha_star"]["deviation_over_eps"] == pytest.approx(-1.0 / 8.0)
    assert rep.rows["c_l"]["relative_deviation"] == pytest.approx(0.0, abs=1e-14)
    assert rep.rows["c_w"]["relative_deviation"] == pytest.approx(0.0, abs=1e-14)
    # a* - a = eps exactly, so the predicted exponent is 1/eps
    assert rep.rows["c_x_predicted"]["value"] == pytest.approx(1.0 / e)


def test_report_zero_c_w():
    rep = asymptotics_report(epsilon=0.05, c_l=10.0, c_w=0.0)
    assert rep.rows["alpha_star"]["value"] == 0.0
    assert "c_x_predicted" not in rep.rows
    # c_wt = a c_l > 0: no finite blowup time
    assert rep.T_alpha == math.inf


def test_report_T_alpha():
    a = P.alpha
    rep = asymptotics_report(epsilon=0.05, c_l=100.0, c_w=-100.0 * a - 8.0)
    assert rep.T_alpha == pytest.approx(0.125)
    assert rep.to_dict()["rows"]["T_alpha"]["relative_deviation"] == pytest.approx(0.0, abs=1e-12)


def test_report_needs_inputs():
    with pytest.raises(DomainError):
        asymptotics_report(epsilon=0.05)
