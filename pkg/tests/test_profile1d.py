import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab.checks import profile
from blowuplab.params import DomainError, params_from_epsilon
from blowuplab.profile1d import (PositivityError, ProfileOperators, extract_scaling, initial_guess,
                                 ode_solution, phi_one_normalized, picard_map, picard_step,
                                 profile_grid, profile_residual, solve_profile)

EPS = 0.05


@pytest.fixture(scope="module")
def sol():
    return profile(EPS)


def test_initial_guess():
    p = params_from_epsilon(EPS)
    W0 = initial_guess(p, profile_grid(EPS))
    x = W0.x
    assert W0.values[0] / x[0] == pytest.approx(-1.0, abs=1e-6)
    assert np.all(W0.values < 0)
    # W0(1) = -2^(-(1 + a_hat)/2) with a_hat = 0.339583; x = 1 is a grid node
    assert W0(1.0) == pytest.approx(-2 ** (-(1 + p.alpha_hat) / 2), rel=1e-14)
    assert W0(1.0) == pytest.approx(-0.6285975, abs=1e-7)


def test_first_picard_step_reduces_residual():
    p = params_from_epsilon(EPS)
    g = profile_grid(EPS)
    ops = ProfileOperators(p, g)
    wt = phi_one_normalized(g.nodes, p)

    def res(W):
        Wn = picard_map(W, p, ops)[0]
        return np.max(np.abs(wt * (Wn.values - W.values))) / np.max(np.abs(wt * W.values))

    W0 = initial_guess(p, g)
    assert res(picard_step(W0, p, 0.5, ops)) < res(W0)


def test_fixed_point_is_kept(sol):
    W1 = picard_step(sol.W, sol.params)
    wt = phi_one_normalized(sol.W.x, sol.params)
    d = np.max(np.abs(wt * (W1.values - sol.W.values))) / np.max(np.abs(wt * sol.W.values))
    assert d <= 10 * 1e-10


def test_unit_velocity_gives_linear_profile():
    x = np.geomspace(1e-3, 1e3, 200)
    W = ode_solution(x, x, np.ones_like(x), 1.0 / 3.0 - EPS)
    assert np.allclose(W, -x, rtol=1e-12)


def test_ode_positivity_guard():
    x = np.geomspace(1e-3, 10.0, 50)
    with pytest.raises(PositivityError):
        ode_solution(x, -x, np.ones_like(x), 0.3)


def test_converged_profile(sol):
    assert sol.converged
    assert sol.residual_norm <= 1e-6 * sol.initial_residual
    assert sol.c_l == pytest.approx(64 / (9 * EPS), rel=0.3)
    assert sol.c_l > 0 and sol.c_w < 0
    assert np.all(sol.W.values < 0)
    assert np.all(sol.V.values > 0)
    assert sol.W.values[0] / sol.W.x[0] == pytest.approx(-1.0, abs=1e-8)
    assert abs(sol.V_x[0] - 1.0) <= 1e-4
    assert abs(sol.tail.p - sol.alpha_star) <= 0.5 * EPS
    assert -9.0 <= sol.tail.A <= -4.0


def test_frozen_scalings(sol):
    # regression values from the converged eps = 0.05 profile (default grid, tol 1e-10)
    assert sol.c_l == pytest.approx(123.8486, rel=1e-4)
    assert sol.c_w == pytest.approx(-41.6624, rel=1e-4)
    assert sol.alpha_star == pytest.approx(0.336398, abs=2e-6)


def test_restart_from_fixed_point(sol):
    again = solve_profile(sol.params, W0=sol.W)
    assert again.converged and again.iterations <= 1


def test_extract_scaling_examples():
    assert extract_scaling(0.0, 0.3) == (2.0, 2.0)
    a = 1.0 / 3.0 - EPS
    c_l, _ = extract_scaling(-16.0 / (3.0 * EPS), a)
    assert c_l == pytest.approx(2 - 64 / 3 + 64 / (9 * EPS), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.01, 1.0 / 3.0))
def test_extract_scaling_linear(j, a):
    c_l, c_w = extract_scaling(j, a)
    d_l, d_w = extract_scaling(2 * j, a)
    assert d_l - 2 == pytest.approx(2 * (c_l - 2), rel=1e-12, abs=1e-12)
    assert d_w - 2 == pytest.approx(2 * (c_w - 2), rel=1e-12, abs=1e-12)


def test_profile_residual(sol):
    assert profile_residual(sol) <= 1e-4
    assert profile_residual(sol, weight=lambda x: np.zeros_like(x)) == 0.0
    start = solve_profile(sol.params, max_iter=0)
    assert not start.converged
    assert profile_residual(start) > 0.1


def test_nonconverged_flag_is_honest():
    s = solve_profile(params_from_epsilon(0.1), max_iter=3)
    assert not s.converged and s.iterations == 3
    assert s.residual_norm > 1e-10


def test_domain_errors():
    p = params_from_epsilon(EPS)
    with pytest.raises(DomainError):
        solve_profile(p, tol=0.0)
    with pytest.raises(DomainError):
        picard_step(initial_guess(p, profile_grid(EPS)), p, relax=1.5)
    with pytest.raises(DomainError):
        profile_grid(0.0)


def test_files(sol, tmp_path):
    sol.to_files(tmp_path / "p.csv", tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["converged"] is True and s["c_l"] == sol.c_l
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x,W,V,psi_ring" and len(lines) == sol.W.grid.n + 1
