import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab.nonlocal1d import (Grid1D, OddGridFunction1D, TailError, TailFitError, TailModel,
                                  dpsi_1d, j_alpha, psi_1d, psi_ring_1d, tail_fit)
from blowuplab.params import DomainError

A3 = 1.0 / 3.0


def indicator(a=1.0, b=2.0):
    """w = 1 on [a, b] with jump pairs at both ends."""
    base = Grid1D.graded(x_min=1e-3, x_switch=4.0 * b / 2.0, x_max=50.0 * b, ratio=1.02).nodes
    base = base[(np.abs(base - a) > 1e-9) & (np.abs(base - b) > 1e-9)]
    nodes = np.sort(np.concatenate([base, [a, a, b, b]]))
    vals = ((nodes > a) & (nodes < b)).astype(float)
    vals[np.nonzero(nodes == a)[0][1]] = 1.0
    vals[np.nonzero(nodes == b)[0][0]] = 1.0
    return OddGridFunction1D(Grid1D(nodes, 4.0 * b / 2.0, 1.02), vals)


def smooth_grid(n=1024, x_max=1e3):
    return Grid1D.graded(x_min=1e-4, x_switch=2.0, x_max=x_max, n=n)


def gauss(g, scale=1.0, amp=1.0):
    x = g.nodes / scale
    return OddGridFunction1D(g, amp * x * np.exp(-x * x))


# frozen closed forms for the indicator of [1, 2] at alpha = 1/3
PSI_1 = 0.75 * (3 ** (4 / 3) - 2 ** (4 / 3) - 1)          # 0.605180
J_INF = 3 * (2 ** (1 / 3) - 1)                             # 0.779763
DPSI_1 = 3 ** (1 / 3) - 2 ** (1 / 3) + 1                   # 1.182329


def test_indicator_closed_forms():
    w = indicator()
    assert PSI_1 == pytest.approx(0.605180, abs=1e-6)
    assert psi_1d(w, 1.0, A3) == pytest.approx(PSI_1, rel=1e-10)
    assert psi_ring_1d(w, 1.0, A3) == pytest.approx(PSI_1 - 2 * A3 * J_INF, rel=1e-10)
    assert psi_ring_1d(w, 1.0, A3) == pytest.approx(0.085338, abs=1e-6)
    assert dpsi_1d(w, 1.0, A3) == pytest.approx(DPSI_1, rel=1e-10)
    assert j_alpha(w, np.inf, A3) == pytest.approx(J_INF, rel=1e-12)
    assert j_alpha(w, 0.5, A3) == 0.0


def test_value_at_origin():
    w = indicator()
    assert psi_1d(w, 0.0, A3) == 0.0
    assert psi_ring_1d(w, 0.0, A3) == 0.0


def test_scaling_lambda_two():
    # psi(w(./2))(2x) = 2^(1+a) psi(w)(x)
    w1, w2 = indicator(1.0, 2.0), indicator(2.0, 4.0)
    for x in (0.5, 1.0, 3.0):
        assert psi_1d(w2, 2 * x, A3) == pytest.approx(2 ** (1 + A3) * psi_1d(w1, x, A3), rel=1e-10)


def test_zero_input():
    g = smooth_grid(256)
    w = OddGridFunction1D(g, np.zeros(g.n))
    x = np.array([0.0, 0.5, 7.0])
    for f in (psi_1d, psi_ring_1d, dpsi_1d):
        assert np.all(f(w, x, A3) == 0.0)
    assert j_alpha(w, np.inf, A3) == 0.0


def test_axis_slope_identity():
    w = gauss(smooth_grid())
    assert dpsi_1d(w, 0.0, A3) == pytest.approx(2 * A3 * j_alpha(w, np.inf, A3), rel=1e-6)


def test_ring_slope_at_origin_vanishes():
    w = gauss(smooth_grid())
    h = 1e-4
    slope = (psi_ring_1d(w, h, A3) - psi_ring_1d(w, 0.0, A3)) / h
    assert abs(slope) <= 1e-6


def test_ring_consistency_compact():
    w = indicator()
    x = np.array([0.3, 1.0, 1.7, 5.0])
    jinf = j_alpha(w, np.inf, A3)
    ring, err = psi_ring_1d(w, x, A3, return_error=True)
    assert np.all(np.abs(ring - (psi_1d(w, x, A3) - 2 * A3 * jinf * x)) <= 1e-10 + 10 * err)


def test_grid_refinement_within_error_estimate():
    x = np.array([0.5, 1.0, 3.0])
    v1, e1 = psi_1d(gauss(smooth_grid(1024)), x, A3, return_error=True)
    v2 = psi_1d(gauss(smooth_grid(2048)), x, A3)
    assert np.all(np.abs(v2 - v1) < 4 * e1)


def test_negative_argument_rejected():
    with pytest.raises(DomainError):
        psi_1d(indicator(), -1.0, A3)


def test_tail_required():
    g = smooth_grid(256)
    w = OddGridFunction1D(g, np.ones(g.n))
    with pytest.raises(TailError):
        psi_1d(w, 1.0, A3)


def test_slow_tail_j_inf_diverges():
    g = smooth_grid(256)
    w = OddGridFunction1D(g, g.nodes ** -0.2, TailModel(A=1.0, p=0.2))
    with pytest.raises(TailError):
        j_alpha(w, np.inf, A3)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 3.0), st.floats(0.05, 8.0))
def test_linearity(a, b, scale, x):
    g = smooth_grid(512)
    w1, w2 = gauss(g), gauss(g, scale)
    w = OddGridFunction1D(g, a * w1.values + b * w2.values)
    for f in (psi_1d, psi_ring_1d, dpsi_1d):
        lhs = f(w, x, A3)
        rhs = a * f(w1, x, A3) + b * f(w2, x, A3)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.1, 2.0))
def test_j_monotone_for_negative_data(scale, amp):
    g = smooth_grid(512)
    w = gauss(g, scale, -amp)
    j = j_alpha(w, np.geomspace(1e-3, 1e3, 40), A3)
    assert np.all(np.diff(j) <= 1e-14)


def test_exact_power_law_fit():
    g = smooth_grid(512, 1e6)
    w = OddGridFunction1D(g, -6.0 * g.nodes ** (-A3))
    t = tail_fit(w)
    assert t.p == pytest.approx(A3, abs=1e-12)
    assert t.A == pytest.approx(-6.0, rel=1e-12)
    assert t.fit_residual <= 1e-12


def test_perturbed_power_law_fit():
    g = smooth_grid(512, 1e6)
    x = g.nodes
    w = OddGridFunction1D(g, -x ** -0.375 * (1 + 0.1 / np.log(np.maximum(x, 2.0))))
    assert abs(tail_fit(w).p - 0.375) <= 0.02


def test_zero_window_fit_fails():
    g = smooth_grid(256)
    with pytest.raises(TailFitError):
        tail_fit(OddGridFunction1D(g, np.zeros(g.n)))


def test_tail_exponent_range():
    with pytest.raises(TailFitError):
        TailModel(A=1.0, p=3.5)


def test_grid_defaults():
    g = Grid1D.graded()
    assert g.n == 1024 and g.x_min == 1e-4 and g.x_max == 1e6
    assert 1.0 < g.ratio <= 1.2
    with pytest.raises(DomainError):
        Grid1D(np.array([1.0, 1.0, 1.0, 2.0]))


def test_smooth_matches_nodes_and_tail():
    g = smooth_grid(512, 1e6)
    w = OddGridFunction1D(g, -6.0 * g.nodes ** (-A3), TailModel(A=-6.0, p=A3))
    assert np.allclose(w.smooth(g.nodes), w.values, rtol=1e-12)
    assert w.smooth(-1e8) == pytest.approx(6.0 * 1e8 ** (-A3))


def test_csv_with_tail_sidecar(tmp_path):
    g = smooth_grid(64)
    w = OddGridFunction1D(g, -g.nodes ** -0.5, TailModel(A=-1.0, p=0.5))
    w.to_csv(tmp_path / "w.csv")
    text = (tmp_path / "w.csv").read_bytes()
    assert text.startswith(b"x,w\n") and b"\r" not in text
    assert len(text.splitlines()) == g.n + 1
    assert json.loads((tmp_path / "w.csv.tail.json").read_text())["p"] == 0.5
