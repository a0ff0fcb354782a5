"""Self-similar profile of the 1D model by under-relaxed fixed-point iteration.

The profile W (odd, W ~ -x at the origin, W < 0 on x > 0) solves

    2 V W' = (3 - a - (1-a) V_x) W,      V = x + psi_ring(W).

Given V, this is a linear first-order ODE for W whose solution with
W(x1) = -x1 is

    log(-W/x) = int_{x1}^x (g(y) - 1/y) dy,   g = (3 - a - (1-a) V_x) / (2V).

The integrand (g - 1/y) dy is smooth in log(y + x_s) and tends to a constant
far out, so the integral is taken with a cubic spline in that variable.  One Picard step maps
W to this solution, mixed with the old iterate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .nonlocal1d import (Grid1D, NonlocalOperator, OddGridFunction1D, TailError, TailModel,
                         j_alpha_values, tail_fit)
from .params import DomainError, ModelParameters, japanese_bracket

log = logging.getLogger(__name__)


class PositivityError(RuntimeError):
    """V lost positivity; the iteration diverged."""


def profile_grid(epsilon: float, ratio: float = 1.1, x_min: float = 1e-3,
                 x_switch: float = 1.0, decay_span: float = 6.0) -> Grid1D:
    """Graded grid whose outer end resolves the slow far-field approach.

    The local decay exponent of W relaxes like x^(-9 eps/8), so the grid must
    reach log X_max ~ decay_span / (9 eps / 8) for the tail fit to see the
    asymptotic exponent; 1e6 is the floor.
    """
    if epsilon <= 0:
        raise DomainError("profile grid needs epsilon > 0")
    log_x = max(math.log(1e6), decay_span / (9.0 * epsilon / 8.0))
    log_x = min(log_x, 700.0)
    return Grid1D.graded(x_min=x_min, x_switch=x_switch, x_max=math.exp(log_x),
                         n=None, ratio=ratio)


def phi_one_normalized(x, params: ModelParameters):
    """exp(9/k1 <x>^(-k1 eps)) divided by its value at the origin."""
    k1 = params.kappa1
    lb = np.log(japanese_bracket(x))
    return np.exp(9.0 / k1 * np.expm1(-k1 * params.epsilon * lb))


def _default_weight(params):
    return lambda x: phi_one_normalized(x, params)


@dataclass
class ProfileSolution1D:
    params: ModelParameters
    W: OddGridFunction1D
    V: OddGridFunction1D
    psi_ring: OddGridFunction1D
    j_inf: float
    c_l: float
    c_w: float
    residual_norm: float
    tail: TailModel
    iterations: int
    converged: bool
    initial_residual: float = float("nan")
    history: list = field(default_factory=list)
    V_x: Optional[np.ndarray] = None

    @property
    def alpha_star(self) -> float:
        return -self.c_w / self.c_l

    def summary(self) -> dict:
        return {
            "alpha": self.params.alpha,
            "epsilon": self.params.epsilon,
            "c_l": self.c_l,
            "c_w": self.c_w,
            "j_inf": self.j_inf,
            "alpha_star": self.alpha_star,
            "residual_norm": self.residual_norm,
            "initial_residual": self.initial_residual,
            "tail": self.tail.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "n_nodes": self.W.grid.n,
            "x_max": self.W.grid.x_max,
        }

    def to_files(self, csv_path, json_path):
        from .io import write_csv, write_json
        write_csv(csv_path, ["x", "W", "V", "psi_ring"],
                  [self.W.x, self.W.values, self.V.values, self.psi_ring.values])
        write_json(json_path, self.summary())


class ProfileOperators:
    """psi_ring and its derivative as matrices on one grid (built once)."""

    def __init__(self, params: ModelParameters, grid: Grid1D):
        self.params = params
        self.grid = grid
        self.ring = NonlocalOperator("ring", params.alpha, grid)
        self.dring = NonlocalOperator("dring", params.alpha, grid)


def initial_guess(params: ModelParameters, grid: Grid1D) -> OddGridFunction1D:
    x = grid.nodes
    ah = params.alpha_hat
    v = -x * (1.0 + x * x) ** (-(1.0 + ah) / 2.0)
    return OddGridFunction1D(grid, v, TailModel(A=-1.0, p=ah))


def _refit(W: OddGridFunction1D, decades: float) -> OddGridFunction1D:
    return OddGridFunction1D(W.grid, W.values, tail_fit(W, decades))


def extract_scaling(j_inf: float, alpha: float):
    """Scaling rates from J_a(W)(inf) via the origin normalization."""
    return 2.0 - 4.0 * alpha * j_inf, 2.0 + 2.0 * alpha * (1.0 - alpha) * j_inf


def _velocity(W, ops):
    x = W.x
    pr = ops.ring(W)
    V = x + pr
    Vx = 1.0 + ops.dring(W)
    return V, Vx, pr


def ode_solution(x, V, Vx, alpha, x_s: float = 1.0) -> np.ndarray:
    """Solve 2 V W' = (3 - a - (1-a) V_x) W with W(x1) = -x1 on the nodes x.

    The integrand of log(-W/x) is splined in eta = log(x + x_s), in which the
    graded grid (uniform below x_s, geometric above) is nearly uniform.
    """
    if np.any(V <= 0):
        raise PositivityError("V <= 0 encountered; iteration diverged")
    g = (3.0 - alpha - (1.0 - alpha) * Vx) / (2.0 * V)
    eta = np.log(x + x_s)
    f = (x * g - 1.0) * (x + x_s) / x          # (g - 1/x) dx/deta
    spl = CubicSpline(eta, f)
    integ = spl.antiderivative()(eta)
    integ = integ - integ[0]
    return -x * np.exp(integ)


def picard_map(W: OddGridFunction1D, params: ModelParameters, ops: ProfileOperators,
               fit_decades: float = 1.0):
    """The un-relaxed map W -> ODE solution with V from W; returns (W_new, V, Vx, psi_ring)."""
    V, Vx, pr = _velocity(W, ops)
    xs = W.grid.x_switch if np.isfinite(W.grid.x_switch) else W.x[0]
    wn = ode_solution(W.x, V, Vx, params.alpha, xs)
    return _refit(OddGridFunction1D(W.grid, wn), fit_decades), V, Vx, pr


def picard_step(W: OddGridFunction1D, params: ModelParameters, relax: float = 0.5,
                ops: Optional[ProfileOperators] = None,
                fit_decades: float = 1.0) -> OddGridFunction1D:
    if not 0.0 < relax <= 1.0:
        raise DomainError("relax must lie in (0, 1]")
    ops = ops or ProfileOperators(params, W.grid)
    Wn, _, _, _ = picard_map(W, params, ops, fit_decades)
    mixed = (1.0 - relax) * W.values + relax * Wn.values
    return _refit(OddGridFunction1D(W.grid, mixed), fit_decades)


def _fixed_point_residual(W, Wn, weight, x):
    wt = weight(x)
    return float(np.max(np.abs(wt * (Wn - W))) / np.max(np.abs(wt * W)))


def solve_profile(params: ModelParameters, grid: Optional[Grid1D] = None,
                  tol: float = 1e-10, max_iter: int = 400, relax: float = 0.5,
                  weight: Optional[Callable] = None, fit_decades: float = 1.0,
                  W0: Optional[OddGridFunction1D] = None) -> ProfileSolution1D:
    """Iterate picard_step from the analytic initial guess.

    Convergence is declared when the relative weighted sup norm of the
    fixed-point residual W - T(W) drops below ``tol``; its value at the
    initial guess is kept as ``initial_residual``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    grid = grid or profile_grid(params.epsilon)
    weight = weight or _default_weight(params)
    ops = ProfileOperators(params, grid)
    W = W0 if W0 is not None else initial_guess(params, grid)
    W = _refit(W, fit_decades) if W.tail is None else W
    x = grid.nodes
    history = []
    r0 = None
    converged = False
    it = 0
    Wn, V, Vx, pr = picard_map(W, params, ops, fit_decades)
    while True:
        res = _fixed_point_residual(W.values, Wn.values, weight, x)
        r0 = res if r0 is None else r0
        history.append(res)
        if res < tol:
            converged = True
            break
        if it >= max_iter:
            break
        mixed = (1.0 - relax) * W.values + relax * Wn.values
        W = _refit(OddGridFunction1D(grid, mixed), fit_decades)
        it += 1
        Wn, V, Vx, pr = picard_map(W, params, ops, fit_decades)
    try:
        j_inf = float(j_alpha_values(W, params.alpha, np.inf)[0])
        c_l, c_w = extract_scaling(j_inf, params.alpha)
    except TailError:
        if converged:
            raise
        # an unconverged iterate can still decay too slowly for J(inf) to exist
        j_inf = c_l = c_w = math.nan
    sol = ProfileSolution1D(
        params=params, W=W,
        V=OddGridFunction1D(grid, V), psi_ring=OddGridFunction1D(grid, pr),
        j_inf=j_inf, c_l=c_l, c_w=c_w, residual_norm=history[-1], tail=W.tail,
        iterations=it, converged=converged, initial_residual=history[0],
        history=history, V_x=Vx)
    log.info("profile eps=%.4g: %d iterations, residual %.3e, c_l=%.6g c_w=%.6g",
             params.epsilon, it, history[-1], c_l, c_w)
    return sol


def profile_residual(sol: ProfileSolution1D, weight: Optional[Callable] = None) -> float:
    """sup |weight * (2 V W' - (3 - a - (1-a) V_x) W)|.

    W' comes from the cubic spline of W/x in eta = log(x + x_s), the same
    representation the ODE solve integrates in.
    """
    p = sol.params
    weight = weight or _default_weight(p)
    x = sol.W.x
    W = sol.W.values
    xs = sol.W.grid.x_switch if np.isfinite(sol.W.grid.x_switch) else x[0]
    spl = CubicSpline(np.log(x + xs), W / x)
    dW = W / x + x * spl(np.log(x + xs), 1) / (x + xs)
    R = 2.0 * sol.V.values * dW - (3.0 - p.alpha - (1.0 - p.alpha) * sol.V_x) * W
    return float(np.max(np.abs(weight(x) * R)))
