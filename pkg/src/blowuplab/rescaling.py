"""Dynamic rescaling: semi-Lagrangian steppers and reconstruction of physical scales.

Rescaled variables follow the rates c_l (space) and c_w (amplitude), fixed
at every step by the origin normalization

    c_l + 2 psi_z(0) = 2,     c_w - (1 - a) psi_z(0) = 2.

The amplitude scale obeys d/ds log C_w = -c_wt with c_wt = c_w + a c_l, the
length scale d/ds log C_l = -c_l, and physical time dt/ds = 1 / C_w.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .biot_savart import (EllipticOperator, Field2D, HalfPlaneGrid,
                          psi_elliptic_solve)
from .nonlocal1d import (NonlocalOperator, OddGridFunction1D, TailFitError,
                         j_alpha_values, tail_fit)
from .params import DomainError, ModelParameters

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    """Too few samples for a fit."""


# ---------------------------------------------------------------------------
# state, configuration, time series


@dataclass
class RescalingState:
    s: float = 0.0
    c_l: float = 2.0
    c_w: float = 2.0
    psi_z0: float = 0.0
    C_w: float = 1.0
    C_l: float = 1.0
    t: float = 0.0
    T_hat: float = math.inf
    alpha: float = 1.0 / 3.0
    extrapolated: bool = False

    @property
    def c_w_theta(self) -> float:
        return self.c_w + self.alpha * self.c_l

    @classmethod
    def initial(cls, params: ModelParameters, c_l: float = 2.0, c_w: float = 2.0,
                C_w0: Optional[float] = None) -> "RescalingState":
        """State at s = 0; C_w(0) defaults to T_a = -1/(c_w + a c_l) when that is positive."""
        ct = c_w + params.alpha * c_l
        if C_w0 is None:
            C_w0 = -1.0 / ct if ct < 0 else 1.0
        if C_w0 <= 0:
            raise DomainError("C_w(0) must be positive")
        return cls(s=0.0, c_l=c_l, c_w=c_w, C_w=C_w0, C_l=1.0, t=0.0,
                   T_hat=_frozen_tail(0.0, C_w0, ct), alpha=params.alpha)

    def advance(self, dt: float, c_l: float, c_w: float, psi_z0: float) -> "RescalingState":
        """Scales at s + dt with the rates held fixed over the step (exact exponentials)."""
        ct = c_w + self.alpha * c_l
        C_w = self.C_w * math.exp(-ct * dt)
        t = self.t + _expm1_ratio(ct, dt) / self.C_w
        return replace(self, s=self.s + dt, c_l=c_l, c_w=c_w, psi_z0=psi_z0,
                       C_w=C_w, C_l=self.C_l * math.exp(-c_l * dt), t=t,
                       T_hat=_frozen_tail(t, C_w, ct))


def _expm1_ratio(c, h):
    """int_0^h exp(c tau) dtau."""
    return math.expm1(c * h) / c if c != 0.0 else h


def _frozen_tail(t, C_w, ct):
    # remaining physical time if c_wt stayed at its current value
    return t - 1.0 / (ct * C_w) if ct < 0 else math.inf


@dataclass
class EvolutionConfig:
    dt: float
    steps: int
    scheme: str = "semi-lagrangian"
    normalize: bool = True
    elliptic_every: int = 1
    output_every: int = 1
    tail_decades: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.steps < 0:
            raise DomainError("steps must be non-negative")
        if self.scheme != "semi-lagrangian":
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.elliptic_every < 1 or self.output_every < 1:
            raise DomainError("cadences must be >= 1")

    def check_rescaled(self, params: ModelParameters):
        if params.epsilon > 0 and self.dt > 0.1 * params.epsilon * (1 + 1e-12):
            raise DomainError(f"dt = {self.dt} exceeds 0.1 eps = {0.1 * params.epsilon}")

    @classmethod
    def rescaled_default(cls, params: ModelParameters, steps: int = 400, **kw):
        return cls(dt=0.05 * params.epsilon, steps=steps, **kw)


_SERIES_KEYS = ("s", "c_l", "c_w", "c_w_theta", "psi_z0", "norm", "residual",
                "C_w", "C_l", "t", "T_hat")


@dataclass
class TimeSeries:
    records: list = field(default_factory=list)
    C_w0: Optional[float] = None

    def append(self, **rec):
        if self.records and rec["s"] < self.records[-1]["s"]:
            raise DomainError("time series must be monotone in s")
        self.records.append({k: float(rec.get(k, math.nan)) for k in _SERIES_KEYS})

    def __len__(self):
        return len(self.records)

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def record_state(self, state: RescalingState, norm=math.nan, residual=math.nan):
        self.append(s=state.s, c_l=state.c_l, c_w=state.c_w, c_w_theta=state.c_w_theta,
                    psi_z0=state.psi_z0, norm=norm, residual=residual, C_w=state.C_w,
                    C_l=state.C_l, t=state.t, T_hat=state.T_hat)

    @classmethod
    def from_rates(cls, s, c_l, c_w, alpha, C_w0=None) -> "TimeSeries":
        ts = cls(C_w0=C_w0)
        for si, a, b in zip(s, c_l, c_w):
            ts.append(s=si, c_l=a, c_w=b, c_w_theta=b + alpha * a)
        return ts

    def to_csv(self, path):
        from .io import write_csv
        write_csv(path, list(_SERIES_KEYS), [self.column(k) for k in _SERIES_KEYS])


# ---------------------------------------------------------------------------
# interpolation helpers


def clamped_cubic(xs, vs, xq):
    """Not-a-knot cubic spline clipped to the two bracketing node values.

    Outside [xs[0], xs[-1]] the end values are held constant.
    """
    xs = np.asarray(xs, float)
    vs = np.asarray(vs, float)
    xq = np.clip(np.asarray(xq, float), xs[0], xs[-1])
    out = CubicSpline(xs, vs)(xq)
    j = np.clip(np.searchsorted(xs, xq) - 1, 0, xs.size - 2)
    lo = np.minimum(vs[j], vs[j + 1])
    hi = np.maximum(vs[j], vs[j + 1])
    return np.clip(out, lo, hi)


class _Signed2D:
    """Bicubic interpolant of a half-plane array extended by parity to the full box."""

    def __init__(self, r, z, values, parity_r: int, parity_z: int, drop_axis=False,
                 clamp=False):
        r0, v0 = (r[1:], values[1:]) if drop_axis else (r, values)
        if r0[0] == 0.0:
            rr = np.concatenate([-r0[:0:-1], r0])
            vv = np.concatenate([parity_r * v0[:0:-1], v0], axis=0)
        else:
            rr = np.concatenate([-r0[::-1], r0])
            vv = np.concatenate([parity_r * v0[::-1], v0], axis=0)
        if parity_z < 0:
            zz = np.concatenate([-z[::-1], [0.0], z])
            vv = np.concatenate([-vv[:, ::-1], np.zeros((rr.size, 1)), vv], axis=1)
        else:
            zz = np.concatenate([-z[::-1], z])
            vv = np.concatenate([vv[:, ::-1], vv], axis=1)
        self.rr, self.zz, self.vv = rr, zz, vv
        self.spl = RectBivariateSpline(rr, zz, vv, kx=3, ky=3)
        self.clamp = clamp

    def __call__(self, r, z):
        r = np.clip(r, self.rr[0], self.rr[-1])
        z = np.clip(z, self.zz[0], self.zz[-1])
        out = self.spl.ev(r, z)
        if self.clamp:
            i = np.clip(np.searchsorted(self.rr, r) - 1, 0, self.rr.size - 2)
            j = np.clip(np.searchsorted(self.zz, z) - 1, 0, self.zz.size - 2)
            v = self.vv
            corners = np.stack([v[i, j], v[i + 1, j], v[i, j + 1], v[i + 1, j + 1]])
            out = np.clip(out, corners.min(axis=0), corners.max(axis=0))
        return out


# ---------------------------------------------------------------------------
# 1D


class RescaledOperators1D:
    """psi_ring and its derivative on a fixed grid, built once per run."""

    def __init__(self, params: ModelParameters, grid):
        self.params = params
        self.grid = grid
        self.ring = NonlocalOperator("ring", params.alpha, grid)
        self.dring = NonlocalOperator("dring", params.alpha, grid)


def stream_1d(w: OddGridFunction1D, params: ModelParameters, ops: RescaledOperators1D):
    """(psi, psi_x, psi_x(0)) on the nodes; psi_x(0) = 2 a J_a(w)(inf)."""
    x = w.x
    if w.compact() and not np.any(w.values):
        z = np.zeros_like(x)
        return z, z.copy(), 0.0
    pz0 = 2.0 * params.alpha * float(j_alpha_values(w, params.alpha, np.inf)[0])
    return ops.ring(w) + pz0 * x, ops.dring(w) + pz0, pz0


def normalized_rates(psi_z0: float, alpha: float):
    return 2.0 - 2.0 * psi_z0, 2.0 + (1.0 - alpha) * psi_z0


def rescaled_rhs_1d(w: OddGridFunction1D, params: ModelParameters, ops: RescaledOperators1D,
                    c_l=None, c_w=None):
    """-(c_l x + 2 psi) w_x + (c_w - (1-a) psi_x) w on the nodes (spline derivative)."""
    psi, psi_x, pz0 = stream_1d(w, params, ops)
    if c_l is None:
        c_l, c_w = normalized_rates(pz0, params.alpha)
    x = w.x
    xs = w.grid.x_switch if np.isfinite(w.grid.x_switch) else x[0]
    eta = np.log(x + xs)
    wx = CubicSpline(eta, w.values)(eta, 1) / (x + xs)
    return -(c_l * x + 2.0 * psi) * wx + (c_w - (1.0 - params.alpha) * psi_x) * w.values


def _refit(values, w, decades):
    out = OddGridFunction1D(w.grid, values)
    if out.compact():
        return out
    try:
        return replace(out, tail=tail_fit(out, decades))
    except TailFitError:
        if w.tail is None:
            raise
        log.warning("tail refit failed; keeping the previous tail model")
        return replace(out, tail=w.tail)


def step_rescaled_1d(w: OddGridFunction1D, state: RescalingState, cfg: EvolutionConfig,
                     params: ModelParameters, ops: Optional[RescaledOperators1D] = None):
    """One semi-Lagrangian step of the rescaled 1D equation.

    Characteristics dX/ds = c_l X + 2 psi(X) are traced backward with RK4 in
    eta = log(X + x_s), x_s the grid's switch point, a coordinate in which the
    graded grid is close to uniform; the amplification c_w - (1-a) psi_x is
    integrated along the same path.  w is interpolated at the foot as
    g = w / (x <x>^(-1-a_hat)), which is smooth and O(1) on the whole grid.
    """
    ops = ops or RescaledOperators1D(params, w.grid)
    alpha = params.alpha
    dt = cfg.dt
    x = w.x
    psi, psi_x, pz0 = stream_1d(w, params, ops)
    if cfg.normalize:
        c_l, c_w = normalized_rates(pz0, alpha)
    else:
        c_l, c_w = state.c_l, state.c_w
    if abs(c_l) * dt > 0.5:
        log.warning("accuracy: |c_l| dt = %.3g exceeds 0.5", abs(c_l) * dt)
    if not np.any(w.values):
        return w, state.advance(dt, c_l, c_w, pz0)

    xs = w.grid.x_switch if np.isfinite(w.grid.x_switch) else x[0]
    eta = np.log(x + xs)
    spl_u = CubicSpline(eta, (c_l * x + 2.0 * psi) / (x + xs))
    spl_a = CubicSpline(eta, c_w - (1.0 - alpha) * psi_x)
    lo, hi = eta[0], eta[-1]

    def rates(e):
        ec = np.clip(e, lo, hi)
        return spl_u(ec), spl_a(ec)

    # backward RK4 for (eta, log amplification)
    u1, a1 = rates(eta)
    u2, a2 = rates(eta - 0.5 * dt * u1)
    u3, a3 = rates(eta - 0.5 * dt * u2)
    u4, a4 = rates(eta - dt * u3)
    foot = eta - dt * (u1 + 2 * u2 + 2 * u3 + u4) / 6.0
    lamp = dt * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0

    ah = params.alpha_hat
    env = x * (1.0 + x * x) ** (-(1.0 + ah) / 2.0)
    xf = np.maximum(np.exp(foot) - xs, 0.0)
    wf = clamped_cubic(eta, w.values / env, foot) * xf * (1.0 + xf * xf) ** (-(1.0 + ah) / 2.0)
    outside = foot > hi
    extrapolated = bool(np.any(outside))
    if extrapolated:
        wf = np.where(outside, w(xf) if w.tail is not None else 0.0, wf)
        log.warning("foot points beyond x_max; tail model used")
    w_new = _refit(wf * np.exp(lamp), w, cfg.tail_decades)
    new = state.advance(dt, c_l, c_w, pz0)
    new.extrapolated = extrapolated
    return w_new, new


def run_rescaled_1d(w0: OddGridFunction1D, cfg: EvolutionConfig, params: ModelParameters,
                    weight: Optional[Callable] = None, C_w0: Optional[float] = None,
                    callback: Optional[Callable] = None):
    """Drive step_rescaled_1d; returns (w, final state, TimeSeries).

    Each record holds the rates used on [s, s + dt] and the scales at s; the
    last record carries the rates of the final field.
    """
    cfg.check_rescaled(params)
    ops = RescaledOperators1D(params, w0.grid)
    weight = weight or (lambda x: np.ones_like(x))
    wt = weight(w0.x)
    _, _, pz0 = stream_1d(w0, params, ops)
    c_l, c_w = normalized_rates(pz0, params.alpha)
    state = RescalingState.initial(params, c_l, c_w, C_w0)
    state.psi_z0 = pz0
    series = TimeSeries(C_w0=state.C_w)
    w = w0
    for n in range(cfg.steps):
        w_new, new = step_rescaled_1d(w, state, cfg, params, ops)
        if n % cfg.output_every == 0:
            rec = replace(state, c_l=new.c_l, c_w=new.c_w, psi_z0=new.psi_z0)
            series.record_state(rec, norm=float(np.max(np.abs(wt * w.values))))
        if callback is not None:
            callback(n, w_new, new)
        w, state = w_new, new
    _, _, pz0 = stream_1d(w, params, ops)
    c_l, c_w = normalized_rates(pz0, params.alpha)
    final = replace(state, c_l=c_l, c_w=c_w, psi_z0=pz0)
    series.record_state(final, norm=float(np.max(np.abs(wt * w.values))))
    return w, final, series


# ---------------------------------------------------------------------------
# 2D


def _with_values(Omega: Field2D, values) -> Field2D:
    return Field2D(Omega.grid, values, support=Omega.support or Omega.box())


def _semi_lagrangian_2d(grid: HalfPlaneGrid, vr, vz, dt):
    """Midpoint back-trace from every node; returns foot coordinates (signed r)."""
    R, Z = grid.mesh()
    Ir = _Signed2D(grid.r, grid.z, vr, -1, 1)
    Iz = _Signed2D(grid.r, grid.z, vz, 1, -1)
    rm = R - 0.5 * dt * vr
    zm = Z - 0.5 * dt * vz
    rf = R - dt * Ir(rm, zm)
    zf = Z - dt * Iz(rm, zm)
    return rf, zf


def _elliptic(Omega, params, operator):
    return psi_elliptic_solve(_with_values(Omega, Omega.values), params, bc="kernel",
                              operator=operator)


def step_rescaled_2d(Omega: Field2D, state: RescalingState, cfg: EvolutionConfig,
                     params: ModelParameters, operator: Optional[EllipticOperator] = None,
                     stream=None, far_j: float = 0.0):
    """One step of the rescaled 2D equation; ``stream`` reuses a frozen solve.

    ``far_j`` is the part of J_3D(inf) carried by data outside the box (for
    slowly decaying data such as an extended profile).  Its contribution
    2 a far_j z is added to psi, which is the leading far-field term near the
    origin; ``far_j = J(inf) - psi_z(0) / (2 a)`` of the box solve.
    Returns (Omega_new, state_new, stream result used).
    """
    g = Omega.grid
    alpha = params.alpha
    dt = cfg.dt
    if not np.any(Omega.values):
        c_l, c_w = normalized_rates(0.0, alpha) if cfg.normalize else (state.c_l, state.c_w)
        return Omega, state.advance(dt, c_l, c_w, 0.0), stream
    res = stream if stream is not None else _elliptic(Omega, params, operator)
    # normalize with the slope of the stream that is transported; 2 a J_3D(inf)
    # is the same number analytically but a separate quadrature numerically
    pz0 = res.psi_z_origin + 2.0 * alpha * far_j
    R, Z = g.mesh()
    psi = res.psi + 2.0 * alpha * far_j * Z
    psi_z = res.psi_z + 2.0 * alpha * far_j
    if cfg.normalize:
        c_l, c_w = normalized_rates(pz0, alpha)
    else:
        c_l, c_w = state.c_l, state.c_w
    qr = c_l * R - R * psi_z
    qz = c_l * Z + 2.0 * psi + R * res.psi_r
    amp = c_w - (1.0 - alpha) * psi_z
    rf, zf = _semi_lagrangian_2d(g, qr, qz, dt)
    Ia = _Signed2D(g.r, g.z, amp, 1, 1)
    Iw = _Signed2D(g.r, g.z, Omega.values, 1, -1, clamp=True)
    new = Iw(rf, zf) * np.exp(0.5 * dt * (amp + Ia(rf, zf)))
    return _with_values(Omega, new), state.advance(dt, c_l, c_w, pz0), res


def step_physical_2d(Omega: Field2D, cfg: EvolutionConfig, params: ModelParameters,
                     operator: Optional[EllipticOperator] = None, stream=None,
                     dt: Optional[float] = None):
    """One step of the physical-time equation.

    Off the axis the transported quantity q = Omega r^(a-1) is interpolated
    (clamped bicubic), so its node-wise maximum cannot grow.  Feet closer to
    the axis than the first r node use the linear interpolant of Omega times
    r^(a-1); axis nodes carry Omega with the factor exp(-(1-a) int psi_z).
    Returns (Omega_new, stream result used).
    """
    g = Omega.grid
    alpha = params.alpha
    dt = cfg.dt if dt is None else dt
    if not np.any(Omega.values):
        return Omega, stream
    res = stream if stream is not None else _elliptic(Omega, params, operator)
    R, Z = g.mesh()
    ur = -R * res.psi_z
    uz = 2.0 * res.psi + R * res.psi_r
    rf, zf = _semi_lagrangian_2d(g, ur, uz, dt)
    r1 = g.r[1]
    q = Omega.values[1:] * g.r[1:, None] ** (alpha - 1.0)
    Iq = _Signed2D(g.r[1:], g.z, q, 1, -1, clamp=True)
    ar = np.abs(rf)
    new = np.empty_like(Omega.values)
    off = ar >= r1
    new[off] = Iq(ar[off], zf[off]) * R[off] ** (1.0 - alpha)
    near = ~off
    near[0] = False
    if np.any(near):
        # linear in r between the axis and r_1, clamped cubic in z along each
        za = zf[near]
        om0 = _odd_line(g.z, Omega.values[0], za)
        om1 = _odd_line(g.z, Omega.values[1], za)
        t = ar[near] / r1
        om = (1.0 - t) * om0 + t * om1
        new[near] = om * np.maximum(ar[near], 1e-300) ** (alpha - 1.0) * R[near] ** (1.0 - alpha)
    # axis: u_r = 0, so the foot stays on the axis
    pz = res.psi_z[0]
    za = zf[0]
    pz_f = np.interp(np.abs(za), g.z, pz)
    new[0] = _odd_line(g.z, Omega.values[0], za) * np.exp(-0.5 * (1.0 - alpha) * dt * (pz + pz_f))
    return _with_values(Omega, new), res


def _odd_line(z, v, zq):
    zz = np.concatenate([-z[::-1], [0.0], z])
    vv = np.concatenate([-v[::-1], [0.0], v])
    return clamped_cubic(zz, vv, zq)


def physical_dt(Omega: Field2D, params: ModelParameters, cfl: float = 0.25,
                operator: Optional[EllipticOperator] = None) -> float:
    """cfl * min cell / max speed for the current field."""
    res = _elliptic(Omega, params, operator)
    speed = float(np.max(np.hypot(res.u_r, res.u_z)))
    return cfl * Omega.grid.min_cell() / max(speed, 1e-300)


def transport_sup(Omega: Field2D, alpha: float) -> float:
    """max over off-axis nodes of |Omega r^(a-1)|."""
    r = Omega.grid.r[1:, None]
    return float(np.max(np.abs(Omega.values[1:] * r ** (alpha - 1.0))))


# ---------------------------------------------------------------------------
# scales and the blowup exponent


def reconstruct_scales(series: TimeSeries, params: ModelParameters,
                       C_w0: Optional[float] = None) -> TimeSeries:
    """Recompute C_w, C_l, t and T_hat from the recorded rates.

    Rates are taken piecewise linear in s (trapezoid rule for log C_w and
    log C_l); t integrates 1/C_w exactly on each interval for that
    piecewise-linear log C_w.  T_hat adds the remaining time with c_wt frozen
    at its last value.
    """
    if len(series) == 0:
        raise DomainError("empty time series")
    s = series.column("s")
    cl = series.column("c_l")
    cw = series.column("c_w")
    ct = cw + params.alpha * cl
    if C_w0 is None:
        C_w0 = series.C_w0 if series.C_w0 is not None else (-1.0 / ct[0] if ct[0] < 0 else 1.0)
    h = np.diff(s)
    dlogw = -0.5 * h * (ct[1:] + ct[:-1])
    logw = math.log(C_w0) + np.concatenate([[0.0], np.cumsum(dlogw)])
    logl = np.concatenate([[0.0], np.cumsum(-0.5 * h * (cl[1:] + cl[:-1]))])
    # int over the interval of exp(-logw), logw linear: exp(-logw0) h (1 - e^-d)/d
    d = dlogw
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(np.abs(d) > 1e-12, -np.expm1(-d) / d, 1.0 - 0.5 * d)
    dt_phys = np.exp(-logw[:-1]) * h * fac
    t = np.concatenate([[0.0], np.cumsum(dt_phys)])
    out = TimeSeries(C_w0=C_w0)
    for k, rec in enumerate(series.records):
        Cw = math.exp(logw[k])
        out.append(**{**rec, "c_w_theta": ct[k], "C_w": Cw, "C_l": math.exp(logl[k]),
                      "t": t[k], "T_hat": _frozen_tail(t[k], Cw, ct[k])})
    return out


def fit_blowup_exponent(series: TimeSeries, min_samples: int = 20) -> float:
    """Least-squares slope of log C_l against log(T_hat - t), T_hat from the last record."""
    if len(series) == 0:
        raise InsufficientDataError("empty time series")
    T = series.records[-1]["T_hat"]
    if not math.isfinite(T):
        raise InsufficientDataError("blowup time not finite")
    t = series.column("t")
    Cl = series.column("C_l")
    ok = t < T
    if np.count_nonzero(ok) < min_samples:
        raise InsufficientDataError(f"{np.count_nonzero(ok)} samples with t < T_hat, need {min_samples}")
    slope, _ = np.polyfit(np.log(T - t[ok]), np.log(Cl[ok]), 1)
    return float(slope)
