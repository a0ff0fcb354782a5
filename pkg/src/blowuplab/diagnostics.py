"""Weights, weighted norms, outgoing-flow checks and the asymptotics report."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .biot_savart import Field2D, HalfPlaneGrid
from .nonlocal1d import OddGridFunction1D
from .params import DomainError, ModelParameters

WEIGHTS = ("Gamma", "Gamma_ag", "phi", "X3", "phi_one")


def _eps_power_ratio(lb, e):
    """(1 - exp(-e lb)) / e, continuous at e = 0."""
    lb = np.asarray(lb, float)
    if e == 0.0:
        return lb
    return -np.expm1(-e * lb) / e


def j_hat_surrogate(x, params: ModelParameters):
    """<J> = sqrt(1 + J^2) with J = 6 (1 - <x>^-e) / e and e = hat_eps_beta."""
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise DomainError("j_hat_surrogate needs x >= 0")
    lb = np.log(np.hypot(1.0, x))
    J = 6.0 * _eps_power_ratio(lb, params.hat_eps_beta)
    out = np.sqrt(1.0 + J * J)
    return float(out) if out.ndim == 0 else out


@dataclass
class WeightSpec:
    params: ModelParameters
    selector: str = "X3"
    mu_ne: tuple = (1.0, 4.0, 30.0)
    b_ne: tuple = (-1.2, -0.5, 0.0)
    mu_ctr: float = 1.0
    profile: Optional[Callable] = None       # |W_bar| as a function of |x|, needed by X3
    normalized_one: bool = False              # divide phi_one by its value at the origin

    def __post_init__(self):
        if self.selector not in WEIGHTS:
            raise DomainError(f"unknown weight {self.selector!r}; choose from {WEIGHTS}")
        if len(self.mu_ne) != len(self.b_ne):
            raise DomainError("mu_ne and b_ne must have equal length")


def _radius(point):
    # (r, z) points need ndim >= 2 with a trailing axis of 2; anything else is radii
    p = np.asarray(point, float)
    if p.ndim < 2 or p.shape[-1] != 2:
        return np.abs(p), np.zeros_like(p), np.abs(p)
    r, z = p[..., 0], p[..., 1]
    return r, z, np.hypot(r, z)


def log_weight_eval(spec: WeightSpec, point):
    """log of the selected weight at (r, z) points (shape (..., 2), ndim >= 2) or radii."""
    p = spec.params
    r, z, rho = _radius(point)
    sel = spec.selector
    if sel == "Gamma_ag":
        bz = np.sqrt(1.0 + z * z)
        return p.kappa_ag * (np.log(bz) - np.log(np.abs(r) + bz))
    lbr = 0.5 * np.log1p(rho * rho)
    if sel == "phi_one":
        return _log_phi_one(lbr, spec)
    singular = sel in ("Gamma", "phi", "X3")
    if singular and np.any(rho == 0):
        raise DomainError(f"weight {sel} is singular at the origin")
    lr = np.log(rho)
    if sel == "Gamma":
        lj = np.log(j_hat_surrogate(rho, p))
        return (np.logaddexp((1.0 - p.kappa_O) * lr, 0.0) - p.eps2 * lbr - p.kappa * lj)
    if sel == "phi":
        return np.logaddexp(-p.kappa_O * lr, p.alpha_phi * lr)
    # X3 = max(mu_ctr phi_c, phi_ne), phi_c = |W|^-1 <x>^-eps2 <J>^-kappa phi_one
    if spec.profile is None:
        raise DomainError("the X3 weight needs a profile sample |W_bar|")
    lne = np.max([-math.log(m) + b * lr for m, b in zip(spec.mu_ne, spec.b_ne)], axis=0)
    wbar = np.abs(np.asarray(spec.profile(rho), float))
    lc = (math.log(spec.mu_ctr) - np.log(wbar) - p.eps2 * lbr
          - p.kappa * np.log(j_hat_surrogate(rho, p)) + _log_phi_one(lbr, spec))
    return np.maximum(lc, lne)


def _log_phi_one(lbr, spec):
    p = spec.params
    k1 = p.kappa1
    if spec.normalized_one:
        return 9.0 / k1 * np.expm1(-k1 * p.epsilon * lbr)
    return 9.0 / k1 * np.exp(-k1 * p.epsilon * lbr)


def weight_eval(spec: WeightSpec, point):
    """The selected weight; phi_one (and X3 through it) overflows to inf unless normalized."""
    with np.errstate(over="ignore"):
        out = np.exp(log_weight_eval(spec, point))
    return float(out) if np.ndim(out) == 0 else out


def _samples(fld):
    if isinstance(fld, OddGridFunction1D):
        return fld.values, fld.x
    if isinstance(fld, Field2D):
        R, Z = fld.grid.mesh()
        return fld.values, np.stack([R, Z], axis=-1)
    raise DomainError("weighted_sup_norm takes an OddGridFunction1D or a Field2D")


def log_weighted_sup_norm(fld, spec: WeightSpec) -> float:
    vals, pts = _samples(fld)
    a = np.abs(vals)
    nz = a > 0
    if not np.any(nz):
        return -math.inf
    lw = log_weight_eval(spec, pts)
    return float(np.max(np.log(a[nz]) + np.broadcast_to(lw, a.shape)[nz]))


def weighted_sup_norm(fld, spec: WeightSpec) -> float:
    """max over nodes of |field * weight| (computed in log form)."""
    lv = log_weighted_sup_norm(fld, spec)
    if lv == -math.inf:
        return 0.0
    with np.errstate(over="ignore"):
        return float(np.exp(lv))


# ---------------------------------------------------------------------------
# velocity fields and trajectories


@dataclass
class VelocityField:
    """Q = (q_r, q_z) on a HalfPlaneGrid (q_r odd in r and even in z, q_z the reverse)."""
    grid: HalfPlaneGrid
    q_r: np.ndarray
    q_z: np.ndarray

    @classmethod
    def from_function(cls, grid: HalfPlaneGrid, f: Callable):
        R, Z = grid.mesh()
        qr, qz = f(R, Z)
        return cls(grid, np.broadcast_to(qr, R.shape).copy(), np.broadcast_to(qz, R.shape).copy())

    def __post_init__(self):
        g = self.grid
        rr = np.concatenate([-g.r[:0:-1], g.r])
        zz = np.concatenate([-g.z[::-1], [0.0], g.z])

        def ext(v, pr, pz):
            v = np.concatenate([pr * v[:0:-1], v], axis=0)
            z0 = np.zeros((rr.size, 1)) if pz < 0 else None
            if pz < 0:
                return np.concatenate([-v[:, ::-1], z0, v], axis=1)
            # even in z: value at z = 0 by quadratic extrapolation in z^2
            z1, z2 = g.z[0], g.z[1]
            v0 = (z2 ** 2 * v[:, 0] - z1 ** 2 * v[:, 1]) / (z2 ** 2 - z1 ** 2)
            return np.concatenate([v[:, ::-1], v0[:, None], v], axis=1)

        self._sr = RectBivariateSpline(rr, zz, ext(self.q_r, -1, 1), kx=3, ky=3)
        self._sz = RectBivariateSpline(rr, zz, ext(self.q_z, 1, -1), kx=3, ky=3)
        self._box = (rr[-1], zz[-1])

    def inside(self, r, z) -> bool:
        return abs(r) <= self._box[0] and abs(z) <= self._box[1]

    def __call__(self, r, z):
        return self._sr.ev(r, z), self._sz.ev(r, z)


def _as_field(Q, grid=None):
    if isinstance(Q, VelocityField):
        return Q
    if callable(Q):
        return Q
    raise DomainError("Q must be a VelocityField or a callable (r, z) -> (q_r, q_z)")


def outgoing_check(Q: VelocityField, exclusion_radius: Optional[float] = None) -> float:
    """min over nodes with |x| >= exclusion_radius of (Q . x) / |x|^2."""
    g = Q.grid
    if exclusion_radius is None:
        exclusion_radius = g.min_cell()
    if not exclusion_radius > 0:
        raise DomainError("exclusion_radius must be positive")
    R, Z = g.mesh()
    rho2 = R * R + Z * Z
    mask = rho2 >= exclusion_radius ** 2
    ratio = (Q.q_r * R + Q.q_z * Z)[mask] / rho2[mask]
    return float(np.min(ratio))


@dataclass
class TrajectoryReport:
    x0: tuple
    s: np.ndarray
    path: np.ndarray                  # (n, 2) samples of X(s, x0)
    lambda_empirical: float
    lambda_bound: float
    bound_violation: bool
    monotone_forward: bool
    exited: bool
    max_bound_ratio: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s"] = self.s.tolist()
        d["path"] = self.path.tolist()
        return d


def _rk4_path(f, x0, h, n, inside):
    out = [np.asarray(x0, float)]
    x = out[0]
    exited = False
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        if not inside(x):
            exited = True
            break
        out.append(x)
    return np.array(out), exited


def trajectory_integrate(Q, x0, s_range=(-2.0, 1.0), dt: float = 1e-2,
                         lam: Optional[float] = None, r_floor: float = 0.0,
                         rtol: float = 1e-6) -> TrajectoryReport:
    """RK4 for dX/ds = Q(X) from X(0) = x0 over s in s_range (s_range[0] <= 0 <= s_range[1]).

    The backward branch is checked against |X(s)| <= |x0| e^(lam s) (relative
    slack ``rtol``, above the RK4 error at the default dt); it stops once
    |X| < r_floor, where an interpolated Q is no longer meaningful.  The
    forward branch is checked for strictly growing |X| and stops when the
    path leaves the field's box.
    """
    s0, s1 = s_range
    if not s0 <= 0.0 <= s1 or dt <= 0:
        raise DomainError("need s_range[0] <= 0 <= s_range[1] and dt > 0")
    Q = _as_field(Q)

    def f(x):
        qr, qz = Q(x[0], x[1])
        return np.array([float(qr), float(qz)])

    box_inside = Q.inside if isinstance(Q, VelocityField) else (lambda r, z: True)
    x0 = np.asarray(x0, float)
    nb = int(round(-s0 / dt))
    nf = int(round(s1 / dt))
    back, _ = _rk4_path(f, x0, -dt, nb, lambda x: np.hypot(*x) >= r_floor and box_inside(*x))
    fwd, exited = _rk4_path(f, x0, dt, nf, lambda x: box_inside(*x))
    sb = -dt * np.arange(back.shape[0])
    sf = dt * np.arange(fwd.shape[0])
    s = np.concatenate([sb[::-1], sf[1:]])
    path = np.concatenate([back[::-1], fwd[1:]])
    rad = np.hypot(path[:, 0], path[:, 1])
    qs = np.array([f(x) for x in path])
    ok = rad > 0
    lam_emp = float(np.min(np.sum(qs[ok] * path[ok], axis=1) / rad[ok] ** 2))
    lam_b = lam_emp if lam is None else float(lam)
    nb_ = back.shape[0]
    rb = np.hypot(back[:, 0], back[:, 1])
    bound = np.linalg.norm(x0) * np.exp(lam_b * sb)
    ratio = rb / bound
    violation = bool(np.any(ratio > 1.0 + rtol))
    rf = np.hypot(fwd[:, 0], fwd[:, 1])
    monotone = bool(np.all(np.diff(rf) > 0)) if rf.size > 1 else True
    return TrajectoryReport(x0=tuple(x0.tolist()), s=s, path=path, lambda_empirical=lam_emp,
                            lambda_bound=lam_b, bound_violation=violation,
                            monotone_forward=monotone, exited=exited,
                            max_bound_ratio=float(ratio.max()) if nb_ else 1.0)


# ---------------------------------------------------------------------------
# asymptotics


@dataclass
class AsymptoticsReport:
    epsilon: float
    rows: dict = field(default_factory=dict)
    T_alpha: float = float("nan")
    converged: bool = True

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "rows": self.rows, "T_alpha": self.T_alpha,
                "converged": self.converged}


def _row(value, target):
    dev = (value - target) / abs(target) if target != 0 else value - target
    return {"value": float(value), "target": float(target), "relative_deviation": float(dev)}


def asymptotics_report(sol=None, series=None, *, epsilon: Optional[float] = None,
                       alpha: Optional[float] = None, c_l: Optional[float] = None,
                       c_w: Optional[float] = None, tail_p: Optional[float] = None,
                       tail_A: Optional[float] = None, c_x: Optional[float] = None,
                       converged: Optional[bool] = None) -> AsymptoticsReport:
    """Compare measured scalings with their leading-order forms.

    Values come from a ProfileSolution1D (and an optional TimeSeries for the
    fitted c_x); keyword arguments override them.  The alpha_star row is
    reported against 1/3 + eps/8 as a plain difference in units of eps.
    """
    if sol is not None:
        epsilon = sol.params.epsilon if epsilon is None else epsilon
        alpha = sol.params.alpha if alpha is None else alpha
        c_l = sol.c_l if c_l is None else c_l
        c_w = sol.c_w if c_w is None else c_w
        tail_p = sol.tail.p if tail_p is None and sol.tail is not None else tail_p
        tail_A = sol.tail.A if tail_A is None and sol.tail is not None else tail_A
        converged = sol.converged if converged is None else converged
    if epsilon is None or c_l is None or c_w is None:
        raise DomainError("need epsilon, c_l and c_w")
    if alpha is None:
        alpha = 1.0 / 3.0 - epsilon
    if c_x is None and series is not None:
        from .rescaling import fit_blowup_exponent
        c_x = fit_blowup_exponent(series)
    rep = AsymptoticsReport(epsilon=float(epsilon), converged=bool(True if converged is None else converged))
    rows = rep.rows
    a_star = -c_w / c_l if c_l != 0 else math.nan
    if epsilon > 0:
        rows["c_l"] = _row(c_l, 64.0 / (9.0 * epsilon))
        rows["c_w"] = _row(c_w, -64.0 / (27.0 * epsilon))
    target = 1.0 / 3.0 + epsilon / 8.0
    rows["alpha_star"] = {"value": a_star, "target": target,
                          "relative_deviation": (a_star - target) / target,
                          "deviation_over_eps": (a_star - target) / epsilon if epsilon > 0 else math.nan}
    if tail_p is not None:
        rows["tail_p"] = _row(tail_p, a_star)
    if tail_A is not None:
        rows["tail_A"] = _row(tail_A, -6.0)
    if a_star > alpha:
        cx_pred = 1.0 / (a_star - alpha)
        rows["c_x_predicted"] = _row(cx_pred, 8.0 / (9.0 * epsilon)) if epsilon > 0 else {"value": cx_pred}
        if c_x is not None:
            rows["c_x_fit_vs_alpha_star"] = _row(c_x, cx_pred)
    if c_x is not None and epsilon > 0:
        rows["c_x_fit_vs_leading"] = _row(c_x, 8.0 / (9.0 * epsilon))
    ct = c_w + alpha * c_l
    rep.T_alpha = -1.0 / ct if ct < 0 else math.inf
    rows["T_alpha"] = _row(rep.T_alpha, 0.125) if math.isfinite(rep.T_alpha) else {"value": math.inf}
    return rep
