"""Axisymmetric Biot-Savart law with vorticity weight r^(alpha-1).

The stream function solves the 5D Poisson problem

    -(psi_rr + 3 psi_r / r + psi_zz) = c * Omega * r^(alpha-1)

with c = ModelParameters.kappa_poisson, for Omega odd in z.  Two independent routes are provided:

* kernel quadrature of the convolution formula, where the angular integral
  I(a, b) = int_0^pi sin^2(t) (a - b cos t)^(-3/2) dt is evaluated in closed
  form through complete elliptic integrals (power series when b/a is small);
* a finite-volume solve with r^3 fluxes on a graded (r, z) grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, sparse
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import splu
from scipy.special import ellipe, ellipkm1, poch

from .params import DomainError, ModelParameters, QuadratureError

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


# ---------------------------------------------------------------------------
# the angular integral and its derivatives

_N_SERIES = 48


@lru_cache(maxsize=1)
def _series_coeffs():
    k = np.arange(_N_SERIES)
    lg = np.array([math.lgamma(kk + 1) + math.lgamma(kk + 2) for kk in k])
    return np.array([poch(1.5, 2 * kk) for kk in k]) / 2.0 ** (2 * k + 1) / np.exp(lg)


def ring_integral(r, rt, s, derivatives: bool = False):
    """I = int_0^pi sin^2 t (a - b cos t)^(-3/2) dt, a = r^2+rt^2+s^2, b = 2 r rt.

    With ``derivatives`` also returns dI/da and dI/db.
    """
    r, rt, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(rt, float),
                                   np.asarray(s, float))
    a = r * r + rt * rt + s * s
    b = 2.0 * r * rt
    amb = (r - rt) ** 2 + s * s          # a - b without cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(a > 0, b / a, 0.0)
    small = beta <= 0.5
    I = np.empty_like(a)
    Ia = np.empty_like(a) if derivatives else None
    Ib = np.empty_like(a) if derivatives else None
    c = _series_coeffs()
    if np.any(small):
        aa, bb = a[small], beta[small]
        x2 = bb * bb
        # sum_k c_k beta^(2k) and the two derivative sums, by Horner
        p0 = np.zeros_like(aa)
        p1 = np.zeros_like(aa)
        p2 = np.zeros_like(aa)
        for kk in range(_N_SERIES - 1, -1, -1):
            p0 = p0 * x2 + c[kk]
            p1 = p1 * x2 + c[kk] * (-1.5 - 2 * kk)
            p2 = p2 * x2 + c[kk] * 2 * kk
        I[small] = math.pi * aa ** -1.5 * p0
        if derivatives:
            Ia[small] = math.pi * aa ** -2.5 * p1
            # d/db of b^(2k) a^(-3/2-2k) = 2k b^(2k-1) a^(...): factor out b/a^2
            with np.errstate(divide="ignore", invalid="ignore"):
                Ib[small] = np.where(bb > 0, math.pi * aa ** -2.5 * p2 / np.where(bb > 0, bb, 1.0), 0.0)
    big = ~small
    if np.any(big):
        aa, bb, dd = a[big], b[big], amb[big]
        S = aa + bb
        p = dd / S                        # 1 - m
        m = 1.0 - p
        K = ellipkm1(p)
        E = ellipe(m)
        F = aa * K - S * E
        I[big] = 4.0 / (bb * bb * np.sqrt(S)) * F
        if derivatives:
            dK = (E - p * K) / (2.0 * m * p)
            dE = (E - K) / (2.0 * m)
            dm_da = -2.0 * bb / (S * S)
            dm_db = 2.0 * aa / (S * S)
            dF_da = K + (aa * dK - S * dE) * dm_da - E
            dF_db = (aa * dK - S * dE) * dm_db - E
            sq = np.sqrt(S)
            Ia[big] = 4.0 / (bb * bb) * (-0.5 * F / (S * sq) + dF_da / sq)
            Ib[big] = 4.0 * (-2.0 * F / (bb ** 3 * sq) - 0.5 * F / (bb * bb * S * sq)
                             + dF_db / (bb * bb * sq))
    if derivatives:
        return I, Ia, Ib
    return I


# ---------------------------------------------------------------------------
# H(a) identity


def h_kernel(a: float, alpha: float, tol: float = 1e-12, limit: int = 400) -> float:
    """int_0^inf [h(a, y) - h(1, y)] dy with h(a, y) = y^(2+alpha) / (y^2 + a^2)^(3/2).

    Evaluated from the defining integral by adaptive quadrature.  The
    difference of the two terms is formed as y^(alpha-1) times a cancellation
    free expression so the y^(alpha-3) tail is integrated accurately.
    """
    a = abs(float(a))
    if a == 0.0:
        raise DomainError("h_kernel needs a != 0")
    if tol <= 0:
        raise DomainError("tol must be positive")
    if a == 1.0:
        return 0.0

    def f(y):
        # y^(2+al) [(y^2+a^2)^(-3/2) - (y^2+1)^(-3/2)]
        la = np.log1p((a * a) / (y * y)) if y > 0 else 0.0
        l1 = np.log1p(1.0 / (y * y)) if y > 0 else 0.0
        if y == 0.0:
            return 0.0
        return y ** (alpha - 1.0) * math.exp(-1.5 * l1) * math.expm1(-1.5 * (la - l1))

    breaks = sorted({0.0, min(a, 1.0), max(a, 1.0), 10.0, 100.0, 1e4})
    total, err = 0.0, 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=tol / 10, epsrel=1e-13, limit=limit)
        total += v
        err += e
    v, e = integrate.quad(f, breaks[-1], np.inf, epsabs=tol / 10, epsrel=1e-13, limit=limit)
    total += v
    err += e
    if err > max(tol, 1e-12 * abs(total)):
        raise QuadratureError("h_kernel quadrature failed", err)
    return total


# ---------------------------------------------------------------------------
# grids and fields


def _graded_axis(n: int, core: float, length: float, include_zero: bool,
                 core_fraction: float = 0.75) -> np.ndarray:
    """n nodes: uniform on [0, core], then geometric out to ``length``."""
    m = max(2, int(round(core_fraction * n)))
    h = core / m
    rest = n - m - (1 if include_zero else 0)
    if rest <= 0 or core >= length:
        x = np.linspace(0.0, length, n + (0 if include_zero else 1))
        return x if include_zero else x[1:]
    # solve h (rho + ... + rho^rest) = length - core for rho
    target = (length - core) / h
    lo, hi = 1.0 + 1e-12, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        tot = mid * (mid ** rest - 1.0) / (mid - 1.0)
        if tot < target:
            lo = mid
        else:
            hi = mid
    rho = 0.5 * (lo + hi)
    if rho <= 1.0 + 1e-9:
        x_out = core + h * np.arange(1, rest + 1)
    else:
        x_out = core + h * rho * (rho ** np.arange(1, rest + 1) - 1.0) / (rho - 1.0)
    x_out[-1] = length
    inner = h * np.arange(0 if include_zero else 1, m + 1)
    return np.concatenate([inner, x_out])


@dataclass(frozen=True)
class HalfPlaneGrid:
    """r nodes including the axis r = 0; z nodes strictly positive (z = 0 implied)."""
    r: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, float)
        z = np.asarray(self.z, float)
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise DomainError("r nodes must start at the axis and increase")
        if z[0] <= 0.0 or np.any(np.diff(z) <= 0):
            raise DomainError("z nodes must be positive and increasing")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "z", z)

    @classmethod
    def graded(cls, nr: int = 128, nz: int = 128, r_core: float = 6.0, z_core: float = 4.0,
               r_max: float = 50.0, z_max: float = 50.0, core_fraction: float = 0.75):
        return cls(_graded_axis(nr, r_core, r_max, True, core_fraction),
                   _graded_axis(nz, z_core, z_max, False, core_fraction))

    @property
    def shape(self):
        return (self.r.size, self.z.size)

    @property
    def r_max(self):
        return float(self.r[-1])

    @property
    def z_max(self):
        return float(self.z[-1])

    def mesh(self):
        return np.meshgrid(self.r, self.z, indexing="ij")

    def min_cell(self):
        return float(min(np.diff(self.r).min(), np.diff(np.concatenate([[0.0], self.z])).min()))


@dataclass
class Field2D:
    """Omega(r_i, z_j) for z_j > 0; odd extension in z is implied.

    ``func`` (vectorized callable of (r, z), z >= 0) replaces interpolation of
    the nodal values inside the kernel quadrature when given.  ``r_profile``
    marks data constant in r, Omega(r, z) = r_profile(z).
    """
    grid: HalfPlaneGrid
    values: np.ndarray
    func: Optional[Callable] = None
    support: Optional[tuple] = None
    r_profile: Optional[Callable] = None
    tails: Optional[tuple] = None
    _spline: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != self.grid.shape:
            raise DomainError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        self.values = v

    @classmethod
    def from_function(cls, grid: HalfPlaneGrid, f: Callable, support=None, keep_func=True):
        R, Z = grid.mesh()
        return cls(grid, f(R, Z), func=f if keep_func else None, support=support)

    @classmethod
    def constant_in_r(cls, grid: HalfPlaneGrid, w: Callable):
        R, Z = grid.mesh()
        return cls(grid, w(Z) * np.ones_like(R), func=lambda r, z: w(z) * np.ones_like(r),
                   r_profile=w)

    def compact(self) -> bool:
        v = self.values
        return bool(np.all(v[-2:, :] == 0) and np.all(v[:, -2:] == 0))

    def box(self):
        if self.support is not None:
            return float(self.support[0]), float(self.support[1])
        return self.grid.r_max, self.grid.z_max

    def evaluate(self, r, z):
        """Omega at (r, z) with z >= 0."""
        if self.func is not None:
            return self.func(r, z)
        if self._spline is None:
            g = self.grid
            zz = np.concatenate([-g.z[::-1], [0.0], g.z])
            vv = np.concatenate([-self.values[:, ::-1], np.zeros((g.r.size, 1)), self.values], axis=1)
            self._spline = RectBivariateSpline(g.r, zz, vv, kx=3, ky=3)
        return self._spline.ev(r, z)

    def check(self):
        if self.r_profile is None and self.support is None and self.func is None and not self.compact():
            raise DomainError("tail-undetermined: field is not compactly supported on its grid")


@dataclass
class StreamFunctionResult:
    r: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    psi_r: np.ndarray
    psi_z: np.ndarray
    method: str
    psi_z_origin: float = float("nan")
    error_estimate: float = float("nan")
    u_r: Optional[np.ndarray] = None
    u_z: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {"method": self.method, "psi_z_origin": self.psi_z_origin,
                "error_estimate": self.error_estimate}


def velocities_from_psi(res: StreamFunctionResult) -> StreamFunctionResult:
    r = np.asarray(res.r, float)
    res.u_r = -r * res.psi_z
    res.u_z = 2.0 * res.psi + r * res.psi_r
    return res


# ---------------------------------------------------------------------------
# kernel quadrature

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (6, 10)}


def _panel_rule(breaks, n):
    x, w = _GL[n]
    br = np.asarray(breaks, float)
    lo, hi = br[:-1], br[1:]
    mid = 0.5 * (lo + hi)[:, None]
    half = 0.5 * (hi - lo)[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def _breaks(lo, hi, base, singular, delta0, ratio=0.3, levels=14):
    pts = [lo, hi] + [b for b in base if lo < b < hi]
    for c in singular:
        if c < lo - delta0 or c > hi + delta0:
            continue
        if lo <= c <= hi:
            pts.append(c)
        d = delta0
        for _ in range(levels):
            for q in (c - d, c + d):
                if lo < q < hi:
                    pts.append(q)
            d *= ratio
    pts = np.unique(np.asarray(pts, float))
    keep = np.concatenate([[True], np.diff(pts) > 1e-13 * max(1.0, abs(hi))])
    return pts[keep]


def default_base_breaks(length, h0=0.5, uniform_to=None, growth=1.35):
    """Uniform panels of size h0 up to ``uniform_to`` then geometric growth."""
    uniform_to = length if uniform_to is None else min(uniform_to, length)
    pts = list(np.arange(0.0, uniform_to, h0)) + [uniform_to]
    x, h = uniform_to, h0
    while x < length:
        h *= growth
        x = min(length, x + h)
        pts.append(x)
    return np.unique(pts)


def _point_rule(r, z, box, base_r, base_z, n, delta0):
    R, Z = box
    br = _breaks(0.0, R, base_r, [r, 0.0], delta0)
    bz = _breaks(0.0, Z, base_z, [z, 0.0], delta0)
    rn, rw = _panel_rule(br, n)
    zn, zw = _panel_rule(bz, n)
    return rn, rw, zn, zw


def _kernel_sums(r, z, rn, zn, weights, alpha, derivs):
    RT = rn[:, None]
    ZT = zn[None, :]
    sm = z - ZT
    sp = z + ZT
    if derivs:
        Im, Iam, Ibm = ring_integral(r, RT, sm, True)
        Ip, Iap, Ibp = ring_integral(r, RT, sp, True)
        psi = np.sum(weights * (Im - Ip))
        pz = np.sum(weights * (2 * sm * Iam - 2 * sp * Iap))
        pr = np.sum(weights * ((2 * r * Iam + 2 * RT * Ibm) - (2 * r * Iap + 2 * RT * Ibp)))
        return psi, pr, pz
    Im = ring_integral(r, RT, sm)
    Ip = ring_integral(r, RT, sp)
    return np.sum(weights * (Im - Ip)), 0.0, 0.0


def psi_kernel_quadrature(Omega: Field2D, params: ModelParameters, eval_points,
                          derivatives: bool = True, panel: float = 0.5,
                          base_r=None, base_z=None, error_estimate: bool = True,
                          ) -> StreamFunctionResult:
    """psi (and psi_r, psi_z) at the given (r, z) points by kernel quadrature.

    The source box [0, R] x [0, Z] is cut into Gauss panels graded
    geometrically toward each evaluation point and toward the axis and the
    plane z = 0.  The error estimate is the difference to a 6-point rule on
    the same panels.
    """
    Omega.check()
    pts = np.atleast_2d(np.asarray(eval_points, float))
    if np.any(pts[:, 0] < 0):
        raise DomainError("evaluation points need r >= 0")
    alpha = params.alpha
    box = Omega.box()
    base_r = default_base_breaks(box[0], panel) if base_r is None else base_r
    base_z = default_base_breaks(box[1], panel) if base_z is None else base_z
    pref = 2.0 * params.kappa_psi1 / math.pi
    out = np.zeros((3, len(pts)))
    err = np.zeros(len(pts))
    for k, (r, z) in enumerate(pts):
        zabs = abs(z)
        sgn = 1.0 if z >= 0 else -1.0
        vals = []
        for n in ((10, 6) if error_estimate else (10,)):
            rn, rw, zn, zw = _point_rule(r, zabs, box, base_r, base_z, n, panel)
            om = Omega.evaluate(rn[:, None], zn[None, :])
            wts = (rw[:, None] * zw[None, :]) * rn[:, None] ** (2.0 + alpha) * om
            vals.append(_kernel_sums(r, zabs, rn, zn, wts, alpha, derivatives))
        psi, pr, pz = vals[0]
        out[:, k] = pref * np.array([sgn * psi, sgn * pr, pz])
        if error_estimate:
            err[k] = pref * abs(vals[0][0] - vals[1][0])
    res = StreamFunctionResult(r=pts[:, 0], z=pts[:, 1], psi=out[0], psi_r=out[1],
                               psi_z=out[2], method="kernel",
                               error_estimate=float(err.max()) if error_estimate else float("nan"))
    return velocities_from_psi(res)


# ---------------------------------------------------------------------------
# axis value and J_3D


def _r_tail_difference(R, s1, s2, alpha):
    """int_R^inf y^(2+alpha) [(y^2+s1^2)^(-3/2) - (y^2+s2^2)^(-3/2)] dy."""
    def f(y):
        l1 = math.log1p(s1 * s1 / (y * y))
        l2 = math.log1p(s2 * s2 / (y * y))
        return y ** (alpha - 1.0) * math.exp(-1.5 * l2) * math.expm1(-1.5 * (l1 - l2))
    v, _ = integrate.quad(f, R, np.inf, epsabs=1e-14, epsrel=1e-11, limit=200)
    return v


def _r_tail_j(R, zt, alpha):
    """int_R^inf y^(2+alpha) (y^2+zt^2)^(-5/2) dy."""
    v, _ = integrate.quad(lambda y: y ** (alpha - 3.0) * (1.0 + zt * zt / (y * y)) ** -2.5,
                          R, np.inf, epsabs=1e-15, epsrel=1e-11, limit=200)
    return v


def psi_axis(Omega: Field2D, params: ModelParameters, z: float, panel: float = 0.5,
             r_correction: bool = True, base_r=None, base_z=None) -> float:
    """psi(0, z) = kappa_psi1 int int rt^(2+a) Omega / (rt^2 + (z - zt)^2)^(3/2) (odd in z).

    For data constant in r the r-integral is truncated at the box radius R
    and the part rt > R is added back as a 1D integral in zt.
    """
    if z == 0.0:
        return 0.0
    Omega.check()
    sgn = 1.0 if z > 0 else -1.0
    z = abs(z)
    alpha = params.alpha
    R, Z = Omega.box()
    base_r = default_base_breaks(R, panel) if base_r is None else base_r
    base_z = default_base_breaks(Z, panel) if base_z is None else base_z
    rn, rw, zn, zw = _point_rule(0.0, z, (R, Z), base_r, base_z, 10, panel)
    om = Omega.evaluate(rn[:, None], zn[None, :])
    RT = rn[:, None]
    ZT = zn[None, :]
    ker = RT ** (2.0 + alpha) * ((RT * RT + (z - ZT) ** 2) ** -1.5 - (RT * RT + (z + ZT) ** 2) ** -1.5)
    val = np.sum(rw[:, None] * zw[None, :] * ker * om)
    if r_correction and Omega.r_profile is not None:
        wz = Omega.r_profile(zn)
        corr = np.array([_r_tail_difference(R, z - t, z + t, alpha) for t in zn])
        val += np.sum(zw * wz * corr)
    return sgn * params.kappa_psi1 * val


def j3d(Omega: Field2D, params: ModelParameters, x, panel: float = 0.5,
        r_correction: bool = True, base_r=None, base_z=None) -> float:
    """J_3D over the strip |zt| <= |x|; ``x`` is (r, z), a radius, or np.inf."""
    Omega.check()
    if np.isscalar(x):
        rad = float(abs(x))
    else:
        rad = float(math.hypot(*x))
    if rad == 0.0:
        return 0.0
    alpha = params.alpha
    R, Z = Omega.box()
    Zs = min(Z, rad)
    base_r = default_base_breaks(R, panel) if base_r is None else base_r
    base_z = default_base_breaks(Z, panel) if base_z is None else base_z
    br = _breaks(0.0, R, base_r, [0.0], panel)
    bz = _breaks(0.0, Zs, list(base_z) + [Zs], [0.0], panel)
    rn, rw = _panel_rule(br, 10)
    zn, zw = _panel_rule(bz, 10)
    RT = rn[:, None]
    ZT = zn[None, :]
    om = Omega.evaluate(RT, ZT)
    ker = RT ** (2.0 + alpha) * ZT * (RT * RT + ZT * ZT) ** -2.5
    val = np.sum(rw[:, None] * zw[None, :] * ker * om)
    if r_correction and Omega.r_profile is not None:
        wz = Omega.r_profile(zn)
        corr = np.array([_r_tail_j(R, t, alpha) for t in zn])
        val += np.sum(zw * wz * zn * corr)
    # the integrand is even in zt; the strip covers both signs
    return 3.0 * params.kappa_psi1 / alpha * val


# ---------------------------------------------------------------------------
# finite-volume elliptic solve


class EllipticOperator:
    """Factorized 5D Laplacian on a HalfPlaneGrid with Dirichlet data at r = R, z = Z."""

    def __init__(self, grid: HalfPlaneGrid, params: ModelParameters):
        self.grid = grid
        self.params = params
        r, z = grid.r, grid.z
        M, N = r.size, z.size
        self.nr_in, self.nz_in = M - 1, N - 1        # unknowns: r_0..r_{M-2}, z_1..z_{N-1}
        rh = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])   # cell faces
        self.faces = rh
        self.vol = (rh[1:] ** 4 - rh[:-1] ** 4) / 4.0          # int r^3 dr per cell
        ze = np.concatenate([[0.0], z])
        self.hz_minus = ze[1:-1] - ze[:-2]                     # for z_1..z_{N-1}
        self.hz_plus = ze[2:] - ze[1:-1]
        self.hz_bar = 0.5 * (self.hz_minus + self.hz_plus)
        self._mass_full = self._cell_moments(3.0, axis_basis=False)
        self._build()
        self.source_matrix = self._source_matrix()

    def _build(self):
        r = self.grid.r
        nr, nz = self.nr_in, self.nz_in
        rh = self.faces
        # r part: -[r^3 psi_r]_{faces}; flux coefficients at inner faces i+1/2
        fc = rh[1:-1] ** 3 / np.diff(r)          # face between i and i+1, i = 0..M-2
        diag_r = np.zeros(nr)
        diag_r += fc[:nr]                        # right face of cell i (always exists)
        diag_r[1:] += fc[:nr - 1]                # left face
        off_r = -fc[:nr - 1]
        Tr = sparse.diags([off_r, diag_r, off_r], [-1, 0, 1], shape=(nr, nr))
        # z part scaled by hz_bar: -(psi_{j+1}-psi_j)/h+ + (psi_j-psi_{j-1})/h-
        dz = 1.0 / self.hz_plus + 1.0 / self.hz_minus
        offz = -1.0 / self.hz_plus[:-1]
        Tz = sparse.diags([offz, dz, offz], [-1, 0, 1], shape=(nz, nz))
        Hz = sparse.diags(self.hz_bar)
        # consistent r^3-weighted mass; lumping it costs an h^2 log h error at the axis
        Mr = self._cell_moments(3.0, axis_basis=False)[:, :nr]
        A = sparse.kron(Tr, Hz) + sparse.kron(Mr, Tz)
        self.A = A.tocsc()
        self.lu = splu(self.A)
        self._fc = fc

    def _source_matrix(self):
        """Rows: cells; int over the cell of r^(2+a) times an interpolant of Omega.

        Quadratic through nodes i-1, i, i+1 away from the axis.  The first two
        cells use power bases {1, r^(1-a)} and {1, r^(1-a), r^2}, exact for
        regular data (Omega ~ r^(1-a) at the axis) as well as for data with
        Omega(0, z) != 0.  A linear interpolant here limits the order to about
        1.8 on regular data.
        """
        a = self.params.alpha
        pw = 2.0 + a
        r = self.grid.r
        rh = self.faces
        M = r.size
        gx, gw = np.polynomial.legendre.leggauss(8)
        rows, cols, vals = [], [], []

        def powmom(lo, hi, e):
            return (hi ** (pw + 1 + e) - lo ** (pw + 1 + e)) / (pw + 1 + e)

        for i in range(M - 1):
            lo, hi = rh[i], rh[i + 1]
            if i < 2:
                exps = (0.0, 1.0 - a) if i == 0 else (0.0, 1.0 - a, 2.0)
                nodes = np.arange(len(exps))
                V = r[nodes, None] ** np.array(exps)[None, :]
                V[0, 1:] = 0.0
                m = np.array([powmom(lo, hi, e) for e in exps])
                w = np.linalg.solve(V.T, m)
            else:
                nodes = np.array([i - 1, i, i + 1])
                w = np.zeros(3)
                for a_, b_ in ((lo, r[i]), (r[i], hi)):
                    t = 0.5 * (b_ - a_) * gx + 0.5 * (b_ + a_)
                    wt = 0.5 * (b_ - a_) * gw * t ** pw
                    x0, x1, x2 = r[nodes]
                    L0 = (t - x1) * (t - x2) / ((x0 - x1) * (x0 - x2))
                    L1 = (t - x0) * (t - x2) / ((x1 - x0) * (x1 - x2))
                    L2 = (t - x0) * (t - x1) / ((x2 - x0) * (x2 - x1))
                    w += np.array([wt @ L0, wt @ L1, wt @ L2])
            rows += [i] * len(nodes)
            cols += list(nodes)
            vals += list(w)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(M - 1, M))

    def _cell_moments(self, power, axis_basis):
        """Rows: cells; int over the cell of r^power times the piecewise linear
        interpolant of nodal data (``axis_basis``: {1, r^(1-a)} next to the axis)."""
        a = self.params.alpha
        r = self.grid.r
        rh = self.faces
        M = r.size
        rows, cols, vals = [], [], []

        def mom(lo, hi, k):
            e = 1.0 + power + k
            return (hi ** e - lo ** e) / e

        for i in range(M - 1):
            # left half [rh_i, r_i] uses nodes i-1, i ; right half [r_i, rh_{i+1}] nodes i, i+1
            segs = []
            if i > 0:
                segs.append((rh[i], r[i], i - 1, i))
            segs.append((r[i], rh[i + 1], i, i + 1))
            for lo, hi, j0, j1 in segs:
                x0, x1 = r[j0], r[j1]
                h = x1 - x0
                rows += [i, i]
                cols += [j0, j1]
                if j0 == 0 and axis_basis:
                    m0, mb = mom(lo, hi, 0), mom(lo, hi, 1.0 - a) / x1 ** (1.0 - a)
                    vals += [m0 - mb, mb]
                else:
                    m0, m1 = mom(lo, hi, 0), mom(lo, hi, 1)
                    vals += [(x1 * m0 - m1) / h, (m1 - x0 * m0) / h]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(M - 1, M))

    def rhs(self, omega_values, bc_r=None, bc_z=None):
        """Right side for nodal Omega values (shape grid.shape) and boundary data."""
        nr, nz = self.nr_in, self.nz_in
        kpsi = self.params.kappa_poisson
        src = kpsi * (self.source_matrix @ omega_values)[:, :nz]     # (nr, nz)
        b = src * self.hz_bar[None, :]
        if bc_r is not None:                     # psi(R, z_j)
            b[nr - 1, :] += self._fc[nr - 1] * bc_r[:nz] * self.hz_bar
        if bc_z is not None:                     # psi(r_i, Z)
            b[:, nz - 1] += (self._mass_full @ bc_z)[:nr] / self.hz_plus[-1]
        return b.ravel()

    def solve(self, omega_values, bc_r=None, bc_z=None, tol=1e-10):
        b = self.rhs(omega_values, bc_r, bc_z)
        x = self.lu.solve(b)
        res = [float(np.linalg.norm(self.A @ x - b) / max(np.linalg.norm(b), 1e-300))]
        if res[-1] > tol:
            # one step of iterative refinement before giving up
            x = x + self.lu.solve(b - self.A @ x)
            res.append(float(np.linalg.norm(self.A @ x - b) / max(np.linalg.norm(b), 1e-300)))
            if res[-1] > tol:
                raise SolverError("elliptic solve did not reach the residual tolerance", res)
        g = self.grid
        psi = np.zeros(g.shape)
        psi[:-1, :-1] = x.reshape(self.nr_in, self.nz_in)
        if bc_r is not None:
            psi[-1, :] = bc_r
        if bc_z is not None:
            psi[:, -1] = bc_z
        return psi, res


def _diff_nonuniform(f, x, axis, odd_mirror_at_zero=False, even_mirror_at_zero=False):
    """Centered 3-point derivative along ``axis`` on nodes x (one-sided at the far end)."""
    f = np.moveaxis(f, axis, 0)
    d = np.empty_like(f)
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    shp = (-1,) + (1,) * (f.ndim - 1)
    hm_, hp_ = hm.reshape(shp), hp.reshape(shp)
    d[1:-1] = (hm_ ** 2 * f[2:] - hp_ ** 2 * f[:-2] - (hm_ ** 2 - hp_ ** 2) * f[1:-1]) / (hm_ * hp_ * (hm_ + hp_))
    h0, h1 = x[1] - x[0], x[-1] - x[-2]
    if even_mirror_at_zero:               # node 0 at the symmetry point, f even
        d[0] = 0.0
    elif odd_mirror_at_zero:              # first node x[0] > 0, f odd about 0
        a, b = x[0], x[1] - x[0]
        # neighbours -x0 (value -f0) and x1
        hm0, hp0 = 2 * a, b
        d[0] = (hm0 ** 2 * f[1] - hp0 ** 2 * (-f[0]) - (hm0 ** 2 - hp0 ** 2) * f[0]) / (hm0 * hp0 * (hm0 + hp0))
    else:
        d[0] = (f[1] - f[0]) / h0
    d[-1] = (f[-1] - f[-2]) / h1
    return np.moveaxis(d, 0, axis)


_GREEN_CACHE: dict = {}


def boundary_green_matrix(grid: HalfPlaneGrid, params: ModelParameters, stride: int = 4):
    """Linear map nodal Omega -> psi on the far boundary (trapezoid product rule).

    The boundary lies far from the support of the data it is used with, where
    the integrand is smooth; rows are computed at every ``stride``-th boundary
    node and interpolated linearly in between.
    """
    key = (id(grid), grid.r.size, grid.z.size, params.alpha, stride)
    if key in _GREEN_CACHE:
        return _GREEN_CACHE[key]
    r, z = grid.r, grid.z
    wr = np.zeros_like(r)
    wr[1:] += 0.5 * np.diff(r)
    wr[:-1] += 0.5 * np.diff(r)
    ze = np.concatenate([[0.0], z])
    wz = 0.5 * (np.diff(ze) + np.concatenate([np.diff(z), [0.0]]))
    W = (wr[:, None] * wz[None, :]) * r[:, None] ** (2.0 + params.alpha)
    pref = 2.0 * params.kappa_psi1 / math.pi
    RT, ZT = grid.mesh()

    def rows_for(points):
        out = np.empty((len(points), r.size * z.size))
        for k, (pr, pz) in enumerate(points):
            with np.errstate(divide="ignore", invalid="ignore"):
                ker = ring_integral(pr, RT, pz - ZT) - ring_integral(pr, RT, pz + ZT)
            # the self node sits on the boundary where compact data vanish
            ker[~np.isfinite(ker)] = 0.0
            out[k] = (pref * W * ker).ravel()
        return out

    def sampled(coords, make_point):
        idx = np.unique(np.concatenate([np.arange(0, coords.size, stride), [coords.size - 1]]))
        rows = rows_for([make_point(c) for c in coords[idx]])
        full = np.empty((coords.size, rows.shape[1]))
        for col in range(coords.size):
            j = np.searchsorted(coords[idx], coords[col])
            if j < idx.size and coords[idx][j] == coords[col]:
                full[col] = rows[j]
            else:
                x0, x1 = coords[idx][j - 1], coords[idx][j]
                t = (coords[col] - x0) / (x1 - x0)
                full[col] = (1 - t) * rows[j - 1] + t * rows[j]
        return full

    G_r = sampled(z, lambda c: (grid.r_max, c))        # psi(R, z_j)
    G_z = sampled(r, lambda c: (c, grid.z_max))        # psi(r_i, Z)
    _GREEN_CACHE[key] = (G_r, G_z)
    return G_r, G_z


def psi_elliptic_solve(Omega: Field2D, params: ModelParameters, bc: str = "kernel",
                       operator: Optional[EllipticOperator] = None, tol: float = 1e-10,
                       bc_values: Optional[tuple] = None, stride: int = 4) -> StreamFunctionResult:
    """Finite-volume solve; bc in {"zero", "kernel", "values"}."""
    g = Omega.grid
    op = operator or EllipticOperator(g, params)
    if bc == "zero":
        bc_r = np.zeros(g.z.size)
        bc_z = np.zeros(g.r.size)
    elif bc == "kernel":
        G_r, G_z = boundary_green_matrix(g, params, stride)
        v = Omega.values.ravel()
        bc_r, bc_z = G_r @ v, G_z @ v
    elif bc == "values":
        bc_r, bc_z = bc_values
    else:
        raise DomainError(f"unknown boundary condition {bc!r}")
    psi, res = op.solve(Omega.values, bc_r, bc_z, tol)
    psi_r = _diff_nonuniform(psi, g.r, 0, even_mirror_at_zero=True)
    psi_z = _diff_nonuniform(psi, g.z, 1, odd_mirror_at_zero=True)
    pz0 = axis_slope(psi[0], g.z)
    R, Z = g.mesh()
    out = StreamFunctionResult(r=R, z=Z, psi=psi, psi_r=psi_r, psi_z=psi_z,
                               method="elliptic", psi_z_origin=pz0,
                               error_estimate=res[-1])
    return velocities_from_psi(out)


def axis_slope(psi_axis_values, z):
    """d/dz at 0 of an odd function from its first three samples (fit c1 z + c3 z^3 + c5 z^5)."""
    zz = z[:3]
    A = np.stack([zz, zz ** 3, zz ** 5], axis=1)
    c = np.linalg.solve(A, psi_axis_values[:3])
    return float(c[0])


# ---------------------------------------------------------------------------
# data constant in r with slowly decaying profile


def extended_profile_stream(w: Callable, j_inf: float, params: ModelParameters,
                            eval_points, box: float = 1e3, panel: float = 0.5,
                            uniform_to: float = 4.0):
    """psi, psi_r, psi_z of Omega(r, z) = w(z) (all r) at the given points.

    The linear part z * 2a J_inf carries the far field exactly; the rest is
    the box-truncated quadrature with its own linear part removed, whose
    integrand decays fast enough for the truncation error to be negligible
    at |x| << box.
    """
    grid = HalfPlaneGrid(np.array([0.0, box]), np.array([box]))
    Om = Field2D(grid, np.zeros(grid.shape), func=lambda r, zz: w(zz) * np.ones_like(r),
                 support=(box, box))
    base = default_base_breaks(box, panel, uniform_to=uniform_to, growth=1.3)
    res = psi_kernel_quadrature(Om, params, eval_points, derivatives=True, panel=panel,
                                base_r=base, base_z=base, error_estimate=False)
    j_box = j3d(Om, params, np.inf, panel=panel, r_correction=False, base_r=base, base_z=base)
    slope = 2.0 * params.alpha * (j_inf - j_box)
    pts = np.atleast_2d(np.asarray(eval_points, float))
    res.psi = res.psi + slope * pts[:, 1]
    res.psi_z = res.psi_z + slope
    res.psi_z_origin = 2.0 * params.alpha * j_inf
    return velocities_from_psi(res)
