"""Nonlocal 1D stream function for odd grid functions.

For an odd function w on the line, stored on x > 0,

    psi(x)      = int_0^inf (|x+y|^a - |x-y|^a) w(y) dy
    psi_ring(x) = psi(x) - 2a J_inf x
    J_a(w)(x)   = int_0^x y^(a-1) w(y) dy

The quadrature is product integration against the piecewise-linear interpolant
of w (with w(0) = 0), so every operator is a fixed matrix acting on the nodal
values plus a closed-form power-law tail beyond the last node.  Far from the
kernel singularities each cell uses Gauss-Legendre with a cancellation-free
kernel; cells close to a singular point (y = x, y = -x, y = 0) use exact moments
of |y - c|^beta times a linear function.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .params import DomainError


class TailError(ValueError):
    """Raised when the far behaviour of a grid function is not determined."""


class TailFitError(ValueError):
    pass


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_T = 0.5 * (_GL_X + 1.0)      # nodes on [0, 1]
_GL_WT = 0.5 * _GL_W
_N_VIRTUAL = 8                   # virtual tail nodes beyond the last grid node
_NEAR = 2.0                      # cells within NEAR*h of a singularity are exact
_SERIES_S = 0.1


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray
    x_switch: float = float("nan")
    ratio: float = float("nan")

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise DomainError("grid needs at least two nodes")
        d = np.diff(x)
        if x[0] <= 0 or np.any(d < 0):
            raise DomainError("grid nodes must be positive and increasing")
        # a repeated node marks a jump of the data; never three in a row
        if np.any((d[:-1] == 0) & (d[1:] == 0)) or (d.size and d[-1] == 0):
            raise DomainError("grid nodes must be strictly increasing except for jump pairs")
        object.__setattr__(self, "nodes", x)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @classmethod
    def graded(cls, x_min: float = 1e-4, x_switch: float = 2.0, x_max: float = 1e6,
               n: Optional[int] = 1024, ratio: Optional[float] = None) -> "Grid1D":
        """Uniform spacing on [x_min, x_switch], geometric beyond.

        The uniform spacing is x_switch*(ratio-1) so the two pieces join
        smoothly.  Give either ``n`` (ratio solved for) or ``ratio``.
        """
        if not (0 < x_min < x_switch < x_max):
            raise DomainError("need 0 < x_min < x_switch < x_max")
        if ratio is None:
            if n is None or n < 16:
                raise DomainError("n must be at least 16")

            def count(rho):
                return _graded_nodes(x_min, x_switch, x_max, rho).size - n

            lo, hi = 1.0 + 1e-6, 1.5
            if count(hi) > 0:
                raise DomainError("too few nodes requested for this range")
            # count is a non-increasing step function of rho; bisect on it
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if count(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            ratio = hi
        if not 1.0 < ratio <= 1.5:
            raise DomainError("ratio must lie in (1, 1.5]")
        return cls(_graded_nodes(x_min, x_switch, x_max, ratio), x_switch, ratio)

    @classmethod
    def geometric(cls, x_min: float, x_max: float, ratio: float) -> "Grid1D":
        k = int(math.ceil(math.log(x_max / x_min) / math.log(ratio)))
        return cls(x_min * ratio ** np.arange(k + 1), float("nan"), ratio)

    def coarsen(self) -> "Grid1D":
        """Every other node, always keeping the last one."""
        idx = np.arange(0, self.n, 2)
        if idx[-1] != self.n - 1:
            idx = np.append(idx, self.n - 1)
        return Grid1D(self.nodes[idx], self.x_switch, self.ratio)


def _graded_nodes(x_min, x_switch, x_max, rho):
    h = x_switch * (rho - 1.0)
    m = max(int(math.ceil((x_switch - x_min) / h)), 1)
    inner = np.linspace(x_min, x_switch, m + 1)
    k = int(math.ceil(math.log(x_max / x_switch) / math.log(rho)))
    outer = x_switch * rho ** np.arange(1, k + 1)
    outer[-1] = x_max
    if k >= 2 and outer[-1] <= outer[-2] * (1 + 1e-9):
        outer = np.delete(outer, -2)
    return np.concatenate([inner, outer])


@dataclass(frozen=True)
class TailModel:
    A: float
    p: float
    fit_window: tuple = (0, 0)
    fit_residual: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.p < 3.0):
            raise TailFitError(f"tail exponent {self.p} outside (0, 3)")

    def __call__(self, y):
        return self.A * np.asarray(y, dtype=float) ** (-self.p)

    def to_dict(self) -> dict:
        return {"A": self.A, "p": self.p, "fit_window": list(self.fit_window),
                "fit_residual": self.fit_residual}


@dataclass(frozen=True)
class OddGridFunction1D:
    grid: Grid1D
    values: np.ndarray
    tail: Optional[TailModel] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise DomainError("values must match the grid")
        if not np.all(np.isfinite(v)):
            raise DomainError("values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def x(self):
        return self.grid.nodes

    def compact(self) -> bool:
        return bool(np.all(self.values[-3:] == 0.0))

    def check_tail(self):
        if self.tail is None and not self.compact():
            raise TailError("tail-undetermined: far values do not vanish and no tail model given")

    def with_values(self, values, tail=None) -> "OddGridFunction1D":
        return OddGridFunction1D(self.grid, values, tail)

    def __call__(self, y):
        """Evaluate the interpolant (odd extension, tail model beyond the grid)."""
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        xs = np.concatenate([[0.0], self.x])
        vs = np.concatenate([[0.0], self.values])
        out = np.interp(ay, xs, vs)
        if self.tail is not None:
            far = ay > self.grid.x_max
            out = np.where(far, self.tail(np.where(far, ay, 1.0)), out)
        else:
            out = np.where(ay > self.grid.x_max, 0.0, out)
        return np.sign(y) * out

    def smooth(self, y):
        """Cubic-spline evaluation in log(x + x_s), w/x held smooth through the origin."""
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        x = self.x
        xs = self.grid.x_switch if np.isfinite(self.grid.x_switch) else x[0]
        spl = CubicSpline(np.log(x + xs), self.values / x)
        inside = ay <= self.grid.x_max
        out = np.where(inside, ay * spl(np.log(np.clip(ay, x[0], x[-1]) + xs)), 0.0)
        if self.tail is not None:
            out = np.where(inside, out, self.tail(np.where(inside, 1.0, ay)))
        return np.sign(y) * out

    def coarsen(self) -> "OddGridFunction1D":
        g = self.grid.coarsen()
        return OddGridFunction1D(g, self(g.nodes), self.tail)

    def to_csv(self, path):
        from .io import write_csv
        write_csv(path, ["x", "w"], [self.x, self.values])
        if self.tail is not None:
            with open(str(path) + ".tail.json", "w", encoding="utf-8") as fh:
                json.dump(self.tail.to_dict(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# kernels

_KINDS = ("psi", "ring", "dpsi", "dring", "jal")


def _binom_coeffs(a, kmax):
    c = np.empty(kmax + 1)
    c[0] = 1.0
    for k in range(1, kmax + 1):
        c[k] = c[k - 1] * (a - k + 1) / k
    return c


def _kernel(kind, alpha, x, y):
    """Cancellation-free kernel values; x, y broadcastable, x >= 0, y > 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind == "jal":
        return y ** (alpha - 1.0) * np.ones_like(x)
    big = np.maximum(x, y)
    small = np.minimum(x, y)
    s = small / big
    y_outer = y >= x
    lp = np.log1p(s)
    lm = np.log1p(-np.minimum(s, 1.0 - 1e-300))
    if kind in ("psi", "ring"):
        g = np.exp(alpha * lm) * np.expm1(alpha * (lp - lm))      # (1+s)^a - (1-s)^a
        val = big ** alpha * g
        if kind == "psi":
            return val
        # y > x: y^a (G(s) - 2 a s); small s by series in odd powers
        c = _binom_coeffs(alpha, 17)
        s2 = s * s
        ser = np.zeros_like(s)
        for k in range(17, 2, -2):
            ser = ser * s2 + 2.0 * c[k]
        ser = ser * s * s2
        g_sub = np.where(s < _SERIES_S, ser, g - 2.0 * alpha * s)
        inner = big ** alpha * g - 2.0 * alpha * x * y ** (alpha - 1.0)
        return np.where(y_outer, big ** alpha * g_sub, inner)
    if kind in ("dpsi", "dring"):
        am = alpha - 1.0
        ep = np.exp(am * lp)
        em = np.exp(am * lm)
        # y > x: a y^(a-1) [(1+s)^(a-1) + (1-s)^(a-1)]
        # y < x: a x^(a-1) [(1+s)^(a-1) - (1-s)^(a-1)]
        outer = alpha * big ** am * (ep + em)
        inner = alpha * big ** am * (ep - em)
        if kind == "dpsi":
            return np.where(y_outer, outer, inner)
        c = _binom_coeffs(am, 16)
        s2 = s * s
        ser = np.zeros_like(s)
        for k in range(16, 1, -2):
            ser = ser * s2 + 2.0 * c[k]
        ser = ser * s2
        d_sub = np.where(s < _SERIES_S, ser, ep + em - 2.0)
        return np.where(y_outer, alpha * big ** am * d_sub,
                        inner - 2.0 * alpha * y ** am)
    raise ValueError(f"unknown kernel kind {kind!r}")


def _terms(kind, alpha, x):
    """Kernel as a sum of coef * sgn(y-c)^sigma |y-c|^beta; returns list of tuples."""
    a = alpha
    x = np.asarray(x, dtype=float)
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    psi = [(one, -x, a, 0), (-one, x, a, 0)]
    dpsi = [(a * one, -x, a - 1.0, 0), (a * one, x, a - 1.0, 1)]
    if kind == "psi":
        return psi
    if kind == "ring":
        return psi + [(-2.0 * a * x, zero, a - 1.0, 0)]
    if kind == "dpsi":
        return dpsi
    if kind == "dring":
        return dpsi + [(-2.0 * a * one, zero, a - 1.0, 0)]
    if kind == "jal":
        return [(one, zero, a - 1.0, 0)]
    raise ValueError(kind)


def _antider(t, k, beta, sigma):
    """int_0^t sgn(u)^sigma |u|^beta u^k du."""
    e = beta + k + 1.0
    sg = np.sign(t)
    return sg ** (k + 1 + sigma) * np.abs(t) ** e / e


def _term_hat_exact(coef, c, beta, sigma, a, b, lo, hi):
    """Exact integrals over [lo, hi] of one term times the two hats of cell [a, b]."""
    tl, th = lo - c, hi - c
    m0 = _antider(th, 0, beta, sigma) - _antider(tl, 0, beta, sigma)
    m1 = _antider(th, 1, beta, sigma) - _antider(tl, 1, beta, sigma)
    h = b - a
    wl = coef * ((b - c) * m0 - m1) / h
    wr = coef * (m1 - (a - c) * m0) / h
    return wl, wr


def _term_hat_gauss(coef, c, beta, sigma, a, b, lo, hi):
    y = lo[..., None] + (hi - lo)[..., None] * _GL_T
    d = y - c[..., None]
    f = coef[..., None] * np.abs(d) ** beta
    if sigma:
        f = f * np.sign(d)
    h = (b - a)[..., None]
    jac = (hi - lo)[..., None] * _GL_WT
    wl = np.sum(f * (b[..., None] - y) / h * jac, axis=-1)
    wr = np.sum(f * (y - a[..., None]) / h * jac, axis=-1)
    return wl, wr


def _cell_weights(kind, alpha, x, a, b, lo=None, hi=None):
    """Hat weights of each cell [a, b] (integrated over [lo, hi]) for rows x.

    x has shape (m,), a and b shape (k,); returns (wl, wr) of shape (m, k).
    """
    x = np.asarray(x, dtype=float)
    lo = a if lo is None else lo
    hi = b if hi is None else hi
    lo_b = np.broadcast_to(lo, (x.size, a.size)) if np.ndim(lo) < 2 else lo
    hi_b = np.broadcast_to(hi, (x.size, a.size)) if np.ndim(hi) < 2 else hi
    y = lo_b[..., None] + (hi_b - lo_b)[..., None] * _GL_T
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # non-finite values only occur in cells replaced below
        kv = _kernel(kind, alpha, x[:, None, None], y)
    kv[~np.isfinite(kv)] = 0.0
    h = np.where(b > a, b - a, 1.0)[None, :, None]
    jac = (hi_b - lo_b)[..., None] * _GL_WT
    wl = np.sum(kv * (b[None, :, None] - y) / h * jac, axis=-1)
    wr = np.sum(kv * (y - a[None, :, None]) / h * jac, axis=-1)

    zero_cells = b <= a
    if np.any(zero_cells):
        wl[:, zero_cells] = 0.0
        wr[:, zero_cells] = 0.0
    h1 = (b - a)[None, :]
    terms = _terms(kind, alpha, x)
    near_any = np.zeros(wl.shape, dtype=bool)
    near_masks = []
    for coef, c, beta, sigma in terms:
        cc = c[:, None]
        dist = np.maximum(np.maximum(a[None, :] - cc, cc - b[None, :]), 0.0)
        m = (dist < _NEAR * h1) & ~zero_cells[None, :]
        near_masks.append(m)
        near_any |= m
    if np.any(near_any):
        ri, ci = np.nonzero(near_any)
        aa, bb = a[ci], b[ci]
        ll, hh = lo_b[ri, ci], hi_b[ri, ci]
        nl = np.zeros(ri.size)
        nr = np.zeros(ri.size)
        for (coef, c, beta, sigma), m in zip(terms, near_masks):
            mk = m[ri, ci]
            cf, cv = coef[ri], c[ri]
            with np.errstate(divide="ignore", invalid="ignore"):
                el, er = _term_hat_exact(cf, cv, beta, sigma, aa, bb, ll, hh)
                gl, gr = _term_hat_gauss(cf, cv, beta, sigma, aa, bb, ll, hh)
            nl += np.where(mk, el, gl)
            nr += np.where(mk, er, gr)
        wl[ri, ci] = nl
        wr[ri, ci] = nr
    return wl, wr


def _extended_nodes(grid: Grid1D):
    x = grid.nodes
    rho = x[-1] / x[-2]
    rho = min(max(rho, 1.05), 1.2)
    virt = x[-1] * rho ** np.arange(1, _N_VIRTUAL + 1)
    return np.concatenate([x, virt])


def operator_matrix(kind: str, alpha: float, grid: Grid1D, x_eval=None,
                    chunk_elems: int = 3_000_000) -> np.ndarray:
    """Matrix M with kind-operator(w)(x_eval) = M[:, :N] w + M[:, N:] w_virtual.

    Columns beyond the grid act on the tail model sampled at the virtual nodes
    returned by ``virtual_nodes``; ``tail_remainder`` adds the rest.
    """
    if kind not in ("psi", "ring", "dpsi", "dring"):
        raise ValueError(kind)
    xs = grid.nodes if x_eval is None else np.atleast_1d(np.asarray(x_eval, float))
    if np.any(xs < 0):
        raise DomainError("evaluation points must be >= 0")
    ext = _extended_nodes(grid)
    a = np.concatenate([[0.0], ext[:-1]])
    b = ext
    ncol = ext.size
    out = np.zeros((xs.size, ncol))
    rows = max(1, chunk_elems // (a.size * _GL_T.size))
    for i0 in range(0, xs.size, rows):
        xr = xs[i0:i0 + rows]
        wl, wr = _cell_weights(kind, alpha, xr, a, b)
        blk = out[i0:i0 + rows]
        blk += wr                       # cell j has right node j
        blk[:, :-1] += wl[:, 1:]        # cell j (j >= 1) has left node j-1
    return out


def virtual_nodes(grid: Grid1D) -> np.ndarray:
    return _extended_nodes(grid)[grid.n:]


def tail_remainder(kind: str, alpha: float, tail: TailModel, y0: float, x) -> np.ndarray:
    """int_{y0}^inf K(x, y) A y^-p dy for x well inside (x <= y0/2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    A, p = tail.A, tail.p
    if p <= alpha and kind != "ring" and kind != "dring":
        raise TailError("tail exponent p <= alpha: integral diverges")
    # u = y0 / y on (0, 1], geometric panels toward u = 0
    edges = np.concatenate([[0.0], np.logspace(-12, 0, 25)])
    un = (edges[:-1, None] + np.diff(edges)[:, None] * _GL_T).ravel()
    uw = (np.diff(edges)[:, None] * _GL_WT).ravel()
    base = "ring" if kind in ("psi", "ring") else "dring"
    yv = y0 / un
    kv = _kernel(base, alpha, x[:, None], yv[None, :])
    val = A * y0 ** (1.0 - p) * np.sum(kv * un ** (p - 2.0) * uw, axis=1)
    if kind == "psi":
        val = val + 2.0 * alpha * x * A * y0 ** (alpha - p) / (p - alpha)
    elif kind == "dpsi":
        val = val + 2.0 * alpha * A * y0 ** (alpha - p) / (p - alpha)
    return val


class NonlocalOperator:
    """Precomputed operator of one kind on a fixed grid and evaluation set."""

    def __init__(self, kind: str, alpha: float, grid: Grid1D, x_eval=None):
        self.kind = kind
        self.alpha = alpha
        self.grid = grid
        self.x_eval = grid.nodes if x_eval is None else np.atleast_1d(np.asarray(x_eval, float))
        self.matrix = operator_matrix(kind, alpha, grid, self.x_eval)
        self.y_virtual = virtual_nodes(grid)

    def __call__(self, w: OddGridFunction1D) -> np.ndarray:
        w.check_tail()
        n = self.grid.n
        out = self.matrix[:, :n] @ w.values
        if w.tail is not None:
            out = out + self.matrix[:, n:] @ w.tail(self.y_virtual)
            out = out + tail_remainder(self.kind, self.alpha, w.tail,
                                       float(self.y_virtual[-1]), self.x_eval)
        return out


# ---------------------------------------------------------------------------
# J_alpha


def j_alpha_weights(alpha: float, grid: Grid1D):
    """Per-cell hat weights of y^(a-1) on the extended grid (cells from 0)."""
    ext = _extended_nodes(grid)
    a = np.concatenate([[0.0], ext[:-1]])
    wl, wr = _cell_weights("jal", alpha, np.zeros(1), a, ext)
    return a, ext, wl[0], wr[0]


def j_alpha_values(w: OddGridFunction1D, alpha: float, x=None) -> np.ndarray:
    """J_a(w)(x) at x (default: grid nodes); np.inf gives the full integral."""
    w.check_tail()
    g = w.grid
    xs = g.nodes if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise DomainError("x must be >= 0")
    a, b, wl, wr = j_alpha_weights(alpha, g)
    vals = np.concatenate([w.values, w.tail(b[g.n:]) if w.tail is not None
                           else np.zeros(b.size - g.n)])
    left = np.concatenate([[0.0], vals[:-1]])
    cell = wl * left + wr * vals
    cum = np.concatenate([[0.0], np.cumsum(cell)])      # J at 0, b_0, b_1, ...
    out = np.empty(xs.size)
    finite = np.isfinite(xs)
    y_end = b[-1]
    if np.any(~finite):
        if w.tail is None:
            tot = cum[-1]
        else:
            if w.tail.p <= alpha:
                raise TailError("J_alpha(inf) diverges: tail exponent p <= alpha")
            tot = cum[-1] + w.tail.A * y_end ** (alpha - w.tail.p) / (w.tail.p - alpha)
        out[~finite] = tot
    xf = xs[finite]
    if xf.size:
        if np.any(xf > g.x_max):
            raise DomainError("finite x beyond the grid is not supported")
        j = np.searchsorted(b, xf, side="left")          # cell index containing x
        j = np.minimum(j, b.size - 1)
        aa, bb = a[j], b[j]
        pl, pr = np.empty(xf.size), np.empty(xf.size)
        for i in range(xf.size):
            wl_i, wr_i = _cell_weights("jal", alpha, np.zeros(1), aa[i:i + 1], bb[i:i + 1],
                                       aa[i:i + 1], np.array([xf[i]]))
            pl[i], pr[i] = wl_i[0, 0], wr_i[0, 0]
        partial = pl * left[j] + pr * vals[j]
        out[finite] = cum[j] + partial
    return out


# ---------------------------------------------------------------------------
# public scalar-style API


def _evaluate(kind, w, x, alpha):
    w.check_tail()
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise DomainError("x must be >= 0; use oddness for negative arguments")
    return NonlocalOperator(kind, alpha, w.grid, xs)(w)


def _with_error(kind, w, x, alpha, return_error):
    val = _evaluate(kind, w, x, alpha)
    scalar = np.ndim(x) == 0
    if not return_error:
        return float(val[0]) if scalar else val
    coarse = _evaluate(kind, w.coarsen(), x, alpha)
    err = np.abs(val - coarse) / 3.0
    if scalar:
        return float(val[0]), float(err[0])
    return val, err


def psi_1d(w: OddGridFunction1D, x, alpha: float, return_error: bool = False):
    return _with_error("psi", w, x, alpha, return_error)


def psi_ring_1d(w: OddGridFunction1D, x, alpha: float, return_error: bool = False):
    return _with_error("ring", w, x, alpha, return_error)


def dpsi_1d(w: OddGridFunction1D, x, alpha: float, return_error: bool = False):
    return _with_error("dpsi", w, x, alpha, return_error)


def dpsi_ring_1d(w: OddGridFunction1D, x, alpha: float, return_error: bool = False):
    return _with_error("dring", w, x, alpha, return_error)


def j_alpha(w: OddGridFunction1D, x, alpha: float, return_error: bool = False):
    val = j_alpha_values(w, alpha, x)
    scalar = np.ndim(x) == 0
    if not return_error:
        return float(val[0]) if scalar else val
    coarse = j_alpha_values(w.coarsen(), alpha, x)
    err = np.abs(val - coarse) / 3.0
    if scalar:
        return float(val[0]), float(err[0])
    return val, err


# ---------------------------------------------------------------------------
# tail fitting


def tail_fit(w: OddGridFunction1D, decade_fraction: float = 1.0,
             min_nodes: int = 8) -> TailModel:
    """Least-squares power law A x^-p over the last ``decade_fraction`` decades."""
    x = w.x
    lo = x[-1] * 10.0 ** (-decade_fraction)
    idx = np.nonzero(x >= lo)[0]
    if idx.size < min_nodes:
        raise TailFitError(f"insufficient data: {idx.size} nodes in fit window")
    v = w.values[idx]
    if np.all(v == 0):
        raise TailFitError("fit window is identically zero")
    sg = np.sign(v)
    if np.any(sg == 0) or np.any(sg != sg[0]):
        raise TailFitError("sign change in fit window")
    lx = np.log(x[idx])
    lv = np.log(np.abs(v))
    slope, icpt = np.polyfit(lx, lv, 1)
    resid = float(np.max(np.abs(lv - (slope * lx + icpt))))
    return TailModel(A=float(sg[0] * math.exp(icpt)), p=float(-slope),
                     fit_window=(int(idx[0]), int(idx[-1])), fit_residual=resid)


def with_fitted_tail(w: OddGridFunction1D, decade_fraction: float = 1.0) -> OddGridFunction1D:
    return replace(w, tail=tail_fit(w, decade_fraction))
