"""Numerical checks behind ``verify`` and the acceptance tests.

Every check returns a CheckResult with the measured quantities, the
threshold it is held to and a pass flag.  Expensive intermediates (profiles,
the rescaled 1D run) are cached per process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .biot_savart import (Field2D, HalfPlaneGrid, EllipticOperator, extended_profile_stream,
                          h_kernel, j3d, psi_axis, psi_elliptic_solve, psi_kernel_quadrature)
from .diagnostics import VelocityField, outgoing_check, trajectory_integrate
from .nonlocal1d import (Grid1D, OddGridFunction1D, TailModel, dpsi_1d, j_alpha, psi_1d,
                         psi_ring_1d)
from .params import derive_params, params_from_epsilon
from .profile1d import phi_one_normalized, solve_profile
from .rescaling import (EvolutionConfig, RescaledOperators1D, RescalingState, TimeSeries,
                        fit_blowup_exponent, reconstruct_scales, run_rescaled_1d,
                        step_physical_2d, step_rescaled_1d, transport_sup)


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'}  {self.detail}"


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


# ---------------------------------------------------------------------------
# shared fixtures


@lru_cache(maxsize=None)
def profile(epsilon: float):
    return solve_profile(params_from_epsilon(epsilon))


def indicator(alpha: float):
    """w = 1 on [1, 2] (odd), on a grid with jump pairs at 1 and 2, plus closed forms."""
    base = Grid1D.graded(x_min=1e-3, x_switch=4.0, x_max=50.0, ratio=1.02).nodes
    base = base[(np.abs(base - 1.0) > 1e-9) & (np.abs(base - 2.0) > 1e-9)]
    nodes = np.sort(np.concatenate([base, [1.0, 1.0, 2.0, 2.0]]))
    vals = ((nodes > 1.0) & (nodes < 2.0)).astype(float)
    i1 = np.nonzero(nodes == 1.0)[0]
    i2 = np.nonzero(nodes == 2.0)[0]
    vals[i1[1]] = 1.0
    vals[i2[0]] = 1.0
    w = OddGridFunction1D(Grid1D(nodes, 4.0, 1.02), vals)
    a = alpha
    b = a + 1.0

    def sp(t):
        return np.sign(t) * np.abs(t) ** b

    oracle = {
        "psi": lambda x: ((x + 2) ** b - (x + 1) ** b + sp(x - 2) - sp(x - 1)) / b,
        "dpsi": lambda x: (x + 2) ** a - (x + 1) ** a + abs(x - 2) ** a - abs(x - 1) ** a,
        "j": lambda x: 0.0 if x < 1 else (min(x, 2.0) ** a - 1.0) / a,
    }
    j_inf = (2.0 ** a - 1.0) / a
    oracle["ring"] = lambda x: oracle["psi"](x) - 2.0 * a * j_inf * x
    return w, oracle


def smooth_test_functions():
    """Five odd, decaying test functions as (name, callable, tail)."""
    return [
        ("gauss", lambda x: x * np.exp(-x * x), None),
        ("wide_gauss_cos", lambda x: x * np.exp(-x * x / 4.0) * np.cos(x), None),
        ("cubic_gauss", lambda x: x ** 3 * np.exp(-x * x / 2.0), None),
        ("sin_exp", lambda x: np.sin(x) * np.exp(-np.abs(x)), None),
        ("algebraic", lambda x: x * (1.0 + x * x) ** -1.2, TailModel(A=1.0, p=1.4)),
    ]


def gaussian_ring(grid: HalfPlaneGrid):
    f = lambda r, z: z * np.exp(-(r - 2.0) ** 2 - z * z)
    return Field2D.from_function(grid, f, support=(8.5, 6.5))


# ---------------------------------------------------------------------------
# A1 - A3: kernels and 1D operators


def check_a1() -> CheckResult:
    worst = 0.0
    for alpha in (0.25, 1.0 / 3.0):
        p = derive_params(alpha)
        for a in np.arange(1, 10) / 10.0:
            target = (1.0 - a ** alpha) / p.kappa_psi1
            worst = max(worst, _rel(h_kernel(a, alpha, tol=1e-12), target))
    return CheckResult("A1", worst <= 1e-6, {"max_rel_error": worst}, f"max rel err {worst:.2e} (<= 1e-6)")


def check_a2() -> CheckResult:
    worst = 0.0
    m = {}
    for alpha in (1.0 / 3.0 - 0.05,):
        w, orc = indicator(alpha)
        for x in (0.5, 1.0, 3.0):
            pairs = {"psi": (psi_1d(w, x, alpha), orc["psi"](x)),
                     "ring": (psi_ring_1d(w, x, alpha), orc["ring"](x)),
                     "dpsi": (dpsi_1d(w, x, alpha), orc["dpsi"](x)),
                     "j": (j_alpha(w, x, alpha), orc["j"](x))}
            for k, (v, o) in pairs.items():
                e = _rel(v, o)
                m[f"{k}@{x}"] = e
                worst = max(worst, e)
    return CheckResult("A2", worst <= 1e-8, {"max_rel_error": worst, **m},
                       f"max rel err {worst:.2e} (<= 1e-8)")


def check_a3() -> CheckResult:
    alpha = 1.0 / 3.0 - 0.05
    g = Grid1D.graded(x_min=1e-4, x_switch=2.0, x_max=1e6, n=1024)
    worst = 0.0
    m = {}
    for name, f, tail in smooth_test_functions():
        w = OddGridFunction1D(g, f(g.nodes), tail)
        lhs = dpsi_1d(w, 0.0, alpha)
        rhs = 2.0 * alpha * j_alpha(w, np.inf, alpha)
        m[name] = _rel(lhs, rhs)
        worst = max(worst, m[name])
    return CheckResult("A3", worst <= 1e-6, {"max_rel_error": worst, **m},
                       f"max rel err {worst:.2e} (<= 1e-6)")


# ---------------------------------------------------------------------------
# A4: 3D Biot-Savart


def cross_check(n: int = 128, probes: int = 20, seed: int = 0):
    p = params_from_epsilon(0.05)
    g = HalfPlaneGrid.graded(n, n, r_core=7.0, z_core=5.0)
    Om = gaussian_ring(g)
    el = psi_elliptic_solve(Om, p, bc="kernel")
    R, _ = g.mesh()
    mask = (np.abs(el.psi) > 0.2 * np.abs(el.psi).max()) & (R > 0)
    idx = np.argwhere(mask)
    sel = idx[np.random.default_rng(seed).choice(len(idx), probes, replace=False)]
    pts = np.array([[g.r[i], g.z[j]] for i, j in sel])
    kq = psi_kernel_quadrature(Om, p, pts)
    ev = np.array([el.psi[i, j] for i, j in sel])
    rel = float(np.max(np.abs(kq.psi / ev - 1.0)))
    pz_j = 2.0 * p.alpha * j3d(Om, p, np.inf)
    return {"max_rel_probe": rel, "psi_z0_elliptic": el.psi_z_origin, "psi_z0_j3d": pz_j,
            "psi_z0_rel": _rel(el.psi_z_origin, pz_j),
            "kernel_error_estimate": kq.error_estimate, "elliptic_residual": el.error_estimate}


def manufactured_errors(ns=(64, 128, 256), epsilon: float = 0.05):
    p = params_from_epsilon(epsilon)
    a, c = p.alpha, p.kappa_poisson
    ps = lambda r, z: z * np.exp(-r * r - z * z)
    Om = lambda r, z: (14.0 - 4.0 * r * r - 4.0 * z * z) * ps(r, z) * r ** (1.0 - a) / c
    errs = []
    for n in ns:
        g = HalfPlaneGrid.graded(n, n, r_core=6.0, z_core=6.0)
        F = Field2D.from_function(g, Om)
        R, Z = g.mesh()
        res = psi_elliptic_solve(F, p, bc="values", bc_values=(ps(g.r_max, g.z), ps(g.r, g.z_max)))
        errs.append(float(np.max(np.abs(res.psi - ps(R, Z)))))
    errs = np.array(errs)
    return errs, np.log2(errs[:-1] / errs[1:])


def axis_identity(epsilon: float = 0.05, box=(20.0, 2.0)):
    """Indicator w on [1, 2] extended constant in r: psi(0, z) and J_3D against 1D closed forms."""
    p = params_from_epsilon(epsilon)
    _, orc = indicator(p.alpha)
    w = lambda z: np.where((np.abs(z) >= 1) & (np.abs(z) <= 2), np.sign(z), 0.0)
    g = HalfPlaneGrid(np.array([0.0, box[0]]), np.array([box[1]]))
    Om = Field2D(g, np.zeros(g.shape), func=lambda r, z: w(z) * np.ones_like(r),
                 support=box, r_profile=w)
    out = {}
    for z in (0.5, 1.5, 3.0):
        out[f"psi_rel@{z}"] = _rel(psi_axis(Om, p, z), orc["psi"](z))
        out[f"psi_rel_uncorrected@{z}"] = _rel(psi_axis(Om, p, z, r_correction=False), orc["psi"](z))
        out[f"j_err@{z}"] = abs(j3d(Om, p, z) - orc["j"](z))
    return out


def check_a4(ns=(64, 128, 256)) -> CheckResult:
    cc = cross_check()
    errs, orders = manufactured_errors(ns)
    ax = axis_identity()
    ax_worst = max(v for k, v in ax.items() if k.startswith("psi_rel@") or k.startswith("j_err"))
    ok = cc["max_rel_probe"] <= 1e-3 and orders.min() >= 1.9 and ax_worst <= 0.02
    m = {**cc, "mms_errors": errs.tolist(), "mms_orders": orders.tolist(), **ax}
    return CheckResult("A4", bool(ok), m,
                       f"probe rel {cc['max_rel_probe']:.2e} (<= 1e-3), orders "
                       f"{', '.join(f'{o:.3f}' for o in orders)} (>= 1.9), axis {ax_worst:.2e} (<= 0.02)")


# ---------------------------------------------------------------------------
# A5 - A6: profiles


def profile_metrics(epsilon: float) -> dict:
    sol = profile(epsilon)
    return {"epsilon": epsilon, "converged": sol.converged, "iterations": sol.iterations,
            "residual_ratio": sol.residual_norm / sol.initial_residual,
            "c_l": sol.c_l, "c_w": sol.c_w, "dev_c_l": sol.c_l * 9 * epsilon / 64 - 1,
            "dev_c_w": sol.c_w * 27 * epsilon / 64 + 1, "alpha_star": sol.alpha_star,
            "tail_p": sol.tail.p, "tail_A": sol.tail.A}


def check_a5(epsilons=(0.10, 0.05, 0.02)) -> CheckResult:
    rows = [profile_metrics(e) for e in epsilons]
    ok = all(r["converged"] and r["residual_ratio"] <= 1e-6 and abs(r["dev_c_l"]) <= 0.3
             and abs(r["dev_c_w"]) <= 0.4 for r in rows)
    dl = [abs(r["dev_c_l"]) for r in rows]
    dw = [abs(r["dev_c_w"]) for r in rows]
    mono = all(b <= a for a, b in zip(dl, dl[1:])) and all(b <= a for a, b in zip(dw, dw[1:]))
    m = {f"eps={r['epsilon']}": r for r in rows}
    return CheckResult("A5", bool(ok and mono), {**m, "monotone": mono},
                       "c_l dev " + ", ".join(f"{d:.3f}" for d in dl)
                       + "; c_w dev " + ", ".join(f"{d:.3f}" for d in dw)
                       + f"; monotone {mono}")


def check_a6(epsilon: float = 0.05) -> CheckResult:
    r = profile_metrics(epsilon)
    d1 = abs(r["tail_p"] - r["alpha_star"]) / epsilon
    d2 = abs(r["alpha_star"] - (1.0 / 3.0 + epsilon / 8.0)) / epsilon
    return CheckResult("A6", d1 <= 0.5 and d2 <= 0.3, {"p_vs_alpha_star_over_eps": d1,
                                                        "alpha_star_vs_leading_over_eps": d2, **r},
                       f"|p - a*|/eps {d1:.2e} (<= 0.5), |a* - 1/3 - eps/8|/eps {d2:.3f} (<= 0.3)")


# ---------------------------------------------------------------------------
# A7: outgoing flow of the extended profile


@lru_cache(maxsize=None)
def profile_velocity(epsilon: float = 0.05, nr: int = 15, nz: int = 16, lo: float = 0.05,
                     hi: float = 40.0) -> VelocityField:
    sol = profile(epsilon)
    p = sol.params
    g = HalfPlaneGrid(np.concatenate([[0.0], np.geomspace(lo, hi, nr)]), np.geomspace(lo, hi, nz))
    R, Z = g.mesh()
    pts = np.stack([R.ravel(), Z.ravel()], axis=1)
    res = extended_profile_stream(sol.W.smooth, sol.j_inf, p, pts)
    sh = R.shape
    psi, pr, pz = (v.reshape(sh) for v in (res.psi, res.psi_r, res.psi_z))
    return VelocityField(g, sol.c_l * R - R * pz, sol.c_l * Z + 2.0 * psi + R * pr)


def check_a7(seeds: int = 20) -> CheckResult:
    Q = profile_velocity()
    lam = outgoing_check(Q)
    rng = np.random.default_rng(2024)
    viol = 0
    worst = 0.0
    mono = True
    for _ in range(seeds):
        rad = math.exp(rng.uniform(math.log(0.2), math.log(20.0)))
        th = rng.uniform(0.0, 0.5 * math.pi)
        rep = trajectory_integrate(Q, (rad * math.cos(th), rad * math.sin(th)), (-2.0, 0.5), 1e-3,
                                   lam=lam, r_floor=float(Q.grid.z[0]))
        viol += rep.bound_violation
        worst = max(worst, rep.max_bound_ratio)
        mono = mono and rep.monotone_forward
    ok = lam >= 0.1 and viol == 0
    return CheckResult("A7", bool(ok), {"lambda": lam, "violations": viol, "max_bound_ratio": worst,
                                        "forward_monotone": mono},
                       f"min Q.x/|x|^2 = {lam:.4f} (>= 0.1), bound violations {viol}/{seeds}")


# ---------------------------------------------------------------------------
# A8, A10: rescaled 1D run


@lru_cache(maxsize=None)
def rescaled_run(epsilon: float = 0.05, steps: int = 400):
    sol = profile(epsilon)
    p = sol.params
    wt = lambda x: phi_one_normalized(x, p)
    cfg = EvolutionConfig.rescaled_default(p, steps=steps)
    w, final, series = run_rescaled_1d(sol.W, cfg, p, weight=wt)
    return sol, cfg, w, final, series


def check_a8(epsilon: float = 0.05) -> CheckResult:
    sol, cfg, w, final, series = rescaled_run(epsilon)
    p = sol.params
    W = sol.W
    wt = phi_one_normalized(W.x, p)
    nrm = lambda v: float(np.max(np.abs(wt * v)))
    ops = RescaledOperators1D(p, W.grid)
    w1, _ = step_rescaled_1d(W, RescalingState.initial(p, sol.c_l, sol.c_w), cfg, p, ops)
    ds = nrm((w1.values - W.values) / cfg.dt) / nrm(W.values)
    drift_w = nrm(w.values - W.values) / nrm(W.values)
    cl = series.column("c_l")
    drift_cl = float(np.max(np.abs(cl / cl[0] - 1.0)))
    ok = ds <= 1e-3 and drift_w <= 0.05 and drift_cl <= 0.05
    return CheckResult("A8", bool(ok), {"ds_w": ds, "drift_w": drift_w, "drift_c_l": drift_cl,
                                        "s_end": final.s},
                       f"|d_s w| {ds:.2e} (<= 1e-3), drift w {drift_w:.2e}, c_l {drift_cl:.2e} (<= 5e-2)")


def closed_form_scales(T: float = 0.125, s_end: float = 2.0, n: int = 201):
    """Max errors of reconstruct_scales against closed forms for constant rates."""
    p = params_from_epsilon(0.05)
    s = np.linspace(0.0, s_end, n)
    out = {}
    # c_wt = -1 (c_l = 0, c_w = -1)
    ser = reconstruct_scales(TimeSeries.from_rates(s, np.zeros(n), -np.ones(n), p.alpha, C_w0=T), p)
    out["C_w"] = float(np.max(np.abs(ser.column("C_w") / (T * np.exp(s)) - 1.0)))
    out["t"] = float(np.max(np.abs(ser.column("t") - (1.0 - np.exp(-s)) / T)))
    out["T_hat"] = abs(ser.records[-1]["T_hat"] - 1.0 / T)
    # c_wt = 0
    ser0 = reconstruct_scales(TimeSeries.from_rates(s, np.zeros(n), np.zeros(n), p.alpha, C_w0=T), p)
    out["t_zero_rate"] = float(np.max(np.abs(ser0.column("t") - s / T)))
    out["C_w_zero_rate"] = float(np.max(np.abs(ser0.column("C_w") - T)))
    return out


def check_a10(epsilon: float = 0.05) -> CheckResult:
    cf = closed_form_scales()
    sol, cfg, w, final, series = rescaled_run(epsilon)
    p = sol.params
    rs = reconstruct_scales(series, p)
    cx = fit_blowup_exponent(rs)
    a_star = -series.records[-1]["c_w"] / series.records[-1]["c_l"]
    pred = 1.0 / (a_star - p.alpha)
    lead = 8.0 / (9.0 * epsilon)
    e1, e2 = _rel(cx, pred), _rel(cx, lead)
    cf_worst = max(cf.values())
    ok = cf_worst <= 1e-10 and e1 <= 0.2 and e2 <= 0.35
    return CheckResult("A10", bool(ok), {"closed_form_max_error": cf_worst, **cf, "c_x": cx,
                                         "c_x_pred": pred, "c_x_leading": lead,
                                         "T_hat": rs.records[-1]["T_hat"]},
                       f"closed forms {cf_worst:.1e} (<= 1e-10), c_x {cx:.3f} vs 1/(a*-a) {pred:.3f} "
                       f"({e1:.1e} <= 0.2), vs 8/(9 eps) {lead:.3f} ({e2:.3f} <= 0.35)")


# ---------------------------------------------------------------------------
# A9: physical-time transport


def physical_run(n: int = 128, steps: int = 200, epsilon: float = 0.05):
    p = params_from_epsilon(epsilon)
    g = HalfPlaneGrid.graded(n, n, r_core=7.0, z_core=5.0)
    f = lambda r, z: z * np.exp(-(r - 2.0) ** 2 - z * z)
    Om = Field2D(g, f(*g.mesh()), support=(g.r_max, g.z_max))
    op = EllipticOperator(g, p)
    from .rescaling import physical_dt
    dt = physical_dt(Om, p, operator=op)
    cfg = EvolutionConfig(dt=dt, steps=steps)
    sups = [transport_sup(Om, p.alpha)]
    for _ in range(steps):
        Om, _ = step_physical_2d(Om, cfg, p, operator=op)
        sups.append(transport_sup(Om, p.alpha))
    return Om, np.array(sups), dt


def check_a9() -> CheckResult:
    Om, sups, dt = physical_run()
    drift = float(np.max(np.abs(sups / sups[0] - 1.0)))
    growth = float(np.max(sups[1:] / sups[:-1] - 1.0))
    # oddness: only z > 0 is stored and every interpolant is built from the odd
    # extension, so psi(r, 0) = 0 and Omega(r, -z) = -Omega(r, z) by construction
    from .rescaling import _Signed2D
    ext = _Signed2D(Om.grid.r, Om.grid.z, Om.values, 1, -1).vv
    odd_exact = bool(np.array_equal(ext[:, ::-1], -ext))
    ok = drift <= 0.01 and odd_exact
    return CheckResult("A9", ok, {"sup_drift": drift, "max_step_growth": growth, "dt": dt,
                                  "odd_exact": odd_exact},
                       f"sup |Omega r^(a-1)| drift {drift:.2e} (<= 1e-2), oddness exact {odd_exact}")


ALL = {"A1": check_a1, "A2": check_a2, "A3": check_a3, "A4": check_a4, "A5": check_a5,
       "A6": check_a6, "A7": check_a7, "A8": check_a8, "A9": check_a9, "A10": check_a10}
