"""``blowuplab`` command line: resolve a RunConfig, run one pipeline, write files.

Every run with a valid configuration leaves ``manifest.json`` in the output
directory, including failed runs.  Data files (CSV, summary.json) carry no
timings, so identical configurations reproduce them byte for byte.
Exit status: 0 success, 1 solver failure or non-convergence, 2 bad configuration.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, flag_names, read_file, resolve

log = logging.getLogger("blowuplab")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class NonConvergence(RuntimeError):
    """A pipeline finished but its solver missed the tolerance."""


def _cap_threads():
    n = os.environ.get("BLOWUPLAB_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blowuplab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key = value file with [section] headers")
    for attr, flags in flag_names().items():
        # everything is read as text; resolve() converts and reports type errors
        ap.add_argument(*flags, dest=attr, default=None, metavar=flags[-1].split(".")[-1].lstrip("-").upper())
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def parse_config(argv=None) -> RunConfig:
    return config_from_args(build_parser().parse_args(argv))


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    args = vars(ns).copy()
    path = args.pop("config")
    args.pop("verbose")
    file_values = read_file(path) if path else {}
    cfg = resolve(file_values, args)
    cfg.sources = [path] if path else []
    return cfg


def _writable(out: str) -> bool:
    p = Path(out).resolve()
    while not p.exists():
        p = p.parent
    return p.is_dir() and os.access(p, os.W_OK)


# ---------------------------------------------------------------------------
# pipelines: each returns (metrics, files) and raises NonConvergence after
# writing its artifacts when a solver missed its tolerance


def _params(cfg: RunConfig):
    from .params import derive_params, params_from_epsilon
    if cfg.alpha is not None:
        return derive_params(cfg.alpha)
    return params_from_epsilon(cfg.epsilon)


def run_params(cfg, out: Path, state):
    from .io import write_json
    p = state["params"]
    d = p.to_json_dict()
    d["kappa_poisson"] = p.kappa_poisson
    write_json(out / "params.json", d)
    return d, ["params.json"]


def _profile_grid(cfg, p):
    from .nonlocal1d import Grid1D
    from .profile1d import profile_grid
    g = profile_grid(p.epsilon)
    if cfg.grid_n1d is None:
        return g
    return Grid1D.graded(x_min=g.nodes[0], x_switch=g.x_switch, x_max=g.x_max, n=cfg.grid_n1d)


def _solve_profile(cfg, p):
    from .profile1d import solve_profile
    return solve_profile(p, _profile_grid(cfg, p), tol=cfg.tol, max_iter=cfg.max_iter,
                         relax=cfg.relax)


def run_profile1d(cfg, out: Path, state):
    from .diagnostics import asymptotics_report
    from .io import write_csv, write_json
    p = state["params"]
    sol = _solve_profile(cfg, p)
    rep = asymptotics_report(sol)
    write_csv(out / "profile.csv", ["x", "W", "V", "psi_ring"],
              [sol.W.x, sol.W.values, sol.V.values, sol.psi_ring.values])
    summary = {**sol.summary(), "asymptotics": rep.to_dict()}
    write_json(out / "summary.json", summary)
    state["metrics"] = summary
    if not sol.converged:
        raise NonConvergence(f"profile residual {sol.residual_norm:.3e} above tol {cfg.tol:g} "
                             f"after {sol.iterations} iterations")
    return summary, ["profile.csv", "summary.json"]


def _perturb(values, seed, size=1e-3):
    import numpy as np
    if seed is None:
        return values
    rng = np.random.default_rng(seed)
    return values * (1.0 + size * rng.standard_normal(values.shape))


def run_evolve1d(cfg, out: Path, state):
    import numpy as np
    from .diagnostics import asymptotics_report
    from .io import write_csv, write_json
    from .nonlocal1d import OddGridFunction1D
    from .profile1d import phi_one_normalized
    from .rescaling import EvolutionConfig, fit_blowup_exponent, reconstruct_scales, run_rescaled_1d
    p = state["params"]
    sol = _solve_profile(cfg, p)
    w0 = OddGridFunction1D(sol.W.grid, _perturb(sol.W.values, cfg.seed), sol.W.tail)
    ecfg = EvolutionConfig(dt=cfg.dt if cfg.dt is not None else 0.05 * p.epsilon,
                           steps=cfg.steps if cfg.steps is not None else 400,
                           output_every=cfg.output_every)
    w, final, series = run_rescaled_1d(w0, ecfg, p, weight=lambda x: phi_one_normalized(x, p))
    series = reconstruct_scales(series, p)
    series.to_csv(out / "series.csv")
    write_csv(out / "final.csv", ["x", "w0", "w"], [w0.x, w0.values, w.values])
    try:
        c_x = fit_blowup_exponent(series)
    except ValueError as exc:
        log.warning("no blowup exponent: %s", exc)
        c_x = None
    wt = phi_one_normalized(w0.x, p)
    drift = float(np.max(np.abs(wt * (w.values - w0.values))) / np.max(np.abs(wt * w0.values)))
    rep = asymptotics_report(sol, c_l=final.c_l, c_w=final.c_w, c_x=c_x)
    summary = {"profile": sol.summary(), "dt": ecfg.dt, "steps": ecfg.steps, "s_end": final.s,
               "seed": cfg.seed, "c_l": final.c_l, "c_w": final.c_w,
               "alpha_star": -final.c_w / final.c_l, "T_hat": series.records[-1]["T_hat"],
               "c_x": c_x if c_x is not None else math.nan,
               "c_x_predicted": 1.0 / (-final.c_w / final.c_l - p.alpha),
               "weighted_drift": drift, "asymptotics": rep.to_dict()}
    write_json(out / "summary.json", summary)
    state["metrics"] = summary
    if not sol.converged:
        raise NonConvergence(f"initial profile residual {sol.residual_norm:.3e} above tol {cfg.tol:g}")
    return summary, ["series.csv", "final.csv", "summary.json"]


def _ring_grid(cfg):
    from .biot_savart import HalfPlaneGrid
    return HalfPlaneGrid.graded(cfg.grid_nr, cfg.grid_nz, r_core=7.0, z_core=5.0,
                                r_max=cfg.grid_box, z_max=cfg.grid_box)


def _ring(grid):
    import numpy as np
    from .biot_savart import Field2D
    f = lambda r, z: z * np.exp(-(r - 2.0) ** 2 - z * z)
    R, Z = grid.mesh()
    return Field2D(grid, f(R, Z), support=(grid.r_max, grid.z_max))


def _write_field(path, Omega):
    from .io import write_csv
    R, Z = Omega.grid.mesh()
    write_csv(path, ["r", "z", "Omega"], [R, Z, Omega.values])


def run_evolve2d(cfg, out: Path, state):
    import numpy as np
    from .biot_savart import EllipticOperator
    from .io import write_csv, write_json
    from .rescaling import EvolutionConfig, physical_dt, step_physical_2d, transport_sup
    p = state["params"]
    if cfg.mode == "rescaled":
        return _run_evolve2d_rescaled(cfg, out, state)
    g = _ring_grid(cfg)
    Om0 = _ring(g)
    op = EllipticOperator(g, p)
    dt = cfg.dt if cfg.dt is not None else physical_dt(Om0, p, operator=op)
    ecfg = EvolutionConfig(dt=dt, steps=cfg.steps if cfg.steps is not None else 200,
                           output_every=cfg.output_every)
    Om = Om0
    rows = [(0.0, transport_sup(Om, p.alpha), float(np.max(np.abs(Om.values))))]
    for n in range(1, ecfg.steps + 1):
        Om, _ = step_physical_2d(Om, ecfg, p, operator=op)
        if n % ecfg.output_every == 0 or n == ecfg.steps:
            rows.append((n * dt, transport_sup(Om, p.alpha), float(np.max(np.abs(Om.values)))))
    t, sup_q, sup_om = (np.array(c) for c in zip(*rows))
    write_csv(out / "series.csv", ["t", "sup_q", "sup_Omega"], [t, sup_q, sup_om])
    _write_field(out / "final.csv", Om)
    summary = {"mode": "physical", "dt": dt, "steps": ecfg.steps, "t_end": float(t[-1]),
               "sup_q_initial": float(sup_q[0]), "sup_q_final": float(sup_q[-1]),
               "sup_q_max_drift": float(np.max(np.abs(sup_q / sup_q[0] - 1.0))),
               "grid": [g.r.size, g.z.size], "box": [g.r_max, g.z_max]}
    write_json(out / "summary.json", summary)
    return summary, ["series.csv", "final.csv", "summary.json"]


def _run_evolve2d_rescaled(cfg, out: Path, state):
    """Rescaled run from the eps profile extended constant in r."""
    import numpy as np
    from .biot_savart import EllipticOperator, Field2D, HalfPlaneGrid, psi_elliptic_solve
    from .io import write_json
    from .rescaling import (EvolutionConfig, RescalingState, TimeSeries, fit_blowup_exponent,
                            reconstruct_scales, step_rescaled_2d)
    p = state["params"]
    sol = _solve_profile(cfg, p)
    g = HalfPlaneGrid.graded(cfg.grid_nr, cfg.grid_nz, r_core=6.0, z_core=6.0,
                             r_max=cfg.grid_box, z_max=cfg.grid_box)
    R, Z = g.mesh()
    Om0 = Field2D(g, _perturb(sol.W.smooth(Z), cfg.seed), support=(g.r_max, g.z_max))
    op = EllipticOperator(g, p)
    # the part of J(inf) carried by the profile beyond the box enters as a linear stream
    far_j = sol.j_inf - psi_elliptic_solve(Om0, p, operator=op).psi_z_origin / (2.0 * p.alpha)
    ecfg = EvolutionConfig(dt=cfg.dt if cfg.dt is not None else 0.05 * p.epsilon,
                           steps=cfg.steps if cfg.steps is not None else 40,
                           output_every=cfg.output_every)
    ecfg.check_rescaled(p)
    st = RescalingState.initial(p, sol.c_l, sol.c_w)
    series = TimeSeries(C_w0=st.C_w)
    Om = Om0
    for n in range(ecfg.steps):
        new, st_new, _ = step_rescaled_2d(Om, st, ecfg, p, operator=op, far_j=far_j)
        if n % ecfg.output_every == 0:
            rec = replace(st, c_l=st_new.c_l, c_w=st_new.c_w, psi_z0=st_new.psi_z0)
            series.record_state(rec, norm=float(np.max(np.abs(Om.values))))
        Om, st = new, st_new
    series.record_state(st, norm=float(np.max(np.abs(Om.values))))
    series = reconstruct_scales(series, p)
    series.to_csv(out / "series.csv")
    _write_field(out / "final.csv", Om)
    try:
        c_x = fit_blowup_exponent(series)
    except ValueError:
        c_x = math.nan
    axis = np.max(np.abs(Om.values[0] - Om0.values[0])) / np.max(np.abs(Om0.values[0]))
    summary = {"mode": "rescaled", "dt": ecfg.dt, "steps": ecfg.steps, "s_end": st.s,
               "far_j": far_j, "c_l": st.c_l, "c_w": st.c_w, "c_x": c_x,
               "T_hat": series.records[-1]["T_hat"], "axis_drift": float(axis),
               "profile_converged": sol.converged,
               "grid": [g.r.size, g.z.size], "box": [g.r_max, g.z_max]}
    write_json(out / "summary.json", summary)
    state["metrics"] = summary
    if not sol.converged:
        raise NonConvergence(f"initial profile residual {sol.residual_norm:.3e} above tol {cfg.tol:g}")
    return summary, ["series.csv", "final.csv", "summary.json"]


def run_streamfn(cfg, out: Path, state):
    import numpy as np
    from .biot_savart import psi_elliptic_solve, psi_kernel_quadrature
    from .io import write_csv, write_json
    p = state["params"]
    g = _ring_grid(cfg)
    Om = _ring(g)
    el = psi_elliptic_solve(Om, p, bc="kernel", tol=cfg.tol)
    write_csv(out / "stream.csv", ["r", "z", "psi", "u_r", "u_z"],
              [el.r, el.z, el.psi, el.u_r, el.u_z])
    # kernel quadrature at a fixed, deterministic set of nodes in the bulk of psi
    mask = (np.abs(el.psi) > 0.2 * np.abs(el.psi).max()) & (el.r > 0)
    idx = np.argwhere(mask)
    sel = idx[np.random.default_rng(0 if cfg.seed is None else cfg.seed).choice(
        len(idx), min(20, len(idx)), replace=False)]
    pts = np.array([[g.r[i], g.z[j]] for i, j in sel])
    kq = psi_kernel_quadrature(Om, p, pts)
    ev = np.array([el.psi[i, j] for i, j in sel])
    rel = np.abs(kq.psi / ev - 1.0)
    write_csv(out / "probes.csv", ["r", "z", "psi_kernel", "psi_elliptic", "rel_diff"],
              [pts[:, 0], pts[:, 1], kq.psi, ev, rel])
    summary = {"grid": [g.r.size, g.z.size], "box": [g.r_max, g.z_max],
               "psi_z_origin": el.psi_z_origin, "elliptic_residual": el.error_estimate,
               "kernel_error_estimate": kq.error_estimate,
               "probe_max_rel_diff": float(rel.max()), "probes": len(pts)}
    write_json(out / "summary.json", summary)
    return summary, ["stream.csv", "probes.csv", "summary.json"]


def verify_plan(level: str):
    """(criterion, callable) pairs; ``full`` adds seeds and a finer elliptic grid."""
    from . import checks
    quick = level == "quick"
    plan = dict(checks.ALL)
    plan["A4"] = lambda: checks.check_a4(ns=(64, 128, 256) if quick else (64, 128, 256, 512))
    plan["A7"] = lambda: checks.check_a7(seeds=10 if quick else 20)
    return list(plan.items())


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, obj))


def run_verify(cfg, out: Path, state):
    from .io import write_rows
    results = []
    for name, fn in verify_plan(cfg.level):
        r = fn()
        print(r.line(), flush=True)
        results.append(r)
    write_rows(out / "verify.csv", ["criterion", "passed", "detail"],
               [(r.name, r.passed, r.detail.replace(",", ";")) for r in results])
    rows = []
    for r in results:
        flat = []
        _flatten("", r.metrics, flat)
        rows += [(r.name, k, v) for k, v in flat]
    write_rows(out / "verify_metrics.csv", ["criterion", "metric", "value"], rows)
    metrics = {r.name: r.passed for r in results}
    state["metrics"] = metrics
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NonConvergence("failed criteria: " + ", ".join(failed))
    return metrics, ["verify.csv", "verify_metrics.csv"]


def run_report(cfg, out: Path, state):
    """Profile for each eps of the sweep; one row per eps with scaling deviations."""
    from .diagnostics import asymptotics_report
    from .io import write_csv, write_json
    from .params import params_from_epsilon
    eps = sorted(cfg.epsilons, reverse=True)
    cols = {k: [] for k in ("epsilon", "converged", "residual", "c_l", "c_w", "dev_c_l",
                            "dev_c_w", "alpha_star", "alpha_star_dev_over_eps", "tail_p",
                            "tail_A", "c_x_predicted", "T_alpha")}
    per_eps = {}
    for e in eps:
        p = params_from_epsilon(e)
        sol = _solve_profile(cfg, p)
        rep = asymptotics_report(sol)
        rows = rep.rows
        vals = {"epsilon": e, "converged": float(sol.converged), "residual": sol.residual_norm,
                "c_l": sol.c_l, "c_w": sol.c_w,
                "dev_c_l": rows["c_l"]["relative_deviation"],
                "dev_c_w": rows["c_w"]["relative_deviation"],
                "alpha_star": sol.alpha_star,
                "alpha_star_dev_over_eps": rows["alpha_star"]["deviation_over_eps"],
                "tail_p": sol.tail.p, "tail_A": sol.tail.A,
                "c_x_predicted": rows.get("c_x_predicted", {}).get("value", math.nan),
                "T_alpha": rep.T_alpha}
        for k in cols:
            cols[k].append(vals[k])
        per_eps[f"{e:g}"] = {"summary": sol.summary(), "asymptotics": rep.to_dict()}
    write_csv(out / "report.csv", list(cols), list(cols.values()))
    dl = [abs(v) for v in cols["dev_c_l"]]
    dw = [abs(v) for v in cols["dev_c_w"]]
    summary = {"epsilons": eps, "per_epsilon": per_eps,
               "dev_c_l_nonincreasing": all(b <= a for a, b in zip(dl, dl[1:])),
               "dev_c_w_nonincreasing": all(b <= a for a, b in zip(dw, dw[1:]))}
    write_json(out / "summary.json", summary)
    state["metrics"] = summary
    bad = [f"{e:g}" for e, c in zip(eps, cols["converged"]) if not c]
    if bad:
        raise NonConvergence("profile did not converge for eps = " + ", ".join(bad))
    return summary, ["report.csv", "summary.json"]


PIPELINES = {"params": run_params, "profile1d": run_profile1d, "evolve1d": run_evolve1d,
             "evolve2d": run_evolve2d, "streamfn": run_streamfn, "verify": run_verify,
             "report": run_report}


# ---------------------------------------------------------------------------


def _versions():
    import numpy
    import scipy
    from . import __version__
    return {"blowuplab": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_command(cfg: RunConfig) -> int:
    """Run the configured pipeline and write its manifest; returns the exit status."""
    from .io import write_json
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "config_sources": cfg.sources,
                "versions": _versions(), "status": "running", "failure_reason": None,
                "files": [], "metrics": {}, "timings": {}}
    state = {"metrics": {}}
    t0 = time.perf_counter()
    code = 0
    try:
        if cfg.epsilon_value() is not None:
            state["params"] = _params(cfg)
            manifest["params"] = state["params"].to_json_dict()
        manifest["timings"]["params_s"] = time.perf_counter() - t0
        metrics, files = PIPELINES[cfg.command](cfg, out, state)
        manifest.update(status="ok", metrics=metrics, files=files)
    except NonConvergence as exc:
        code = 1
        manifest.update(status="not_converged", failure_reason=str(exc), metrics=state["metrics"])
    except Exception as exc:  # any solver failure still gets a manifest
        code = 1
        log.exception("run failed")
        manifest.update(status="error", failure_reason=f"{type(exc).__name__}: {exc}",
                        metrics=state["metrics"])
    manifest["timings"]["total_s"] = time.perf_counter() - t0
    if not manifest["files"]:
        manifest["files"] = sorted(p.name for p in out.iterdir()
                                   if p.is_file() and p.name != "manifest.json")
    manifest["files"] = sorted(set(manifest["files"]) | {"manifest.json"})
    write_json(out / "manifest.json", manifest)
    if code:
        print(f"blowuplab {cfg.command}: {manifest['status']}: {manifest['failure_reason']}",
              file=sys.stderr)
    return code


def main(argv=None) -> int:
    _cap_threads()
    try:
        ns = build_parser().parse_args(argv)
        cfg = config_from_args(ns)
        if not _writable(cfg.out):
            raise ConfigError([f"output directory {cfg.out!r} is not writable"])
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: bad flag or --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
