"""Command-line driver: ``killingflow flow|soliton|speed|verify --config FILE``.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 divergence, 4 a verification check above its threshold.
Set ``KILLINGFLOW_LOG`` (DEBUG, INFO, WARNING, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph_geometry as gg
from .ambient import christoffel_consistency, grad_gamma_consistency
from .config import Scenario, load_config, apply_overrides, build
from .errors import ConfigError, KillingFlowError, SolverError
from .flow import contact_defect, closed_state, run_flow
from .graph_geometry import GraphState
from .stationary import (SolitonProblem, flux_balance_residual, soliton_speed, solve_soliton,
                         speed_bound, speed_bound_check)

log = logging.getLogger("killingflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4
SERIES_HEADER = ("t", "max_ut", "max_W", "min_W", "energy", "dissipation_residual")


# ---------------------------------------------------------------------------
# serialization


def fmt(v) -> str:
    """17 significant digits; adding 0.0 maps -0.0 to 0.0."""
    return "%.17g" % (float(v) + 0.0)


def _write(path, lines):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_series(series, path, columns=SERIES_HEADER):
    """CSV of the per-step records; an empty series gives a header-only file."""
    lines = [",".join(columns)]
    n = len(series.get(columns[0], [])) if series else 0
    for k in range(n):
        lines.append(",".join(fmt(series[c][k]) for c in columns))
    return _write(path, lines)


def emit_snapshot(u, path, axes):
    """CSV ``x1[,x2],u`` in row-major node order; ``axes`` are the coordinate vectors."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    u = np.asarray(u, dtype=float).reshape(tuple(a.size for a in axes))
    names = [f"x{k + 1}" for k in range(len(axes))]
    lines = [",".join(names + ["u"])]
    for idx in np.ndindex(u.shape):
        lines.append(",".join([fmt(axes[k][i]) for k, i in enumerate(idx)] + [fmt(u[idx])]))
    return _write(path, lines)


def emit_table(rows, header, path):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return _write(path, lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


@dataclass
class RunReport:
    command: str
    config: dict
    diagnostics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    exit_code: int = EXIT_OK
    message: str = ""

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "report.json"
        manifest = sorted(set(self.files) | {"report.json"})
        data = {"command": self.command, "exit_code": self.exit_code, "message": self.message,
                "config": self.config, "diagnostics": self.diagnostics, "files": manifest}
        text = json.dumps(_jsonable(data), indent=2, sort_keys=True)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8", newline="\n")
        self.files = manifest
        return path


# ---------------------------------------------------------------------------
# commands


def analytic_state(sc: Scenario) -> GraphState:
    """u0 with exact derivatives from its expression."""
    e, n = sc.u0_expr, sc.chart.dim
    grads = [e.diff(i) for i in range(n)]
    hess = [[grads[i].diff(j) for j in range(n)] for i in range(n)]
    return GraphState.from_callables(
        sc.geometry, sc.chart, e,
        lambda x: np.stack([g(x) for g in grads], axis=-1),
        lambda x: np.stack([np.stack([hess[i][j](x) for j in range(n)], -1)
                            for i in range(n)], -2))


def do_flow(sc: Scenario, out: Path, report: RunReport):
    res = run_flow(sc.geometry, sc.chart, sc.u0, sc.flow_config())
    report.files.append(emit_series(res.series, out / "series.csv").name)
    cols = tuple(res.series)
    report.files.append(emit_series(res.series, out / "series_full.csv", cols).name)
    for k, (t, u) in enumerate(res.snapshots):
        name = f"snapshot_{k:04d}.csv"
        emit_snapshot(u, out / name, sc.chart.axes)
        report.files.append(name)
    e = res.series["energy"]
    report.diagnostics.update(res.diagnostics)
    report.diagnostics.update({
        "stop_reason": res.stop_reason, "dt": res.dt, "steps": len(e) - 1,
        "t_final": float(res.series["t"][-1]),
        "energy_initial": float(e[0]), "energy_final": float(e[-1]),
        "energy_increase_max": float(np.max(np.diff(e))) if len(e) > 1 else 0.0,
        "snapshot_times": [t for t, _ in res.snapshots],
    })
    if res.stop_reason == "diverged":
        report.exit_code = EXIT_DIVERGED
        report.message = "flow diverged"


def do_soliton(sc: Scenario, out: Path, report: RunReport):
    run = sc.config.run
    prob = SolitonProblem(sc.geometry, sc.chart, sc.Hcal, sc.phi, float(sc.config.problem["C"]))
    sol = solve_soliton(prob, method=run["method"], tol=float(run["tol"]),
                        max_iter=int(run["max_iter"]) if run["method"] == "newton" else None,
                        speed=run["speed"], dt=float(run.get("dt", 0.05)))
    report.files.append(emit_snapshot(sol.v, out / "soliton.csv", sc.chart.axes).name)
    st = closed_state(sc.geometry, sc.chart, sol.v, sc.phi)
    W_max = float(np.max(gg.compute_W(sc.geometry, st)))
    rows = [[sol.C, prob.C, sol.residual_pde, sol.residual_bc, sol.flux_residual,
             sol.compatibility_defect, sol.iterations]]
    report.files.append(emit_table(rows, ["C", "C_target", "residual_pde", "residual_bc",
                                          "flux_residual", "compatibility_defect", "iterations"],
                                   out / "speed.csv").name)
    report.diagnostics.update({
        "C": sol.C, "C_target": prob.C, "residual_pde": sol.residual_pde,
        "residual_bc": sol.residual_bc, "flux_residual": sol.flux_residual,
        "compatibility_defect": sol.compatibility_defect, "iterations": sol.iterations,
        "residual_history": sol.history, "W_max": W_max,
        "speed_bound": speed_bound(sc.geometry, sc.chart, sc.Hcal, W_max),
        "speed_bound_ok": speed_bound_check(sc.geometry, sc.chart, sol.C, sc.Hcal, W_max),
        "speed_bound_surrogate": "observed W_max replaces the a priori gradient bound",
    })


def do_speed(sc: Scenario, out: Path, report: RunReport):
    st = closed_state(sc.geometry, sc.chart, sc.u0, sc.phi)
    W_max = float(np.max(gg.compute_W(sc.geometry, st)))
    C = soliton_speed(sc.geometry, st, sc.Hcal, sc.phi, weight=sc.config.run["weight"])
    C_other = soliton_speed(sc.geometry, st, sc.Hcal, sc.phi,
                            weight="printed" if sc.config.run["weight"] == "killing" else "killing")
    flux = flux_balance_residual(sc.geometry, st, sc.Hcal, sc.phi, C, sc.config.run["weight"])
    bound = speed_bound(sc.geometry, sc.chart, sc.Hcal, W_max)
    rows = [[C, C_other, flux, bound, int(abs(C) <= bound)]]
    report.files.append(emit_table(rows, ["C", "C_alternate_weight", "flux_residual",
                                          "speed_bound", "bound_ok"], out / "speed.csv").name)
    report.diagnostics.update({"C": C, "C_alternate_weight": C_other, "weight":
                               sc.config.run["weight"], "flux_residual": flux,
                               "speed_bound": bound, "speed_bound_ok": abs(C) <= bound,
                               "W_max": W_max})


def verify_checks(sc: Scenario) -> list:
    """(name, value, threshold) for the invariants checkable on one scenario."""
    geo, chart = sc.geometry, sc.chart
    x = chart.points.reshape(-1, chart.dim)
    checks = []
    ana = analytic_state(sc)
    H_tr = gg.mean_curvature(geo, ana, "trace")
    H_dv = gg.mean_curvature(geo, ana, "divergence", "expanded")
    a12 = gg.second_fundamental_form(geo, ana, "eq12")
    a13 = gg.second_fundamental_form(geo, ana, "eq13")
    scale_H = 1.0 + float(np.max(np.abs(H_tr)))
    W2 = float(np.max(gg.compute_W(geo, ana))) ** 2
    checks.append(("unit_normal_defect", gg.unit_normal_defect(geo, ana), 1e-12 * W2))
    checks.append(("form_eq12_vs_eq13", float(np.max(np.abs(a12 - a13))), 1e-10 * scale_H))
    checks.append(("form_trace_vs_divergence", float(np.max(np.abs(H_tr - H_dv))),
                   1e-10 * scale_H))
    checks.append(("grad_gamma_consistency", grad_gamma_consistency(geo, x, 1e-4), 1e-6))
    checks.append(("christoffel_consistency", christoffel_consistency(geo, x, 1e-4), 1e-6))
    st = closed_state(geo, chart, sc.u0, sc.phi)
    checks.append(("closure_self_consistency", contact_defect(geo, st, sc.phi), 1e-10))
    C = soliton_speed(geo, st, sc.Hcal, sc.phi)
    checks.append(("speed_flux_identity", flux_balance_residual(geo, st, sc.Hcal, sc.phi, C),
                   1e-10 * (1.0 + abs(C))))
    cfg = sc.flow_config()
    cfg.max_steps = 20
    cfg.snapshot_every = 0
    res = run_flow(geo, chart, sc.u0, cfg)
    h2 = max(chart.h) ** 2
    d = res.diagnostics
    checks.append(("max_principle_excess", max(0.0, d["max_ut_run"] - d["max_ut_initial"]),
                   d["tol_mp"]))
    checks.append(("closure_along_run", d["max_contact_defect"], 1e-10))
    diss = res.series["dissipation_residual"]
    start = max(1, len(diss) // 10 + 1)
    if len(diss) > start:
        checks.append(("dissipation_residual", float(np.max(diss[start:])),
                       20.0 * (h2 + res.dt)))
    return checks


def do_verify(sc: Scenario, out: Path, report: RunReport):
    checks = verify_checks(sc)
    rows = [[name, float(v), float(thr), "PASS" if v <= thr else "FAIL"] for name, v, thr in checks]
    report.files.append(emit_table(rows, ["check", "value", "threshold", "status"],
                                   out / "verify.csv").name)
    report.diagnostics["checks"] = {r[0]: {"value": r[1], "threshold": r[2], "status": r[3]}
                                    for r in rows}
    for r in rows:
        print(f"{r[0]:<28s} {r[1]:12.4e} {r[2]:12.4e} {r[3]}")
    failed = [r[0] for r in rows if r[3] == "FAIL"]
    if failed:
        report.exit_code = EXIT_VERIFY
        report.message = "failed checks: " + ", ".join(failed)


COMMANDS = {"flow": do_flow, "soliton": do_soliton, "speed": do_speed, "verify": do_verify}


def run(command: str, config, out=None, resolution=None, dt=None) -> RunReport:
    """Load, dispatch and write outputs.  Errors map onto the report's exit code."""
    try:
        cfg = load_config(config) if not hasattr(config, "domain") else config
        if resolution is not None or dt is not None:
            cfg = apply_overrides(cfg, resolution, dt)
    except ConfigError as exc:
        rep = RunReport(command, {}, exit_code=EXIT_CONFIG, message=_describe(exc))
        return rep
    out_dir = Path(out if out is not None else cfg.output["directory"])
    report = RunReport(command, cfg.to_dict())
    try:
        sc = build(cfg)
        report.diagnostics["phi0"] = sc.phi0
        COMMANDS[command](sc, out_dir, report)
    except ConfigError as exc:
        report.exit_code, report.message = EXIT_CONFIG, _describe(exc)
    except SolverError as exc:
        report.exit_code, report.message = EXIT_SOLVER, str(exc)
        report.diagnostics["residual_history"] = list(exc.history)
    except KillingFlowError as exc:
        report.exit_code, report.message = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    report.write(out_dir)
    return report


def _describe(exc: ConfigError) -> str:
    lines = [str(exc)] + [f"  - {v}" for v in getattr(exc, "violations", [])]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="killingflow",
                                 description="Mean curvature flow of Killing graphs.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="scenario file or preset name")
    ap.add_argument("--out", default=None, help="output directory (overrides the file)")
    ap.add_argument("--resolution", type=int, default=None, help="nodes per axis")
    ap.add_argument("--dt", type=float, default=None, help="time step")
    return ap


def main(argv=None) -> int:
    level = os.environ.get("KILLINGFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    rep = run(args.command, args.config, args.out, args.resolution, args.dt)
    if rep.message:
        print(rep.message, file=sys.stderr)
    return rep.exit_code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
