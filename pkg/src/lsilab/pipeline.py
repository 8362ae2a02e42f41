"""End-to-end scenario runs, refinement studies and report emission."""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, LsiLabError, PipelineError
from .geometry import ChartGeometry, compute_curvature
from .inequality import (
    DEFAULT_TOLERANCES,
    check_hypotheses,
    evaluate_baselines,
    evaluate_log_sobolev,
    log_sobolev_constant,
)
from .operators import ScalarField, epsilon_h
from .potential import lemma_delta_u_check, normalize_density, normalization_residual, solve_potential
from .scenario import Scenario, build_geometry, evaluate_density
from .transport import TransportContext, covering_montecarlo, run_sweep, write_sweep_csv


class _Stage:
    """Re-raise package errors annotated with the pipeline stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, LsiLabError) and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _verdict(passed: bool, value, tolerance) -> dict:
    return {"passed": bool(passed), "value": value, "tolerance": tolerance}


def _inequality(scn: Scenario, f: ScalarField, geo, curv, tol: dict):
    if scn.inequality == "main":
        consts = log_sobolev_constant(geo.n, geo.m, scn.theta)
        return evaluate_log_sobolev(f, geo, curv, consts, scenario=scn.name, tolerances=tol)
    if scn.inequality == "beckner":
        return evaluate_baselines(f, geo, "beckner", scenario=scn.name, tolerances=tol)
    m_sphere = geo.ambient_dim - 1 - geo.n
    which = "pham_m12" if m_sphere <= 2 else "pham_m3plus"
    return evaluate_baselines(f, geo, which, scenario=scn.name, tolerances=tol)


def run_scenario(scn: Scenario, seed: int | None = None, refine: int | None = None, keep_sweep: bool = True) -> dict:
    """Geometry -> curvature -> hypotheses -> inequality -> normalize -> solve -> lemma -> transport."""
    if seed is not None:
        scn = scn.with_seed(seed)
    if refine is not None:
        scn = scn.with_refinement(refine)
    tol = {**DEFAULT_TOLERANCES, **scn.tolerance_overrides()}
    verdicts: dict = {}
    skipped: dict = {}
    with _Stage("geometry"):
        geo = build_geometry(scn.geometry)
    with _Stage("curvature"):
        curv = compute_curvature(geo)
        eps = epsilon_h(geo)
    with _Stage("density"):
        f = ScalarField(evaluate_density(scn.density, geo), geo)
    with _Stage("hypotheses"):
        if scn.inequality == "main":
            check_hypotheses(f, geo, curv, tol["mean_curvature"])
    with _Stage("inequality"):
        ineq = _inequality(scn, f, geo, curv, tol)
    verdicts["deficit_nonnegative"] = _verdict(ineq.deficit >= -eps, ineq.deficit, -eps)

    report = ineq.to_dict()
    report["inequality"] = scn.inequality
    report["eps_h"] = eps

    n = geo.n
    lemma_summary = None
    sweep_data = None
    if scn.lemma or scn.transport.enabled:
        with _Stage("normalize"):
            nd = normalize_density(f, n)
            resid = normalization_residual(nd.f, n)
        mass = float(nd.f.geometry.weights @ nd.values)
        verdicts["normalization_residual"] = _verdict(abs(resid) <= 1e-8 * mass, resid, 1e-8 * mass)
        with _Stage("solve"):
            sol = solve_potential(nd, n)
        verdicts["solver_residual"] = _verdict(sol.solver_residual <= 1e-8, sol.solver_residual, 1e-8)
        report["potential"] = {
            "scale_log": nd.scale_log,
            "solver_residual": sol.solver_residual,
            "iterations": sol.iterations,
            "max_grad_u": float(np.sqrt(sol.grad_norm_sq.max())),
            "omega_fraction": float(sol.omega_mask.mean()),
        }
        if scn.lemma:
            with _Stage("lemma"):
                lc = lemma_delta_u_check(sol, nd, n)
            lemma_summary = {
                "min_slack": lc.min_slack,
                "min_intermediate_slack": lc.min_intermediate_slack,
                "violation": lc.violation,
                "intermediate_violation": max(0.0, -lc.min_intermediate_slack),
                "chain_tighter": lc.chain_tighter,
                "omega_fraction": lc.omega_fraction,
            }
            verdicts["lemma_min_slack"] = _verdict(lc.min_slack >= -eps, lc.min_slack, -eps)
            verdicts["lemma_intermediate_slack"] = _verdict(
                lc.min_intermediate_slack >= -eps, lc.min_intermediate_slack, -eps
            )
            verdicts["lemma_chain_tighter"] = _verdict(lc.chain_tighter, lc.chain_tighter, True)
        else:
            skipped["lemma"] = "disabled in config"
        if scn.transport.enabled and isinstance(geo, ChartGeometry):
            with _Stage("transport"):
                ctx = TransportContext.build(sol, nd)
                sweep = run_sweep(ctx, scn.transport.r_ladder, scn.transport.samples, seed=scn.transport.seed)
                cov = covering_montecarlo(
                    ctx, scn.transport.covering_r, scn.transport.sigma, scn.transport.covering_trials, seed=scn.transport.seed
                )
            c = sweep.checks
            for key in (
                "jacobian_bound_violations",
                "monotone_violations",
                "positivity_violations",
                "t_range_violations",
                "trace_violations",
                "am_hm_violations",
            ):
                verdicts[key] = _verdict(c[key] == 0, c[key], 0)
            verdicts["covering_fraction"] = _verdict(cov.fraction == 1.0, cov.fraction, 1.0)
            report["transport"] = {
                "r_ladder": list(scn.transport.r_ladder),
                "samples": len(sweep.samples),
                **c,
                "covering": {
                    "r": scn.transport.covering_r,
                    "sigma": scn.transport.sigma,
                    "region_points": cov.region_points,
                    "drawn": cov.drawn,
                    "covered": cov.covered,
                    "fraction": cov.fraction,
                    "vacuous": cov.vacuous,
                    "failures": cov.failures[:10],
                },
            }
            if keep_sweep:
                sweep_data = sweep
        elif scn.transport.enabled:
            skipped["transport"] = "needs a chart geometry (intrinsic Hessian unavailable on meshes)"
        else:
            skipped["transport"] = "disabled in config"
    else:
        skipped["lemma"] = "disabled in config"
        skipped["transport"] = "disabled in config"
    report["lemma"] = lemma_summary
    report["verdicts"] = verdicts
    report["skipped"] = skipped
    report["all_passed"] = all(v["passed"] for v in verdicts.values())
    report["provenance"] = {"config_hash": scn.config_hash(), "seed": scn.transport.seed, "tool_version": __version__}
    report["timestamp"] = datetime.now(timezone.utc).isoformat()
    report = _clean(report)
    if sweep_data is not None:
        report["_sweep"] = sweep_data
        report["_m"] = geo.m
    return report


def _order(a, b):
    if a is None or b is None or a <= 0 or b <= 0:
        return None
    return math.log2(a / b)


def refinement_study(scn: Scenario, levels) -> dict:
    """Per-level deficit, Lemma slack and bound violation, with empirical orders between levels."""
    levels = [int(v) for v in levels]
    if len(levels) < 2:
        raise ConfigError("a refinement study needs at least two levels")
    rows = []
    for L in levels:
        rep = run_scenario(scn, refine=L, keep_sweep=False)
        lem = rep.get("lemma") or {}
        tr = rep.get("transport") or {}
        rows.append(
            {
                "level": L,
                "samples": rep["mesh"]["samples"],
                "deficit": rep["deficit"],
                "abs_deficit": abs(rep["deficit"]),
                "eps_h": rep["eps_h"],
                "min_slack": lem.get("min_slack"),
                "slack_violation": lem.get("violation"),
                "intermediate_violation": lem.get("intermediate_violation"),
                "max_bound_violation": tr.get("worst_jacobian_excess"),
                "all_passed": rep["all_passed"],
            }
        )
    for k in range(len(rows) - 1):
        a, b = rows[k], rows[k + 1]
        a["order_abs_deficit"] = _order(a["abs_deficit"], b["abs_deficit"])
        a["order_intermediate_violation"] = _order(a["intermediate_violation"], b["intermediate_violation"])
    return {"scenario": scn.name, "levels": levels, "rows": rows, "config_hash": scn.config_hash()}


REPORT_FIELDS = ("scenario", "n", "m", "theta", "lhs", "rhs", "deficit", "constants", "equality_flags", "mesh", "tolerances")


def emit(report: dict, out_dir, formats=("json", "csv", "plotscript"), study: dict | None = None) -> list:
    """Write report.json, sweep/ratio/convergence CSVs and a gnuplot script; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sweep = report.get("_sweep")
    public = {k: v for k, v in report.items() if not k.startswith("_")}
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(public, indent=2, sort_keys=True) + "\n")
        written.append(p)
    csvs = {}
    if "csv" in formats:
        if sweep is not None:
            p = out / "transport_sweep.csv"
            write_sweep_csv(p, sweep, report["_m"])
            written.append(p)
            csvs["sweep"] = p
            p = out / "ratio_scan.csv"
            with p.open("w") as fh:
                fh.write("series,s,ratio\n")
                for name, (s_vals, ratios) in sorted(sweep.ratio_scans.items()):
                    for s, q in zip(s_vals, ratios):
                        fh.write(f"{name},{s!r},{q!r}\n")
            written.append(p)
            csvs["ratio"] = p
        if study is not None:
            p = out / "convergence.csv"
            cols = ["level", "samples", "deficit", "abs_deficit", "eps_h", "min_slack", "slack_violation", "max_bound_violation"]
            with p.open("w") as fh:
                fh.write(",".join(cols) + "\n")
                for row in study["rows"]:
                    fh.write(",".join("" if row[c] is None else repr(row[c]) for c in cols) + "\n")
            written.append(p)
            csvs["convergence"] = p
    if "plotscript" in formats:
        lines = ["# gnuplot script", "set datafile separator ','", "set terminal pngcairo size 900,600"]
        if "convergence" in csvs:
            lines += [
                "set output 'deficit_vs_refinement.png'",
                "set logscale y",
                "set xlabel 'refinement level'",
                "set ylabel '|deficit|'",
                f"plot '{csvs['convergence'].name}' every ::1 using 1:4 with linespoints title '|deficit|'",
                "unset logscale y",
            ]
        if "ratio" in csvs:
            lines += [
                "set output 'ratio_scan.png'",
                "set logscale x",
                "set xlabel 's'",
                "set ylabel 'Jacobian / bound'",
                f"plot '{csvs['ratio'].name}' every ::1 using 2:3 with points pt 7 ps 0.4 title 'ratio scan'",
            ]
        p = out / "plot.gp"
        p.write_text("\n".join(lines) + "\n")
        written.append(p)
    if study is not None and "json" in formats:
        p = out / "study.json"
        p.write_text(json.dumps(_clean(study), indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written

