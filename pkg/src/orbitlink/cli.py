"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 unreliable
statistics. Impulses are reported in m/s; everything internal is km/s.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import conic
from .errors import DomainError, OrbitLinkError, PropagationError, SolverError
from .problem import Perfect, linearize, run_scp, validate
from .scenario import Scenario, ScenarioError, load
from .uncertainty import (MomentSet, detect, estimate, mahalanobis_sweep, pdf_grid,
                          pearson_fit, sigma_points)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_UNRELIABLE = 4

OUT_ENV = "ORBITLINK_OUT_DIR"
KMPS_TO_MPS = 1e3
PDF_GRID_NOTE = ("201 uniform points over mean +- 5 sigma, stopping half a step inside "
                 "a finite support end")

log = logging.getLogger("orbitlink")


# ---------------------------------------------------------------- output helpers

def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data: dict) -> None:
    _write_atomic(path, json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _write_atomic(path, buf.getvalue())


def _out_dir(args, scen: Scenario) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if scen.output_dir:
        return Path(scen.output_dir)
    return Path("out") / scen.name


def _base_summary(command: str, scen: Scenario) -> dict:
    return {"command": command, "version": __version__, "scenario": scen.raw}


def _solution_timings(sol) -> dict:
    t = sol.timings
    return {"reference_and_stm_s": t.get("linearize", 0.0),
            "solve_s": list(t.get("solve", [])),
            "repropagation_s": list(t.get("repropagate", [])),
            "total_s": t.get("total", 0.0)}


# ---------------------------------------------------------------- commands

def cmd_reconstruct(args, scen: Scenario) -> int:
    spec = scen.spec
    if not isinstance(spec.mode, Perfect):
        raise ScenarioError("mode.kind", "reconstruct needs the perfect mode")
    sol = run_scp(spec)
    out = _out_dir(args, scen)
    summary = _base_summary("reconstruct", scen)
    summary["status"] = sol.status
    summary["scp_iterations"] = sol.scp_iterations
    summary["history"] = sol.history
    summary["timings"] = _solution_timings(sol)
    if sol.failed_iteration is not None:
        summary["failed_iteration"] = sol.failed_iteration
        write_json(out / "summary.json", summary)
        print(f"solver status {sol.status} at SCP iteration {sol.failed_iteration}",
              file=sys.stderr)
        return EXIT_SOLVER
    check = validate(spec, sol)
    active = np.flatnonzero(sol.active())
    summary.update({
        "total_dv_mps": sol.total_dv * KMPS_TO_MPS,
        "active_impulses": [{"node": int(i), "epoch_s": float(sol.epochs[i]),
                             "dv_mps": float(sol.dv_mags[i] * KMPS_TO_MPS)} for i in active],
        "validation": {
            "terminal_miss_km": check["terminal_miss_km"],
            "terminal_miss_mahalanobis": check["terminal_miss_mahalanobis"],
        },
        "max_relaxation_gap_mps": float(np.max(sol.slack - sol.dv_mags)) * KMPS_TO_MPS,
    })
    rows = [(float(t), *(sol.dv_rtn[i] * KMPS_TO_MPS), sol.dv_mags[i] * KMPS_TO_MPS)
            for i, t in enumerate(sol.epochs)]
    write_csv(out / "profile.csv", ["epoch_s", "dv_r_mps", "dv_t_mps", "dv_n_mps", "dv_mag_mps"],
              rows)
    write_json(out / "summary.json", summary)
    print(f"{scen.name}: total dv {sol.total_dv * KMPS_TO_MPS:.6f} m/s, "
          f"{sol.scp_iterations} SCP iteration(s), status {sol.status}")
    return EXIT_OK


def cmd_detect(args, scen: Scenario) -> int:
    spec = scen.spec
    t0 = time.perf_counter()
    shared = linearize(spec)
    curve = mahalanobis_sweep(spec, scen.detection.confidences, shared)
    total = time.perf_counter() - t0
    out = _out_dir(args, scen)
    write_csv(out / "detection_curve.csv", ["confidence", "dv_mps", "status"],
              [(p.confidence, p.total_dv * KMPS_TO_MPS, p.status) for p in curve.points])
    opts = scen.detection
    verdict = detect(curve, opts.decision_confidence, opts.threshold_mps / KMPS_TO_MPS)
    summary = _base_summary("detect", scen)
    summary.update({
        "verdict": {"maneuver_flag": verdict.maneuver_flag,
                    "margin_mps": verdict.margin * KMPS_TO_MPS,
                    "dv_mps": verdict.total_dv * KMPS_TO_MPS,
                    "confidence": opts.decision_confidence,
                    "threshold_mps": opts.threshold_mps},
        "points_solved": int(sum(p.status == "Optimal" for p in curve.points)),
        "timings": {"reference_and_stm_s": shared.elapsed, "total_s": total},
    })
    write_json(out / "summary.json", summary)
    if summary["points_solved"] == 0:
        print("no confidence level solved", file=sys.stderr)
        return EXIT_SOLVER
    flag = "maneuver" if verdict.maneuver_flag else "no maneuver"
    print(f"{scen.name}: {flag} at {opts.decision_confidence:.0%} "
          f"(dv {verdict.total_dv * KMPS_TO_MPS:.6g} m/s)")
    return EXIT_OK


def cmd_estimate(args, scen: Scenario) -> int:
    spec = scen.spec
    seed = scen.seed if args.seed is None else args.seed
    sigma = sigma_points(scen.estimation.scheme, 12, scen.estimation.samples, seed)
    stats = estimate(spec, sigma, threads=max(1, args.threads))
    out = _out_dir(args, scen)
    rows = [(float(t), *(stats.per_node_mean[i] * KMPS_TO_MPS),
             *(stats.per_node_3sigma[i] * KMPS_TO_MPS)) for i, t in enumerate(stats.epochs)]
    write_csv(out / "profile_stats.csv",
              ["epoch_s", "mean_r_mps", "mean_t_mps", "mean_n_mps",
               "sigma3_r_mps", "sigma3_t_mps", "sigma3_n_mps"], rows)
    m = stats.moments
    mps = MomentSet(m.mean * KMPS_TO_MPS, m.variance * KMPS_TO_MPS ** 2, m.skewness, m.kurtosis)
    dist = {
        "scheme": stats.scheme.value,
        "point_count": stats.point_count,
        "failure_count": stats.failures,
        "unreliable": stats.unreliable,
        "moments": {"mean_mps": mps.mean, "std_mps": mps.std, "variance_m2ps2": mps.variance,
                    "skewness": None if mps.degenerate else mps.skewness,
                    "kurtosis": None if mps.degenerate else mps.kurtosis},
        "pearson": None,
        "pearson_note": stats.fit_note,
        "pdf": None,
    }
    if stats.fit is not None:
        fit = pearson_fit(mps)
        grid = pdf_grid(fit)
        dist["pearson"] = fit.to_dict()
        dist["pdf"] = {"grid": PDF_GRID_NOTE, "dv_mps": grid, "density_per_mps": fit.pdf(grid)}
    write_json(out / "distribution.json", dist)
    summary = _base_summary("estimate", scen)
    summary.update({
        "scheme": stats.scheme.value, "point_count": stats.point_count,
        "failure_count": stats.failures, "unreliable": stats.unreliable,
        "mean_dv_mps": mps.mean, "std_dv_mps": mps.std,
        "pearson_family": dist["pearson"]["family"] if dist["pearson"] else None,
        "timings": {"reference_and_stm_s": stats.timings["linearize"],
                    "total_s": stats.timings["total"]},
    })
    write_json(out / "summary.json", summary)
    print(f"{scen.name}: mean dv {mps.mean:.6g} m/s over {stats.point_count} points, "
          f"{stats.failures} failure(s)")
    if stats.unreliable:
        print("more than 5% of the sigma points failed: statistics unreliable", file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


def cmd_solve_conic(args) -> int:
    prog = conic.load_program(args.program)
    sol = conic.solve(prog)
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "."))
    target = out / (Path(args.program).stem + ".solution.txt")
    buf = io.StringIO()
    conic.dump_solution(sol, buf)
    _write_atomic(target, buf.getvalue())
    print(f"{sol.status.value} after {sol.iterations} iterations, objective {sol.primal_obj:.12g}")
    return EXIT_OK if sol.status is conic.Status.OPTIMAL else EXIT_SOLVER


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitlink",
                                description="Maneuver detection and estimation between two "
                                            "orbit estimates.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("reconstruct", "minimum-impulse profile between exact states"),
                           ("detect", "minimum impulse versus confidence level"),
                           ("estimate", "sigma-point statistics of the maneuver")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV})")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None, help="Monte Carlo seed override")
    sc = sub.add_parser("solve-conic", help="solve a dumped conic program")
    sc.add_argument("--program", required=True, help="program dump file")
    sc.add_argument("--out", help="output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "solve-conic":
            return cmd_solve_conic(args)
        if args.threads < 1:
            raise ScenarioError("--threads", "must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ScenarioError("--seed", "must be non-negative")
        scen = load(args.scenario)
        handler = {"reconstruct": cmd_reconstruct, "detect": cmd_detect,
                   "estimate": cmd_estimate}[args.command]
        return handler(args, scen)
    except (SolverError, PropagationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DomainError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OrbitLinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
