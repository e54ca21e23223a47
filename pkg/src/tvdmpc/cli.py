"""Command-line front end: ``tighten``, ``run``, ``compare`` and ``report``.

Exit codes: 0 success, 1 acceptance failure, 2 configuration or input
error, 3 runtime or solver error.  The output directory is taken from
``--out``, then the ``TVDMPC_OUT`` environment variable, then the config.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, ReportError, ScheduleError, TvdMpcError
from .io import atomic_write_text, csv_text, read_json, read_trajectory, trajectory_csv, write_json
from .montecarlo import CONTROLLER_LABELS, compare_report, markdown_table, run_campaign
from .tightening import CORRECTED, PAPER_LITERAL, build_schedule, zeta_schedule

EXIT_OK, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
OUT_ENV = "TVDMPC_OUT"
REPORT_KIND = "tvdmpc-simulation-report"
log = logging.getLogger("tvdmpc")


def _out_dir(args, run_cfg=None):
    chosen = args.out or os.environ.get(OUT_ENV) or (run_cfg.out_dir if run_cfg else None)
    if not chosen:
        stem = Path(args.config).stem if getattr(args, "config", None) else "tvdmpc"
        chosen = os.path.join("runs", stem)
    return Path(chosen)


def _load(args):
    return load_config(args.config, zeta_mode=getattr(args, "zeta_mode", None),
                       margin_mode=getattr(args, "margin_mode", None), seed=getattr(args, "seed", None),
                       threads=getattr(args, "threads", None))


# -- tighten ------------------------------------------------------------------

def cmd_tighten(args):
    rc = _load(args)
    camp, spec = rc.campaign, rc.spec
    cells = []
    for cell in camp.cells:
        a = camp.controller_alpha(cell)
        entry = {"epsilon": cell.epsilon, "alpha": cell.alpha, "controller_alpha": a}
        for mode, name in ((CORRECTED, "corrected"), (PAPER_LITERAL, "paper_literal")):
            z = zeta_schedule(spec.disturbance, a, spec.N, mode)
            entry[f"zeta_{name}"] = z.tolist()
            entry[f"{name}_feasible"] = bool(np.all(z < cell.epsilon - 1e-8))
        try:
            sched = build_schedule(spec.sys, spec.state_con, spec.disturbance, cell.epsilon, a, spec.N,
                                   zeta_mode=camp.zeta_mode, margin_mode=rc.margin_mode,
                                   tail_convention=camp.tail_convention)
            entry["schedule"] = sched.to_dict()
            entry["infeasible"] = False
        except ScheduleError as exc:
            entry["schedule"] = None
            entry["infeasible"] = True
            entry["reason"] = str(exc)
            log.warning("cell %s: %s", cell.key, exc)
        cells.append(entry)
    doc = {"format_version": 1, "kind": "tvdmpc-schedules", "horizon": spec.N, "zeta_mode": camp.zeta_mode,
           "margin_mode": rc.margin_mode, "tail_convention": camp.tail_convention, "cells": cells}
    out = _out_dir(args, rc)
    write_json(out / "schedules.json", doc)
    print(out / "schedules.json")
    return EXIT_OK


# -- run ----------------------------------------------------------------------

def _trajectory_rel(result, record):
    return f"trajectories/{result.cell.tag}/{result.controller}/trial_{record.trial:04d}.csv"


def cmd_run(args):
    rc = _load(args)
    out = _out_dir(args, rc)
    camp = rc.campaign

    def progress(done, total):
        log.info("jobs %d/%d", done, total)

    report = run_campaign(camp, threads=rc.threads, progress=progress)
    if rc.trajectories:
        for r in report.results:
            for t in r.trials:
                atomic_write_text(out / _trajectory_rel(r, t), trajectory_csv(t, camp.spec.state_con))
    doc = report.to_dict(trajectory_path=_trajectory_rel if rc.trajectories else None)
    doc["config"] = rc.doc
    doc["overrides"] = {k: v for k, v in rc.overrides.items() if v is not None}
    write_json(out / "report.json", doc)
    write_json(out / "timing.json", report.timing_dict())
    print(out / "report.json")
    for r in report.results:
        s = r.summary()
        pct = "n/a" if s["violation_pct"] is None else f"{s['violation_pct']:.2f}%"
        log.info("%s %-12s violations %s over %d steps, %d terminated", r.cell.key, r.controller, pct,
                 s["steps"], s["terminated_trials"])
    return EXIT_OK


# -- compare ------------------------------------------------------------------

def default_reference():
    return json.loads(resources.files("tvdmpc").joinpath("data/reference_violations.json").read_text())


def cmd_compare(args):
    report = read_json(args.report, kind=REPORT_KIND)
    reference = read_json(args.reference, kind="tvdmpc-reference-table") if args.reference \
        else default_reference()
    if "cells" not in report or "cells" not in reference:
        raise ReportError("report and reference need a 'cells' list")
    comparison = compare_report(report, reference)
    text = markdown_table(comparison)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        write_json(out / "comparison.json", {"format_version": 1, "kind": "tvdmpc-comparison", **comparison})
        atomic_write_text(out / "comparison.md", text)
    return EXIT_OK if comparison["all_pass"] else EXIT_ACCEPTANCE


# -- report -------------------------------------------------------------------

def _boundary_segments(F, g):
    """Edges of a bounded 2-D polytope, one segment per facet."""
    segs = []
    for i in range(F.shape[0]):
        n = F[i]
        if np.allclose(n, 0):
            continue
        d = np.array([-n[1], n[0]])
        x0 = n * g[i] / (n @ n)
        lo, hi = -np.inf, np.inf
        for j in range(F.shape[0]):
            if j == i:
                continue
            a = F[j] @ d
            b = g[j] - F[j] @ x0
            if abs(a) < 1e-14:
                if b < -1e-12:
                    lo, hi = 1.0, 0.0
                continue
            if a > 0:
                hi = min(hi, b / a)
            else:
                lo = max(lo, b / a)
        if lo <= hi and np.isfinite(lo) and np.isfinite(hi):
            segs.append((i, x0 + lo * d, x0 + hi * d))
    return segs


def cmd_report(args):
    report = read_json(args.report, kind=REPORT_KIND)
    base = Path(args.report).parent
    out = _out_dir(args) if args.out or os.environ.get(OUT_ENV) else base / "plot"
    cells = report.get("cells", [])
    n_x = None
    cfg = report.get("config")
    if cfg:
        n_x = len(cfg["system"]["A"])
    states_header = [f"x_{i + 1}" for i in range(n_x or 2)]
    # violation summary
    rows = [[c["epsilon"], c["alpha"], c["controller"], CONTROLLER_LABELS.get(c["controller"], c["controller"]),
             "" if c.get("violation_pct") is None else repr(float(c["violation_pct"])),
             "" if c.get("trial_violation_pct") is None else repr(float(c["trial_violation_pct"])),
             c.get("terminated_trials", 0)] for c in cells]
    atomic_write_text(out / "violations.csv", csv_text(
        ["epsilon", "alpha", "controller", "label", "violation_pct", "trial_violation_pct", "terminated_trials"],
        rows, comment="format_version=1"))
    # constraint boundary
    brows = []
    if cfg and n_x == 2:
        F, g = _state_polytope(cfg)
        for i, a, b in _boundary_segments(F, g):
            brows.append([i, 0] + [repr(float(v)) for v in a])
            brows.append([i, 1] + [repr(float(v)) for v in b])
    atomic_write_text(out / "boundary.csv", csv_text(["facet", "point"] + states_header, brows,
                                                     comment="format_version=1"))
    # per-cell overlays of one trial for every controller
    by_cell = {}
    for c in cells:
        by_cell.setdefault((c["epsilon"], c["alpha"]), []).append(c)
    overlay_header = ["controller", "label", "trial", "step"] + states_header + ["violation"]
    poly = _state_polytope(cfg) if cfg else None
    for (eps, alpha), entries in sorted(by_cell.items()):
        orows = []
        for c in entries:
            recs = [r for r in c.get("trial_records", []) if r["trial"] == args.trial]
            if not recs or not recs[0].get("trajectory"):
                continue
            states, _ = read_trajectory(base / recs[0]["trajectory"])
            label = CONTROLLER_LABELS.get(c["controller"], c["controller"])
            for k, x in enumerate(states):
                viol = "" if poly is None else int(np.any(poly[0] @ x > poly[1] + 1e-9))
                orows.append([c["controller"], label, args.trial, k] + [repr(float(v)) for v in x] + [viol])
        atomic_write_text(out / f"overlay_e{eps:g}_a{alpha:g}.csv",
                          csv_text(overlay_header, orows, comment="format_version=1"))
    if not by_cell:
        atomic_write_text(out / "overlay.csv", csv_text(overlay_header, [], comment="format_version=1"))
    print(out)
    return EXIT_OK


def _state_polytope(cfg):
    sc = cfg["state_constraints"]
    if "F" in sc:
        return np.array(sc["F"], dtype=float), np.array(sc["g"], dtype=float)
    lo, hi = np.array(sc["lower"], dtype=float), np.array(sc["upper"], dtype=float)
    n = lo.size
    return np.vstack([np.eye(n), -np.eye(n)]), np.r_[hi, -lo]


# -- entry point --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="tvdmpc", description="Distributionally robust MPC with TV ambiguity sets.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_run_flags=True):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        sp.add_argument("--zeta-mode", choices=[PAPER_LITERAL, CORRECTED], dest="zeta_mode")
        sp.add_argument("--margin-mode", choices=["cvar", "norm"], dest="margin_mode")
        if with_run_flags:
            sp.add_argument("--seed", type=int, help="master seed (non-negative)")
            sp.add_argument("--threads", type=int, help="worker processes for trials")

    common(sub.add_parser("tighten", help="offline tightening schedule for every grid cell"), False)
    common(sub.add_parser("run", help="Monte-Carlo campaign"))
    cp = sub.add_parser("compare", help="compare a report with a reference table")
    cp.add_argument("report")
    cp.add_argument("--reference", help="reference table (default: the bundled reference table)")
    cp.add_argument("--out", help="also write comparison.json and comparison.md here")
    rp = sub.add_parser("report", help="plot-ready CSV files from a report")
    rp.add_argument("report")
    rp.add_argument("--out", help="output directory (default: <report dir>/plot)")
    rp.add_argument("--trial", type=int, default=0, help="trial shown in the overlays")
    return p


COMMANDS = {"tighten": cmd_tighten, "run": cmd_run, "compare": cmd_compare, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TvdMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
