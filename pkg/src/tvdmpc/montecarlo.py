"""Monte-Carlo campaigns over an (epsilon, alpha) grid.

Every trial draws its initial state, its (possibly perturbed) disturbance
pmf and its whole disturbance sequence from a seed that depends only on the
master seed, the cell values and the trial index.  All controllers in a
cell therefore see identical worlds, and adding or removing a controller
does not change any realization.

Violation accounting uses the realized states ``x_1 .. x_T``.  A trial
whose controller reports an infeasible (or unsolved) step stops there; the
states realized so far still count, the remaining steps do not.
"""
from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import (CVAR_MPC, DRMPC, SMPC, TIGHT_DRMPC, ControllerKind, ControlProblemSpec,
                          MpcController)
from .errors import DomainError, ReportError, ScheduleError, TvdMpcError
from .risk import DiscreteDistribution, sample_in_tvd_ball, worst_case_distribution
from .tightening import CORRECTED, TAIL_BUDGET, build_schedule

PERTURB_NONE = "none"
PERTURB_RANDOM = "random-in-ball"
PERTURB_ADVERSARIAL = "adversarial"
PERTURBATIONS = (PERTURB_NONE, PERTURB_RANDOM, PERTURB_ADVERSARIAL)
REPORT_FORMAT_VERSION = 1
VIOLATION_TOL = 1e-9
ORDER_SLACK = 2.0

CONTROLLER_LABELS = {
    SMPC: "SMPC",
    CVAR_MPC: "CVaR-MPC",
    DRMPC: "DRMPC",
    TIGHT_DRMPC: "tight DRMPC",
}


@dataclass(frozen=True)
class Cell:
    """One grid point: the budget and the radius of the world perturbation."""

    epsilon: float
    alpha: float

    @property
    def key(self):
        return f"eps={self.epsilon:g},alpha={self.alpha:g}"

    @property
    def tag(self):
        return f"e{self.epsilon:g}_a{self.alpha:g}"


@dataclass(eq=False)
class CampaignConfig:
    """Everything a campaign needs.  ``spec.epsilon``/``spec.alpha`` are overridden per cell.

    ``nominal_alpha`` is the controller radius used in cells whose world
    perturbation radius is zero; otherwise controllers use the cell's alpha.
    """

    spec: ControlProblemSpec
    controllers: tuple
    cells: tuple
    trials: int = 100
    steps: int = 35
    x0_low: np.ndarray = None
    x0_high: np.ndarray = None
    seed: int = 0
    perturbation: str = PERTURB_RANDOM
    nominal_alpha: float = 0.1
    zeta_mode: str = CORRECTED
    tail_convention: str = TAIL_BUDGET
    adversarial_cost: np.ndarray | None = None

    def __post_init__(self):
        self.controllers = tuple(ControllerKind(c) if isinstance(c, str) else c for c in self.controllers)
        self.cells = tuple(c if isinstance(c, Cell) else Cell(float(c[0]), float(c[1])) for c in self.cells)
        n = self.spec.sys.n_x
        self.x0_low = np.asarray(self.x0_low if self.x0_low is not None else np.zeros(n), dtype=float)
        self.x0_high = np.asarray(self.x0_high if self.x0_high is not None else np.zeros(n), dtype=float)
        if self.trials < 1 or self.steps < 1:
            raise DomainError("trials and steps must be >= 1")
        if self.x0_low.shape != (n,) or self.x0_high.shape != (n,):
            raise DomainError("x0 box dimension does not match the system")
        if np.any(self.x0_high < self.x0_low):
            raise DomainError("x0 box has upper < lower")
        if self.perturbation not in PERTURBATIONS:
            raise DomainError(f"unknown perturbation mode {self.perturbation!r}")
        if not self.cells or not self.controllers:
            raise DomainError("campaign needs at least one cell and one controller")
        for c in self.cells:
            if not (0.0 < c.epsilon < 1.0) or not (0.0 <= c.alpha < 1.0):
                raise DomainError(f"cell {c.key} is out of range")

    def controller_alpha(self, cell: Cell):
        return cell.alpha if cell.alpha > 0.0 else self.nominal_alpha

    def cell_spec(self, cell: Cell) -> ControlProblemSpec:
        return replace(self.spec, epsilon=cell.epsilon, alpha=self.controller_alpha(cell))


@dataclass
class TrialWorld:
    """The random part of a trial, shared by every controller in the cell."""

    seed_key: tuple
    x0: np.ndarray
    pmf: DiscreteDistribution
    atom_index: np.ndarray


@dataclass
class TrialRecord:
    controller: str
    cell: Cell
    trial: int
    seed_key: tuple
    x0: np.ndarray
    pmf: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    violations: np.ndarray
    statuses: list
    solve_times: list
    terminated: bool = False
    terminated_status: str | None = None

    @property
    def n_steps(self):
        return int(self.violations.size)

    @property
    def n_violations(self):
        return int(self.violations.sum())


def _scaled(v):
    return int(round(v * 1_000_000))


def trial_seed_key(master_seed, cell: Cell, trial: int):
    """``(master, 1e6*epsilon, 1e6*alpha, trial)``; feeds :class:`numpy.random.SeedSequence`."""
    return (int(master_seed), _scaled(cell.epsilon), _scaled(cell.alpha), int(trial))


def default_adversarial_cost(spec: ControlProblemSpec):
    """Per atom, the largest single-step push toward any state-constraint face."""
    images = spec.state_con.F @ spec.sys.D @ spec.disturbance.atom_vectors().T
    return images.max(axis=0)


def draw_world(config: CampaignConfig, cell: Cell, trial: int) -> TrialWorld:
    key = trial_seed_key(config.seed, cell, trial)
    ss = np.random.SeedSequence(entropy=key[0], spawn_key=key[1:])
    x_seq, pmf_seq, dist_seq = ss.spawn(3)
    rng_x = np.random.default_rng(x_seq)
    x0 = config.x0_low + (config.x0_high - config.x0_low) * rng_x.random(config.x0_low.size)
    p = config.spec.disturbance
    if config.perturbation == PERTURB_NONE or cell.alpha == 0.0:
        q = p
    elif config.perturbation == PERTURB_RANDOM:
        q = sample_in_tvd_ball(p, cell.alpha, np.random.default_rng(pmf_seq))
    else:
        cost = config.adversarial_cost
        if cost is None:
            cost = default_adversarial_cost(config.spec)
        q = worst_case_distribution(cost, p, cell.alpha)
    rng_d = np.random.default_rng(dist_seq)
    idx = rng_d.choice(q.J, size=config.steps, p=q.probs)
    return TrialWorld(key, x0, q, idx)


def run_trial(config: CampaignConfig, cell: Cell, controller, trial: int, world: TrialWorld | None = None):
    """Closed-loop simulation of one controller in one world."""
    if not isinstance(controller, MpcController):
        kind = controller if isinstance(controller, ControllerKind) else ControllerKind(controller)
        controller = make_controller(config, cell, kind)
    if world is None:
        world = draw_world(config, cell, trial)
    spec = config.spec
    sys, con = spec.sys, spec.state_con
    atoms = spec.disturbance.atom_vectors()
    x = world.x0.copy()
    states, inputs, deltas, viol, statuses, times = [x.copy()], [], [], [], [], []
    terminated, term_status = False, None
    for t in range(config.steps):
        try:
            res = controller.step(x)
        except TvdMpcError as exc:
            statuses.append(f"error: {type(exc).__name__}")
            times.append(0.0)
            terminated, term_status = True, statuses[-1]
            break
        statuses.append(res.status)
        times.append(res.solve_time)
        if res.u0 is None:
            terminated, term_status = True, res.status
            break
        delta = atoms[world.atom_index[t]]
        x = sys.step(x, res.u0, delta)
        inputs.append(res.u0.copy())
        deltas.append(delta.copy())
        states.append(x.copy())
        viol.append(not con.contains(x, tol=VIOLATION_TOL))
    return TrialRecord(
        controller=controller.kind.tag, cell=cell, trial=trial, seed_key=world.seed_key,
        x0=world.x0.copy(), pmf=np.array(world.pmf.probs), states=np.array(states),
        inputs=np.array(inputs).reshape(-1, sys.n_u), disturbances=np.array(deltas).reshape(-1, sys.n_d),
        violations=np.array(viol, dtype=bool), statuses=statuses, solve_times=times,
        terminated=terminated, terminated_status=term_status)


def make_controller(config: CampaignConfig, cell: Cell, kind: ControllerKind) -> MpcController:
    """Controller for one cell; raises :class:`ScheduleError` when the tightening is infeasible."""
    spec = config.cell_spec(cell)
    kind = replace(kind, zeta_mode=config.zeta_mode, tail_convention=config.tail_convention)
    schedule = None
    if kind.tag in (DRMPC, TIGHT_DRMPC):
        margin_mode = "norm" if kind.tag == TIGHT_DRMPC else kind.margin_mode
        schedule = build_schedule(spec.sys, spec.state_con, spec.disturbance, spec.epsilon, spec.alpha,
                                  spec.N, zeta_mode=kind.zeta_mode, margin_mode=margin_mode,
                                  tail_convention=kind.tail_convention)
    return MpcController(kind, spec, schedule)


# -- campaign ----------------------------------------------------------------

@dataclass
class CellResult:
    cell: Cell
    controller: str
    trials: list = field(default_factory=list)
    error: str | None = None

    def summary(self):
        if self.error is not None:
            return {"status": "not-run", "reason": self.error, "violation_pct": None,
                    "trial_violation_pct": None, "trials": 0, "steps": 0, "violating_steps": 0,
                    "terminated_trials": 0, "terminations": {}}
        steps = sum(t.n_steps for t in self.trials)
        bad = sum(t.n_violations for t in self.trials)
        any_bad = sum(1 for t in self.trials if t.n_violations > 0)
        terms = {}
        for t in self.trials:
            if t.terminated:
                terms[t.terminated_status] = terms.get(t.terminated_status, 0) + 1
        return {
            "status": "ok",
            "violation_pct": 100.0 * bad / steps if steps else 0.0,
            "trial_violation_pct": 100.0 * any_bad / len(self.trials),
            "trials": len(self.trials),
            "steps": steps,
            "violating_steps": bad,
            "terminated_trials": sum(terms.values()),
            "terminations": dict(sorted(terms.items())),
        }

    def solve_times(self):
        return [s for t in self.trials for s in t.solve_times]


@dataclass
class SimulationReport:
    config: CampaignConfig
    results: list

    def result(self, cell, controller):
        cell = cell if isinstance(cell, Cell) else Cell(*cell)
        for r in self.results:
            if r.cell == cell and r.controller == controller:
                return r
        raise ReportError(f"no result for {cell.key} / {controller}")

    def violation_pct(self, cell, controller):
        return self.result(cell, controller).summary()["violation_pct"]

    def mean_solve_time(self, controller):
        times = [s for r in self.results if r.controller == controller for s in r.solve_times()]
        return statistics.fmean(times) if times else float("nan")

    def to_dict(self, trajectory_path=None):
        """Deterministic part of the report (no wall-clock data)."""
        cfg = self.config
        cells = []
        for r in self.results:
            entry = {"epsilon": r.cell.epsilon, "alpha": r.cell.alpha,
                     "controller_alpha": cfg.controller_alpha(r.cell), "controller": r.controller}
            entry.update(r.summary())
            entry["trial_records"] = [{
                "trial": t.trial,
                "seed_key": list(t.seed_key),
                "x0": t.x0.tolist(),
                "pmf": t.pmf.tolist(),
                "steps": t.n_steps,
                "violations": t.n_violations,
                "terminated": t.terminated,
                "terminated_status": t.terminated_status,
                "trajectory": trajectory_path(r, t) if trajectory_path else None,
            } for t in r.trials]
            cells.append(entry)
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "tvdmpc-simulation-report",
            "seed": cfg.seed,
            "trials": cfg.trials,
            "steps": cfg.steps,
            "horizon": cfg.spec.N,
            "perturbation": cfg.perturbation,
            "nominal_alpha": cfg.nominal_alpha,
            "zeta_mode": cfg.zeta_mode,
            "tail_convention": cfg.tail_convention,
            "violation_metric": "pooled (trial, step) pairs with x outside X; trial_violation_pct is per trial",
            "cells": cells,
        }

    def timing_dict(self):
        out = {"format_version": REPORT_FORMAT_VERSION, "kind": "tvdmpc-timing", "controllers": {}, "cells": []}
        for tag in sorted({r.controller for r in self.results}):
            times = [s for r in self.results if r.controller == tag for s in r.solve_times()]
            out["controllers"][tag] = _time_stats(times)
        for r in self.results:
            out["cells"].append({"epsilon": r.cell.epsilon, "alpha": r.cell.alpha, "controller": r.controller,
                                 **_time_stats(r.solve_times())})
        return out


def _time_stats(times):
    if not times:
        return {"solves": 0, "mean_s": None, "median_s": None}
    return {"solves": len(times), "mean_s": statistics.fmean(times), "median_s": statistics.median(times)}


_WORKER_CONFIG = None
_WORKER_CACHE = {}


def _init_worker(config):
    global _WORKER_CONFIG
    _WORKER_CONFIG = config
    _WORKER_CACHE.clear()


def _run_job(job):
    """Run the trials of one (cell, controller) pair; returns records or an error string."""
    cell_i, ctrl_i, trials = job
    cfg = _WORKER_CONFIG
    cell, kind = cfg.cells[cell_i], cfg.controllers[ctrl_i]
    key = (cell_i, ctrl_i)
    if key not in _WORKER_CACHE:
        try:
            _WORKER_CACHE[key] = make_controller(cfg, cell, kind)
        except ScheduleError as exc:
            _WORKER_CACHE[key] = exc
    ctrl = _WORKER_CACHE[key]
    if isinstance(ctrl, TvdMpcError):
        return job, str(ctrl)
    return job, [run_trial(cfg, cell, ctrl, i) for i in trials]


def run_campaign(config: CampaignConfig, threads=1, chunk=10, progress=None) -> SimulationReport:
    """All (cell, controller, trial) combinations; the result does not depend on ``threads``."""
    jobs = []
    for ci in range(len(config.cells)):
        for ki in range(len(config.controllers)):
            for start in range(0, config.trials, chunk):
                jobs.append((ci, ki, tuple(range(start, min(start + chunk, config.trials)))))
    outputs = {}
    if threads <= 1:
        _init_worker(config)
        for job in jobs:
            outputs[job[:2] + (job[2][0],)] = _run_job(job)[1]
            if progress:
                progress(len(outputs), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(config,)) as ex:
            for job, out in ex.map(_run_job, jobs):
                outputs[job[:2] + (job[2][0],)] = out
                if progress:
                    progress(len(outputs), len(jobs))
    results = []
    for ci, cell in enumerate(config.cells):
        for ki, kind in enumerate(config.controllers):
            res = CellResult(cell, kind.tag)
            for start in range(0, config.trials, chunk):
                out = outputs[(ci, ki, start)]
                if isinstance(out, str):
                    res.error = out
                    res.trials = []
                    break
                res.trials.extend(out)
            results.append(res)
    return SimulationReport(config, results)


# -- comparison against a reference table -------------------------------------

def _cell_value(doc_cells, eps, alpha, controller):
    for c in doc_cells:
        if abs(c["epsilon"] - eps) < 1e-12 and abs(c["alpha"] - alpha) < 1e-12 and c["controller"] == controller:
            return c.get("violation_pct")
    raise ReportError(f"cell eps={eps:g}, alpha={alpha:g} has no {controller} entry")


def compare_report(report, reference, slack=ORDER_SLACK, zero_band=2.0, smpc_band=8.0):
    """Per-cell deltas to the reference plus the ordinal/banded acceptance checks.

    ``report`` is a :class:`SimulationReport` or its dict form; ``reference``
    is a dict with ``cells`` entries ``{epsilon, alpha, controller, violation_pct}``.
    """
    doc = report.to_dict() if isinstance(report, SimulationReport) else report
    cells = doc["cells"]
    rows = []
    for ref in reference["cells"]:
        got = _cell_value(cells, ref["epsilon"], ref["alpha"], ref["controller"])
        delta = None if got is None else got - ref["violation_pct"]
        rows.append({"epsilon": ref["epsilon"], "alpha": ref["alpha"], "controller": ref["controller"],
                     "reference": ref["violation_pct"], "measured": got, "delta": delta})
    checks = []

    def check(name, ok, detail):
        checks.append({"name": name, "pass": bool(ok), "detail": detail})

    grid = sorted({(r["epsilon"], r["alpha"]) for r in reference["cells"]})
    for eps, alpha in grid:
        if alpha <= 0.0:
            continue
        try:
            d = _cell_value(cells, eps, alpha, DRMPC)
            c = _cell_value(cells, eps, alpha, CVAR_MPC)
            s = _cell_value(cells, eps, alpha, SMPC)
        except ReportError as exc:
            check(f"order eps={eps:g} alpha={alpha:g}", False, str(exc))
            continue
        if None in (d, c, s):
            check(f"order eps={eps:g} alpha={alpha:g}", False, "a controller was not run in this cell")
            continue
        check(f"order eps={eps:g} alpha={alpha:g}", d <= c and c <= s + slack,
              f"DRMPC {d:.2f} <= CVaR-MPC {c:.2f} <= SMPC {s:.2f} + {slack:g}")
    for eps, alpha in ((0.2, 0.15), (0.5, 0.5)):
        if (eps, alpha) not in grid:
            continue
        for tag in (DRMPC, TIGHT_DRMPC):
            try:
                v = _cell_value(cells, eps, alpha, tag)
            except ReportError as exc:
                check(f"zero {tag} eps={eps:g} alpha={alpha:g}", False, str(exc))
                continue
            check(f"zero {tag} eps={eps:g} alpha={alpha:g}", v is not None and v <= zero_band,
                  f"{v if v is None else round(v, 3)} <= {zero_band:g}")
    if (0.9, 0.8) in grid:
        ref = next(r["violation_pct"] for r in reference["cells"]
                   if (r["epsilon"], r["alpha"]) == (0.9, 0.8) and r["controller"] == SMPC)
        try:
            v = _cell_value(cells, 0.9, 0.8, SMPC)
        except ReportError as exc:
            check("smpc band eps=0.9 alpha=0.8", False, str(exc))
        else:
            check("smpc band eps=0.9 alpha=0.8", v is not None and abs(v - ref) <= smpc_band,
                  f"{v if v is None else round(v, 3)} within {ref:g} +/- {smpc_band:g}")
    return {"rows": rows, "checks": checks, "all_pass": all(c["pass"] for c in checks)}


def markdown_table(comparison):
    """Table-1-style layout: one row per controller, one column per cell."""
    rows = comparison["rows"]
    grid = sorted({(r["epsilon"], r["alpha"]) for r in rows})
    order = [t for t in (SMPC, CVAR_MPC, DRMPC, TIGHT_DRMPC) if any(r["controller"] == t for r in rows)]
    head = "| controller | " + " | ".join(f"eps={e:g} a={a:g}" for e, a in grid) + " |"
    sep = "|---" * (len(grid) + 1) + "|"
    lines = [head, sep]
    for tag in order:
        cells = []
        for e, a in grid:
            r = next((r for r in rows if r["controller"] == tag and (r["epsilon"], r["alpha"]) == (e, a)), None)
            if r is None:
                cells.append("")
            elif r["measured"] is None:
                cells.append(f"n/a (ref {r['reference']:g})")
            else:
                cells.append(f"{r['measured']:.1f} (ref {r['reference']:g})")
        lines.append(f"| {CONTROLLER_LABELS.get(tag, tag)} | " + " | ".join(cells) + " |")
    lines.append("")
    for c in comparison["checks"]:
        lines.append(f"- [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: {c['detail']}")
    return "\n".join(lines) + "\n"
