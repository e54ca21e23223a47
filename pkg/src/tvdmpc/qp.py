"""Convex QP/LP solving behind a small deterministic contract.

Problems have the form::

    minimize    0.5 x'Hx + f'x + offset
    subject to  G x <= h,   E x = e,   x[i] in {0, 1} for i in binary

Continuous problems go to Clarabel (interior point), followed by an
active-set polish on the reduced KKT system.  Every returned optimum is
re-checked by :func:`kkt_residuals`, which shares no code with the solver
path.  Binary variables are handled by :func:`solve_miqp`, a best-first
branch and bound over QP relaxations.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, DimensionError, DomainError

FEAS_TOL = 1e-6
STAT_TOL = 1e-6
PSD_FLOOR = -1e-8
SYMMETRY_TOL = 1e-10

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max-iter"


def _as_matrix(M, n, name):
    if M is None:
        return sp.csc_matrix((0, n))
    if sp.issparse(M):
        M = sp.csc_matrix(M, dtype=float)
    else:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.size == 0:
            return sp.csc_matrix((0, n))
        M = sp.csc_matrix(M)
    if M.shape[1] != n:
        raise DimensionError(f"{name} has {M.shape[1]} columns, expected {n}")
    return M


@dataclass
class QpProblem:
    """Canonical convex QP.  Matrices may be dense arrays or scipy sparse."""

    H: object
    f: np.ndarray
    G: object = None
    h: np.ndarray | None = None
    E: object = None
    e: np.ndarray | None = None
    binary: tuple = ()
    offset: float = 0.0

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        H = self.H
        if H is None or (not sp.issparse(H) and np.size(H) == 0):
            H = sp.csc_matrix((n, n))
        self.H = _as_matrix(H, n, "H")
        if self.H.shape[0] != n:
            raise DimensionError(f"H is {self.H.shape}, expected ({n}, {n})")
        self.G = _as_matrix(self.G, n, "G")
        self.E = _as_matrix(self.E, n, "E")
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).ravel()
        self.e = np.zeros(0) if self.e is None else np.asarray(self.e, dtype=float).ravel()
        if self.h.size != self.G.shape[0]:
            raise DimensionError(f"h has {self.h.size} rows, G has {self.G.shape[0]}")
        if self.e.size != self.E.shape[0]:
            raise DimensionError(f"e has {self.e.size} rows, E has {self.E.shape[0]}")
        self.binary = tuple(sorted(int(i) for i in self.binary))
        if any(i < 0 or i >= n for i in self.binary):
            raise DimensionError("binary index out of range")
        for name in ("f", "h", "e"):
            arr = getattr(self, name)
            if np.any(np.isnan(arr)):
                raise DomainError(f"{name} contains NaN")
        if not np.all(np.isfinite(self.H.data)):
            raise DomainError("H contains non-finite entries")

    @property
    def n(self):
        return self.f.size

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.H @ x) + self.f @ x + self.offset)


@dataclass
class QpSolution:
    x: np.ndarray | None
    objective: float
    status: str
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    iterations: int = 0
    polished: bool = False
    nodes: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL


def check_psd(H):
    H = sp.csc_matrix(H)
    if H.nnz == 0:
        return
    asym = abs(H - H.T)
    if asym.nnz and asym.max() > SYMMETRY_TOL * max(1.0, abs(H).max()):
        raise DomainError("H is not symmetric")
    # only the nonzero block needs an eigendecomposition
    idx = np.unique(H.nonzero()[1])
    lo = np.linalg.eigvalsh(H[idx][:, idx].toarray())[0]
    if lo < PSD_FLOOR:
        raise DomainError(f"H is not positive semidefinite (min eigenvalue {lo:.3e})")


def kkt_residuals(problem: QpProblem, x, lam=None, mu=None):
    """Relative KKT residuals of a candidate primal/dual point.

    Written independently of the solver: it only evaluates the optimality
    conditions.  Returns a dict with ``primal``, ``stationarity``,
    ``dual_sign`` and ``complementarity`` entries.
    """
    p = problem
    x = np.asarray(x, dtype=float)
    lam = np.zeros(p.G.shape[0]) if lam is None else np.asarray(lam, dtype=float)
    mu = np.zeros(p.E.shape[0]) if mu is None else np.asarray(mu, dtype=float)
    Gx = p.G @ x
    Ex = p.E @ x
    finite = np.isfinite(p.h)
    viol_ineq = np.maximum(Gx[finite] - p.h[finite], 0.0)
    viol_eq = np.abs(Ex - p.e)
    scale_p = 1.0 + max(_inf_norm(p.h[finite]), _inf_norm(p.e), _inf_norm(Gx), _inf_norm(Ex))
    primal = max(_inf_norm(viol_ineq), _inf_norm(viol_eq)) / scale_p

    Hx = p.H @ x
    Gl = p.G.T @ lam
    Em = p.E.T @ mu
    grad = Hx + p.f + Gl + Em
    scale_d = 1.0 + max(_inf_norm(Hx), _inf_norm(p.f), _inf_norm(Gl), _inf_norm(Em))
    stationarity = _inf_norm(grad) / scale_d
    dual_sign = max(0.0, -float(np.min(lam))) if lam.size else 0.0
    slack = np.where(finite, p.h - Gx, 0.0)
    comp = _inf_norm(lam * slack) / (1.0 + abs(float(x @ Hx) + float(p.f @ x)))
    return {
        "primal": primal,
        "stationarity": stationarity,
        "dual_sign": dual_sign / scale_d,
        "complementarity": comp,
    }


def _inf_norm(v):
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _certified(res, tol=FEAS_TOL):
    return (
        res["primal"] <= tol
        and res["stationarity"] <= STAT_TOL
        and res["dual_sign"] <= STAT_TOL
        and res["complementarity"] <= STAT_TOL
    )


def _clarabel_settings(max_iter):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iter
    s.tol_gap_abs = 1e-10
    s.tol_gap_rel = 1e-10
    s.tol_feas = 1e-10
    s.tol_ktratio = 1e-8
    s.max_threads = 1
    s.presolve_enable = False
    return s


_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def solve_qp(problem: QpProblem, *, max_iter=200, polish=True, check=True):
    """Solve a continuous convex QP (``problem.binary`` is ignored).

    Returns a :class:`QpSolution` whose status is ``optimal`` only when the
    independent KKT check passes at 1e-6 (relative).
    """
    p = problem
    if check:
        check_psd(p.H)
    n = p.n
    keep = np.isfinite(p.h)
    if np.any(np.isneginf(p.h)):
        return QpSolution(None, np.inf, INFEASIBLE)
    G = p.G[np.flatnonzero(keep)] if not np.all(keep) else p.G
    h = p.h[keep]
    A = sp.vstack([p.E, G], format="csc")
    b = np.concatenate([p.e, h])
    cones = []
    if p.E.shape[0]:
        cones.append(clarabel.ZeroConeT(p.E.shape[0]))
    if G.shape[0]:
        cones.append(clarabel.NonnegativeConeT(G.shape[0]))
    if A.shape[0] == 0:
        # clarabel needs at least one row
        A = sp.csc_matrix((1, n))
        b = np.ones(1)
        cones = [clarabel.NonnegativeConeT(1)]
    P = sp.triu(p.H, format="csc")
    solver = clarabel.DefaultSolver(P, p.f, A, b, cones, _clarabel_settings(max_iter))
    sol = solver.solve()
    raw = str(sol.status)
    status = _STATUS_MAP.get(raw, MAX_ITER)
    if status in (INFEASIBLE, UNBOUNDED):
        return QpSolution(None, np.inf if status == INFEASIBLE else -np.inf, status,
                          iterations=sol.iterations, info={"backend_status": raw})
    x = np.array(sol.x)
    z = np.array(sol.z)
    mu = z[: p.E.shape[0]]
    lam = np.zeros(p.G.shape[0])
    if A.shape[0] == b.size and G.shape[0]:
        lam[keep] = z[p.E.shape[0]:]
    res = kkt_residuals(p, x, lam, mu)
    polished = False
    if polish and np.all(np.isfinite(x)):
        out = _polish(p, x, lam)
        if out is not None:
            x2, lam2, mu2 = out
            res2 = kkt_residuals(p, x2, lam2, mu2)
            if _certified(res2, tol=1e-9) and p.objective(x2) <= p.objective(x) + 1e-9 * (1 + abs(p.objective(x))):
                x, lam, mu, res, polished = x2, lam2, mu2, res2, True
    if _certified(res):
        status = OPTIMAL
    elif status == OPTIMAL:
        status = MAX_ITER
    return QpSolution(
        x=x,
        objective=p.objective(x),
        status=status,
        primal_residual=res["primal"],
        dual_residual=res["stationarity"],
        lam=lam,
        mu=mu,
        iterations=sol.iterations,
        polished=polished,
        info={"backend_status": raw},
    )


def _polish(p: QpProblem, x, lam, reg=1e-10, refine=8):
    """Re-solve the equality-constrained QP on the guessed active set."""
    finite = np.isfinite(p.h)
    slack = np.where(finite, p.h - p.G @ x, np.inf)
    active = np.flatnonzero(finite & (lam > slack))
    M = sp.vstack([p.E, p.G[active]], format="csc")
    rhs_b = np.concatenate([p.e, p.h[active]])
    n, m = p.n, M.shape[0]
    K = sp.bmat([[p.H, M.T], [M, None]], format="csc")
    K_reg = (K + sp.block_diag([reg * sp.eye(n), -reg * sp.eye(m)])).tocsc()
    rhs = np.concatenate([-p.f, rhs_b])
    try:
        lu = spla.splu(K_reg)
    except RuntimeError:
        return None
    sol = np.concatenate([x, np.zeros(m)])
    for _ in range(refine):
        r = rhs - K @ sol
        if _inf_norm(r) < 1e-14 * (1 + _inf_norm(rhs)):
            break
        sol = sol + lu.solve(r)
    if not np.all(np.isfinite(sol)):
        return None
    x2 = sol[:n]
    y = sol[n:]
    mu = y[: p.E.shape[0]]
    lam2 = np.zeros(p.G.shape[0])
    lam2[active] = y[p.E.shape[0]:]
    return x2, lam2, mu


def _single_binary_rows(G, bidx):
    """For each binary column, the rows where it is the only binary and has a negative coefficient."""
    G = sp.csr_matrix(G)
    is_bin = np.zeros(G.shape[1], dtype=bool)
    is_bin[bidx] = True
    out = {}
    for i in range(G.shape[0]):
        cols = G.indices[G.indptr[i]:G.indptr[i + 1]]
        vals = G.data[G.indptr[i]:G.indptr[i + 1]]
        mask = is_bin[cols]
        if mask.sum() == 1 and vals[mask][0] < 0:
            out.setdefault(int(cols[mask][0]), []).append(i)
    return out


def _shrink_binaries(p, x, lower_rows, fixed):
    """Lower each free binary to the least value its big-M rows allow."""
    x = x.copy()
    if not lower_rows:
        return x
    G = p.G
    for j, rows in lower_rows.items():
        if j in fixed:
            continue
        coef = G[rows, j].toarray().ravel()
        rest = G[rows] @ x - coef * x[j]
        need = np.max((rest - p.h[rows]) / (-coef))
        x[j] = min(x[j], max(need, 0.0))
    return x


def _milp_feasible_point(p: QpProblem, bidx):
    """Any point of the mixed-integer feasible set (HiGHS), or ``False`` if it is empty.

    Returns ``None`` when HiGHS gives no definitive answer.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    n = p.n
    integrality = np.zeros(n)
    integrality[bidx] = 1
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[bidx], ub[bidx] = 0.0, 1.0
    cons = []
    if p.G.shape[0]:
        cons.append(LinearConstraint(p.G, -np.inf, p.h))
    if p.E.shape[0]:
        cons.append(LinearConstraint(p.E, p.e, p.e))
    res = milp(np.zeros(n), constraints=cons, integrality=integrality, bounds=Bounds(lb, ub),
               options={"time_limit": 30.0})
    if res.status == 2:
        return False
    if res.status == 0 and res.x is not None:
        return res.x
    return None


def _outer_approximation(p: QpProblem, bidx, start_points, gap, max_rounds=200):
    """Convex MIQP by Kelley cuts on an epigraph variable, each master solved by HiGHS.

    Returns ``(x, upper, lower)`` where ``x`` attains ``upper`` (without the
    offset) and ``lower`` is a valid bound; ``x`` is ``None`` when the
    mixed-integer set is empty.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    n = p.n
    H = p.H
    obj = lambda z: 0.5 * z @ (H @ z) + p.f @ z
    integrality = np.zeros(n + 1)
    integrality[bidx] = 1
    lb = np.full(n + 1, -np.inf)
    ub = np.full(n + 1, np.inf)
    lb[bidx], ub[bidx] = 0.0, 1.0
    base = []
    if p.G.shape[0]:
        base.append(LinearConstraint(sp.hstack([p.G, sp.csc_matrix((p.G.shape[0], 1))]).tocsc(), -np.inf, p.h))
    if p.E.shape[0]:
        base.append(LinearConstraint(sp.hstack([p.E, sp.csc_matrix((p.E.shape[0], 1))]).tocsc(), p.e, p.e))
    cut_rows, cut_rhs = [], []

    def add_cut(z):
        g = H @ z + p.f
        cut_rows.append(np.r_[g, -1.0])
        cut_rhs.append(g @ z - obj(z))

    best_x, best = None, np.inf
    for z in start_points:
        add_cut(z)
        if kkt_residuals(p, z)["primal"] <= FEAS_TOL and obj(z) < best:
            best_x, best = z.copy(), obj(z)
    lower = -np.inf
    c = np.r_[np.zeros(n), 1.0]
    for _ in range(max_rounds):
        cons = list(base)
        if cut_rows:
            cons.append(LinearConstraint(np.array(cut_rows), -np.inf, np.array(cut_rhs)))
        else:
            lb[-1] = -1e12
        res = milp(c, constraints=cons, integrality=integrality, bounds=Bounds(lb, ub),
                   options={"mip_rel_gap": 1e-12, "time_limit": 120.0})
        if res.status == 2:
            return None, np.inf, np.inf
        if res.status != 0 or res.x is None:
            break
        z = res.x[:n]
        z[bidx] = np.round(z[bidx])
        lower = max(lower, float(res.x[-1]))
        fz = obj(z)
        if fz < best and kkt_residuals(p, z)["primal"] <= FEAS_TOL:
            best_x, best = z.copy(), fz
        if best - lower <= gap:
            break
        add_cut(z)
    return best_x, best, lower


def solve_miqp(problem: QpProblem, *, cap=64, gap=1e-6, int_tol=1e-6, max_nodes=20000, heuristic=None,
               root_check=True, switch_nodes=200):
    """Best-first branch and bound over the binary variables.

    Each relaxation is post-processed by lowering free binaries to the
    least value their big-M rows permit and then trying the rounded-up
    point as an incumbent.  An optional ``heuristic(x, fix)`` may return a
    full assignment ``{binary index: 0/1}`` built from a relaxed point; the
    QP with those binaries pinned is then tried as a further incumbent.
    Heuristics only affect pruning, never the returned optimum beyond the
    gap.  With ``root_check`` a HiGHS feasibility MILP runs first: it
    certifies infeasible instances, which weak big-M relaxations cannot
    do quickly, and seeds the first incumbent otherwise.  When the search
    has not closed the gap after ``switch_nodes`` nodes, the remaining
    proof is handed to an outer-approximation loop whose masters are MILPs
    (HiGHS); the returned status is optimal only if that loop certifies
    the gap.  Branching picks the lowest-index fractional
    binary, 0-branch first; ties in the bound are broken by creation
    order, so the search is deterministic.
    """
    p = problem
    nb = len(p.binary)
    if nb == 0:
        return solve_qp(p)
    if nb > cap:
        raise CapacityError(f"{nb} binary variables exceed the cap of {cap}")
    check_psd(p.H)
    bidx = np.array(p.binary)
    n = p.n
    # 0 <= y <= 1 rows for the relaxation
    rows = sp.csc_matrix((np.r_[np.ones(nb), -np.ones(nb)],
                          (np.arange(2 * nb), np.r_[bidx, bidx])), shape=(2 * nb, n))
    G0 = sp.vstack([p.G, rows], format="csc")
    h0 = np.concatenate([p.h, np.ones(nb), np.zeros(nb)])
    lower_rows = _single_binary_rows(p.G, bidx)
    seed = _milp_feasible_point(p, bidx) if root_check else None
    if seed is False:
        return QpSolution(None, np.inf, INFEASIBLE, nodes=0, info={"certified_by": "milp-feasibility"})

    def fixed_problem(fix):
        if fix:
            idx = np.array(sorted(fix))
            Ef = sp.csc_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))
            E = sp.vstack([p.E, Ef], format="csc")
            e = np.concatenate([p.e, [fix[i] for i in idx]])
        else:
            E, e = p.E, p.e
        return QpProblem(p.H, p.f, G0, h0, E, e, offset=p.offset)

    def feasible(x):
        return kkt_residuals(p, x)["primal"] <= FEAS_TOL and np.all(np.isfinite(x))

    best_x, best_obj = None, np.inf
    counter = 0
    nodes = 0
    heap = []

    def visit(fix):
        nonlocal best_x, best_obj, counter, nodes
        nodes += 1
        sol = solve_qp(fixed_problem(fix), check=False, polish=False)
        if sol.status == UNBOUNDED:
            return UNBOUNDED
        if sol.status != OPTIMAL:
            return None
        if sol.objective >= best_obj - gap:
            return None
        x = _shrink_binaries(p, sol.x, lower_rows, fix)
        yb = x[bidx]
        frac = np.flatnonzero(np.abs(yb - np.round(yb)) > int_tol)
        rounded = x.copy()
        rounded[bidx] = np.where(yb > int_tol, 1.0, 0.0)
        if feasible(rounded):
            obj = p.objective(rounded)
            if obj < best_obj:
                best_x, best_obj = rounded, obj
            if obj <= sol.objective + gap:
                return None
        if frac.size == 0:
            return None
        if heuristic is not None:
            guess = heuristic(x, fix)
            if guess is not None and all(guess.get(i, v) == v for i, v in fix.items()):
                trial = solve_qp(fixed_problem(guess), check=False, polish=False)
                if trial.status == OPTIMAL:
                    cand = trial.x.copy()
                    cand[bidx] = [guess[int(i)] for i in bidx]
                    if feasible(cand):
                        obj = p.objective(cand)
                        if obj < best_obj:
                            best_x, best_obj = cand, obj
                        if obj <= sol.objective + gap:
                            return None
        counter += 1
        heapq.heappush(heap, (sol.objective, counter, fix, int(bidx[frac[0]])))
        return None

    if seed is not None:
        pinned = {int(i): float(round(seed[i])) for i in bidx}
        trial = solve_qp(fixed_problem(pinned), check=False, polish=False)
        if trial.status == OPTIMAL:
            cand = trial.x.copy()
            cand[bidx] = [pinned[int(i)] for i in bidx]
            if feasible(cand):
                best_x, best_obj = cand, p.objective(cand)
    if visit({}) == UNBOUNDED:
        return QpSolution(None, -np.inf, UNBOUNDED, nodes=nodes)
    hit_cap = False
    handoff = False
    while heap:
        bound, _, fix, j = heapq.heappop(heap)
        if bound >= best_obj - gap:
            break
        if switch_nodes is not None and nodes >= switch_nodes:
            handoff = True
            break
        if nodes >= max_nodes:
            hit_cap = True
            break
        for v in (0.0, 1.0):
            child = dict(fix)
            child[j] = v
            visit(child)
    certified_by = "branch-and-bound"
    if handoff:
        starts = [best_x] if best_x is not None else []
        oa_x, oa_obj, oa_lower = _outer_approximation(p, bidx, starts, gap)
        certified_by = "outer-approximation"
        if oa_x is None and oa_lower == np.inf:
            return QpSolution(None, np.inf, INFEASIBLE, nodes=nodes, info={"certified_by": certified_by})
        if oa_x is not None and p.objective(oa_x) < best_obj:
            best_x, best_obj = oa_x, p.objective(oa_x)
        hit_cap = not (best_x is not None and best_obj - p.offset - oa_lower <= gap)
    if best_x is None:
        return QpSolution(None, np.inf, MAX_ITER if hit_cap else INFEASIBLE, nodes=nodes)
    # certify the continuous part with the binaries pinned
    final = solve_qp(fixed_problem({int(i): float(best_x[i]) for i in bidx}), check=False)
    if final.status == OPTIMAL and final.objective <= best_obj + gap:
        final.x[bidx] = best_x[bidx]
        out = final
    else:
        res = kkt_residuals(p, best_x)
        out = QpSolution(best_x, best_obj, OPTIMAL, primal_residual=res["primal"])
    out.nodes = nodes
    out.info = dict(out.info or {}, certified_by=certified_by)
    if hit_cap:
        out.status = MAX_ITER
    return out


def solve(problem: QpProblem, **kw):
    """Dispatch to :func:`solve_miqp` when binaries are present."""
    if problem.binary:
        return solve_miqp(problem, **kw)
    return solve_qp(problem, **kw)


def dump_problem(problem: QpProblem, path):
    """Write a QpProblem as JSON for external cross-checking."""
    p = problem
    doc = {
        "format_version": 1,
        "n": p.n,
        "H": p.H.toarray().tolist(),
        "f": p.f.tolist(),
        "G": p.G.toarray().tolist(),
        "h": [float(v) for v in p.h],
        "E": p.E.toarray().tolist(),
        "e": p.e.tolist(),
        "binary": list(p.binary),
        "offset": p.offset,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_problem(path):
    with open(path) as fh:
        doc = json.load(fh)
    return QpProblem(np.array(doc["H"]).reshape(doc["n"], doc["n"]), doc["f"],
                     np.array(doc["G"]).reshape(-1, doc["n"]), doc["h"],
                     np.array(doc["E"]).reshape(-1, doc["n"]), doc["e"],
                     binary=doc["binary"], offset=doc["offset"])
