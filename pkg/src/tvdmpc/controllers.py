"""Receding-horizon controllers: DRMPC, tight DRMPC, scenario SMPC and CVaR-MPC.

All four optimize an open-loop input sequence ``u_0 .. u_{N-1}`` with stage
cost ``sum_{k=1..N} x_k' Q x_k + u_{k-1}' R u_{k-1}``.  The nominal
dynamics are eliminated by batch substitution, so the only decision
variables are the stacked inputs plus controller-specific auxiliaries.

The realized total cost under scenario ``j`` splits as
``nominal(u) + a_j(x_t) + b_j' u``, which is what makes the risk terms
linear in ``u`` and the programs quadratic.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import LinearSystemModel, enumerate_scenarios, prediction_matrices, scenario_offsets
from .errors import DomainError
from .qp import OPTIMAL, QpProblem, solve_miqp, solve_qp
from .risk import DiscreteDistribution, tvd_risk, var_tail
from .tightening import (CORRECTED, TAIL_BUDGET, PolytopeConstraint, TighteningSchedule,
                         build_schedule, tail_mass)

DRMPC = "drmpc"
TIGHT_DRMPC = "tight_drmpc"
SMPC = "smpc"
CVAR_MPC = "cvar_mpc"
NOMINAL = "nominal"
KINDS = (DRMPC, TIGHT_DRMPC, SMPC, CVAR_MPC)


@dataclass(eq=False)
class ControlProblemSpec:
    sys: LinearSystemModel
    state_con: PolytopeConstraint
    input_con: PolytopeConstraint
    Q: np.ndarray
    R: np.ndarray
    N: int
    epsilon: float
    alpha: float
    disturbance: DiscreteDistribution

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = self.sys.n_x, self.sys.n_u
        if self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise DomainError("Q/R shapes do not match the system")
        for name, M in (("Q", self.Q), ("R", self.R)):
            if np.linalg.eigvalsh(0.5 * (M + M.T))[0] < -1e-10:
                raise DomainError(f"{name} must be positive semidefinite")
        if self.N < 1:
            raise DomainError("horizon must be >= 1")
        if not (0.0 < self.epsilon < 1.0):
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 <= self.alpha < 1.0):
            raise DomainError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.state_con.dim != n or self.input_con.dim != m:
            raise DomainError("constraint dimensions do not match the system")
        if self.disturbance.n_d != self.sys.n_d:
            raise DomainError("disturbance dimension does not match D")


@dataclass(frozen=True)
class ControllerKind:
    tag: str
    zeta_mode: str = CORRECTED
    tail_convention: str = TAIL_BUDGET
    big_m: float | None = None
    miqp_cap: int = 64
    presolve: bool = True
    tight_big_m: bool = True
    cvar_form: str = "epigraph"
    margin_mode: str = "cvar"

    def __post_init__(self):
        if self.tag not in KINDS + (NOMINAL,):
            raise DomainError(f"unknown controller {self.tag!r}")
        if self.cvar_form not in ("epigraph", "offline"):
            raise DomainError(f"unknown CVaR constraint form {self.cvar_form!r}")
        if self.margin_mode not in ("cvar", "norm"):
            raise DomainError(f"unknown margin mode {self.margin_mode!r}")


@dataclass
class MpcStepResult:
    u0: np.ndarray | None
    u_seq: np.ndarray | None
    objective: float
    status: str
    solve_time: float
    aux: dict = field(default_factory=dict)


class _Prediction:
    """Problem data that does not depend on the current state."""

    def __init__(self, spec: ControlProblemSpec):
        self.spec = spec
        sys, N = spec.sys, spec.N
        n, m = sys.n_x, sys.n_u
        self.n, self.m, self.N = n, m, N
        self.nu = N * m
        self.Phi, self.Gamma, Delta = prediction_matrices(sys, N)
        Qbar = np.kron(np.eye(N), spec.Q)
        Rbar = np.kron(np.eye(N), spec.R)
        self.Qbar = Qbar
        H = 2.0 * (self.Gamma.T @ Qbar @ self.Gamma + Rbar)
        self.H_u = 0.5 * (H + H.T)
        self.F_u = 2.0 * self.Gamma.T @ Qbar @ self.Phi
        self.C_x = self.Phi.T @ Qbar @ self.Phi

        # horizon scenarios for the cost
        cost_sc = enumerate_scenarios(spec.disturbance, N)
        self.p_cost = cost_sc.joint_probs
        W = cost_sc.stacked() @ Delta.T
        WQ = W @ Qbar
        self.cost_b = 2.0 * WQ @ self.Gamma
        self.cost_a0 = np.einsum("ij,ij->i", WQ, W)
        self.cost_a1 = 2.0 * WQ @ self.Phi

        # per-step scenarios for the state constraints
        F = spec.state_con.F
        self.step_probs = []
        self.step_images = []
        for k in range(1, N + 1):
            sc = enumerate_scenarios(spec.disturbance, k)
            self.step_probs.append(sc.joint_probs)
            self.step_images.append(F @ scenario_offsets(sys, sc).T)
        self.FG = [F @ self.Gamma[(k - 1) * n:k * n] for k in range(1, N + 1)]
        self.FP = [F @ self.Phi[(k - 1) * n:k * n] for k in range(1, N + 1)]

        Fu, gu = spec.input_con.F, spec.input_con.g
        self.G_in = np.kron(np.eye(N), Fu)
        self.h_in = np.tile(gu, N)

    def nominal_cost(self, x):
        return float(x @ self.C_x @ x)

    def cost_a(self, x):
        return self.cost_a0 + self.cost_a1 @ x

    def input_rows(self, n_total):
        G = sp.hstack([sp.csr_matrix(self.G_in), sp.csr_matrix((self.G_in.shape[0], n_total - self.nu))])
        return G, self.h_in


def _state_rows_offline(pred: _Prediction, margins, n_total):
    """``F xt_k <= g - margin_k`` for k=1..N, as rows over the stacked inputs."""
    g = pred.spec.state_con.g
    G = np.vstack(pred.FG)
    G = sp.hstack([sp.csr_matrix(G), sp.csr_matrix((G.shape[0], n_total - pred.nu))])
    h0 = np.concatenate([g - margins[k] for k in range(pred.N)])
    Hx = np.vstack(pred.FP)
    return G, h0, Hx


def _state_rows_epigraph(pred: _Prediction, tails, offset):
    """Row-wise CVaR state constraints in epigraph form.

    For each step k and row i: ``F_i xt_k + eta + (1/t_k) sum_j p_j sigma_j <= g_i``
    with ``sigma_j >= F_i D_k dbar_j - eta`` and ``sigma >= 0``.  Returns
    sparse blocks over ``[u | aux]`` where the auxiliaries start at column
    ``offset``, plus the number of auxiliary variables.
    """
    r = pred.spec.state_con.r
    g = pred.spec.state_con.g
    rows, cols, vals = [], [], []
    h0, Hx_blocks = [], []
    row = 0
    col = offset
    for k in range(pred.N):
        p = pred.step_probs[k]
        S = p.size
        img = pred.step_images[k]
        t = tails[k]
        for i in range(r):
            eta = col
            sig = col + 1 + np.arange(S)
            col += 1 + S
            # main row
            rows += [row] * pred.nu
            cols += list(range(pred.nu))
            vals += list(pred.FG[k][i])
            rows += [row] * (S + 1)
            cols += [eta] + list(sig)
            vals += [1.0] + list(p / t)
            h0.append(g[i])
            Hx_blocks.append(pred.FP[k][i])
            row += 1
            # sigma_j + eta >= image_j
            rr = row + np.arange(S)
            rows += list(rr) + list(rr)
            cols += [eta] * S + list(sig)
            vals += [-1.0] * S + [-1.0] * S
            h0.extend(-img[i])
            Hx_blocks.extend(np.zeros((S, pred.n)))
            row += S
            # sigma >= 0
            rr = row + np.arange(S)
            rows += list(rr)
            cols += list(sig)
            vals += [-1.0] * S
            h0.extend(np.zeros(S))
            Hx_blocks.extend(np.zeros((S, pred.n)))
            row += S
    n_aux = col - offset
    return (rows, cols, vals, row), np.array(h0), np.array(Hx_blocks), n_aux


class MpcController:
    """One controller with its state-independent data precomputed.

    ``build(x_t)`` returns the :class:`QpProblem` for the current state and
    ``step(x_t)`` solves it.  Variables are ordered ``[u (N*n_u) | aux]``.
    """

    def __init__(self, kind: ControllerKind, spec: ControlProblemSpec, schedule: TighteningSchedule | None = None):
        if isinstance(kind, str):
            kind = ControllerKind(kind)
        self.kind = kind
        self.spec = spec
        self.pred = _Prediction(spec)
        if kind.tag in (DRMPC, TIGHT_DRMPC) and schedule is None:
            schedule = build_schedule(spec.sys, spec.state_con, spec.disturbance, spec.epsilon,
                                      spec.alpha, spec.N, zeta_mode=kind.zeta_mode,
                                      margin_mode="norm" if kind.tag == TIGHT_DRMPC else kind.margin_mode,
                                      tail_convention=kind.tail_convention)
        if schedule is not None and schedule.N != spec.N:
            raise DomainError(f"schedule horizon {schedule.N} != controller horizon {spec.N}")
        self.schedule = schedule
        self._build_static()

    # -- static structure -------------------------------------------------
    def _build_static(self):
        tag = self.kind.tag
        pred = self.pred
        if tag == SMPC:
            self._u_lo, self._u_hi = self.spec.input_con.bounds()
            return
        S = pred.p_cost.size
        nu = pred.nu
        blocks = []
        if tag in (DRMPC, TIGHT_DRMPC):
            # [u | m | z | s]
            self.i_m, self.i_z = nu, nu + 1
            self.i_s = nu + 2
            n_cost = 2 + S
        elif tag == CVAR_MPC:
            # [u | z | s]
            self.i_m = None
            self.i_z = nu
            self.i_s = nu + 1
            n_cost = 1 + S
        else:
            self.i_m = self.i_z = self.i_s = None
            n_cost = 0
        aux0 = nu + n_cost

        use_epigraph = ((tag == DRMPC and self.kind.margin_mode == "cvar") or tag == CVAR_MPC) \
            and self.kind.cvar_form == "epigraph"
        if use_epigraph:
            tails = self._constraint_tails()
            epi, epi_h0, epi_hx, n_epi = _state_rows_epigraph(pred, tails, aux0)
        else:
            n_epi = 0
        n_total = aux0 + n_epi
        self.n_total = n_total

        # cost epigraph rows
        if n_cost:
            b = pred.cost_b
            eye = sp.identity(S, format="csr")
            ucols = sp.csr_matrix(b)
            zero = lambda c: sp.csr_matrix((S, c))
            col = lambda idx: sp.csr_matrix((np.ones(S), (np.arange(S), np.full(S, idx - nu))), shape=(S, n_cost))
            if self.i_m is not None:
                # b_j u - m <= -a_j
                blocks.append((sp.hstack([ucols, -col(self.i_m), zero(n_epi)]), "neg_a"))
            s_block = sp.hstack([sp.csr_matrix((S, self.i_s - nu)), eye])
            blocks.append((sp.hstack([ucols, -col(self.i_z) - s_block, zero(n_epi)]), "neg_a"))
            blocks.append((sp.hstack([sp.csr_matrix((S, nu)), -s_block, zero(n_epi)]), "zero"))

        G_in, h_in = pred.input_rows(n_total)
        blocks.append((G_in, ("const", h_in)))

        if use_epigraph:
            rows, cols, vals, nrow = epi
            G_epi = sp.csr_matrix((vals, (rows, cols)), shape=(nrow, n_total))
            blocks.append((G_epi, ("affine", epi_h0, epi_hx)))
        elif tag in (DRMPC, TIGHT_DRMPC, NOMINAL, CVAR_MPC):
            if tag == NOMINAL:
                margins = np.zeros((pred.N, self.spec.state_con.r))
            elif tag == CVAR_MPC:
                margins = self._cvar_mpc_margins()
            elif tag == TIGHT_DRMPC:
                margins = self.schedule.norm_margins
            elif self.kind.margin_mode == "norm":
                margins = self.schedule.norm_margins
            else:
                margins = self.schedule.cvar_margins
            G_st, h0, Hx = _state_rows_offline(pred, margins, n_total)
            blocks.append((G_st, ("affine", h0, Hx)))

        self._G = sp.vstack([blk for blk, _ in blocks], format="csc")
        self._h_parts = [kind for _, kind in blocks]
        self._block_sizes = [blk.shape[0] for blk, _ in blocks]

        H = sp.block_diag([sp.csr_matrix(pred.H_u), sp.csr_matrix((n_total - nu, n_total - nu))], format="csc")
        self._H = H
        f_aux = np.zeros(n_total - nu)
        a = self.spec.alpha
        if tag in (DRMPC, TIGHT_DRMPC):
            f_aux[self.i_m - nu] = a
            f_aux[self.i_z - nu] = 1.0 - a
            f_aux[self.i_s - nu:self.i_s - nu + S] = pred.p_cost
        elif tag == CVAR_MPC:
            f_aux[self.i_z - nu] = 1.0
            f_aux[self.i_s - nu:self.i_s - nu + S] = pred.p_cost / (1.0 - a)
        self._f_aux = f_aux

    def _constraint_tails(self):
        if self.kind.tag == CVAR_MPC:
            t = tail_mass(self.spec.epsilon, 0.0, self.kind.tail_convention)
            return np.full(self.spec.N, t)
        return self.schedule.tails

    def _cvar_mpc_margins(self):
        from .tightening import cvar_margin

        t = self._constraint_tails()
        return np.array([cvar_margin(self.spec.sys, self.spec.state_con, k,
                                     enumerate_scenarios(self.spec.disturbance, k), t[k - 1])
                         for k in range(1, self.spec.N + 1)])

    # -- per-state problem ------------------------------------------------
    def build(self, x_t) -> QpProblem:
        x = np.asarray(x_t, dtype=float).ravel()
        if self.kind.tag == SMPC:
            return self._build_smpc(x)
        pred = self.pred
        h = []
        neg_a = -pred.cost_a(x)
        for kind, size in zip(self._h_parts, self._block_sizes):
            if kind == "neg_a":
                h.append(neg_a)
            elif kind == "zero":
                h.append(np.zeros(size))
            elif kind[0] == "const":
                h.append(kind[1])
            else:
                h.append(kind[1] - kind[2] @ x)
        f = np.concatenate([pred.F_u @ x, self._f_aux])
        return QpProblem(self._H, f, self._G, np.concatenate(h), offset=pred.nominal_cost(x))

    def _big_m(self, x):
        if self.kind.big_m is not None:
            return float(self.kind.big_m)
        spec = self.spec
        sys = spec.sys
        x_lo, x_hi = spec.state_con.bounds()
        x_bound = max(np.max(np.abs(x)), np.max(np.abs(np.r_[x_lo, x_hi])))
        u_bound = np.max(np.abs(np.r_[self._u_lo, self._u_hi]))
        d_bound = np.max(np.abs(spec.disturbance.atoms))
        bound = 0.0
        Ak = np.eye(sys.n_x)
        acc = 0.0
        for _ in range(spec.N):
            acc += np.linalg.norm(Ak @ sys.B, np.inf) * u_bound + np.linalg.norm(Ak @ sys.D, np.inf) * d_bound
            Ak = sys.A @ Ak
            bound = max(bound, np.linalg.norm(Ak, np.inf) * x_bound + acc)
        F, g = spec.state_con.F, spec.state_con.g
        return 2.0 * (np.linalg.norm(F, np.inf) * bound + np.max(np.abs(g)))

    def _build_smpc(self, x):
        """Scenario SMPC: expected cost, big-M chance constraint per step.

        Scenario/step pairs that are violated (or satisfied) for every
        admissible input sequence get their binary fixed in presolve.  The
        row-wise quantile constraints implied by each joint chance
        constraint are added as cuts; they tighten the relaxation without
        changing the feasible input set.
        """
        spec, pred = self.spec, self.pred
        nu = pred.nu
        g = spec.state_con.g
        eps = spec.epsilon
        M = self._big_m(x)
        u_lo = np.tile(self._u_lo, pred.N)
        u_hi = np.tile(self._u_hi, pred.N)

        rows_u, h_rows, y_rows, m_rows = [], [], [], []
        chance = []
        cuts = []
        n_y = 0
        for k in range(pred.N):
            p = pred.step_probs[k]
            base = (pred.FP[k] @ x)[:, None] + pred.step_images[k] - g[:, None]  # r x S
            FG = pred.FG[k]
            lo = np.minimum(FG * u_lo, FG * u_hi).sum(axis=1)
            hi = np.maximum(FG * u_lo, FG * u_hi).sum(axis=1)
            always_ok = np.all(base + hi[:, None] <= 0.0, axis=0)
            always_bad = np.any(base + lo[:, None] > 0.0, axis=0)
            if not self.kind.presolve:
                always_ok[:] = False
                always_bad[:] = False
            free = np.flatnonzero(~always_ok & ~always_bad)
            # heavy scenarios get the low binary indices, so they are branched on first
            free = free[np.argsort(-p[free], kind="stable")]
            budget = eps - p[always_bad].sum()
            if eps >= 1.0:
                continue
            idx = []
            for j in free:
                # largest violation reachable inside the input box; never looser than M
                reach = np.maximum(base[:, j] + hi, 0.0)
                keep = reach > 0.0
                rows_u.append(FG[keep])
                h_rows.append(-base[keep, j])
                m_rows.append(np.minimum(M, reach[keep]) if self.kind.tight_big_m else np.full(keep.sum(), M))
                y_rows.append((n_y, int(keep.sum())))
                idx.append(n_y)
                n_y += 1
            chance.append((np.array(idx, dtype=int), p[free], budget))
            # implied single-row chance constraints, kept as cuts
            q = np.array([var_tail(row, p, eps) for row in pred.step_images[k]])
            cuts.append((FG, g - pred.FP[k] @ x - q))
        n_total = nu + n_y
        G_parts, h_parts = [], []
        G_in, h_in = pred.input_rows(n_total)
        G_parts.append(G_in)
        h_parts.append(h_in)
        for FG, hr, (yi, r), Mr in zip(rows_u, h_rows, y_rows, m_rows):
            ycol = sp.csr_matrix((-Mr, (np.arange(r), np.full(r, nu + yi))), shape=(r, n_total))
            G_parts.append(sp.hstack([sp.csr_matrix(FG), sp.csr_matrix((r, n_y))]) + ycol)
            h_parts.append(hr)
        for FG, hc in cuts:
            G_parts.append(sp.hstack([sp.csr_matrix(FG), sp.csr_matrix((FG.shape[0], n_y))]))
            h_parts.append(hc)
        for yi, pj, budget in chance:
            row = np.zeros(n_total)
            row[nu + yi] = pj
            G_parts.append(sp.csr_matrix(row))
            h_parts.append([budget])
        G = sp.vstack(G_parts, format="csc")
        h = np.concatenate([np.asarray(v, dtype=float) for v in h_parts])
        self._smpc_groups = [(nu + yi, [(rows_u[t], h_rows[t]) for t in yi], pj, budget)
                             for yi, pj, budget in chance]
        H = sp.block_diag([sp.csr_matrix(pred.H_u), sp.csr_matrix((n_y, n_y))], format="csc")
        p_cost = pred.p_cost
        f_u = pred.F_u @ x + p_cost @ pred.cost_b
        f = np.concatenate([f_u, np.zeros(n_y)])
        offset = pred.nominal_cost(x) + float(p_cost @ pred.cost_a(x))
        return QpProblem(H, f, G, h, binary=tuple(range(nu, nu + n_y)), offset=offset)

    def _smpc_heuristic(self, x, fix):
        """Per step, keep the least-violated scenarios satisfied up to the budget."""
        nu = self.pred.nu
        u = x[:nu]
        guess = {}
        for cols, rows, pj, budget in self._smpc_groups:
            if cols.size == 0:
                continue
            viol = np.array([np.max(FG @ u - hr) if hr.size else -np.inf for FG, hr in rows])
            forced = np.array([fix.get(int(c)) for c in cols], dtype=object)
            ones = np.array([f == 1.0 for f in forced])
            zeros = np.array([f == 0.0 for f in forced])
            spent = pj[ones].sum()
            # most violated first; relax them while the budget allows
            pick = np.zeros(cols.size, dtype=bool)
            pick[ones] = True
            for j in np.argsort(-viol, kind="stable"):
                if pick[j] or zeros[j] or viol[j] <= 0.0:
                    continue
                if spent + pj[j] <= budget + 1e-12:
                    pick[j] = True
                    spent += pj[j]
            for c, v in zip(cols, pick):
                guess[int(c)] = 1.0 if v else 0.0
        return guess

    def step(self, x_t) -> MpcStepResult:
        t0 = time.perf_counter()
        prob = self.build(x_t)
        if prob.binary:
            sol = solve_miqp(prob, cap=self.kind.miqp_cap, heuristic=self._smpc_heuristic)
        else:
            sol = solve_qp(prob, polish=False)
        elapsed = time.perf_counter() - t0
        if sol.status != OPTIMAL or sol.x is None:
            return MpcStepResult(None, None, float("inf"), sol.status, elapsed)
        nu = self.pred.nu
        u = sol.x[:nu].reshape(self.spec.N, self.spec.sys.n_u)
        aux = {}
        if self.kind.tag in (DRMPC, TIGHT_DRMPC):
            aux = {"m": float(sol.x[self.i_m]), "z": float(sol.x[self.i_z]),
                   "s": sol.x[self.i_s:self.i_s + self.pred.p_cost.size].copy()}
        elif self.kind.tag == CVAR_MPC:
            aux = {"z": float(sol.x[self.i_z]), "s": sol.x[self.i_s:self.i_s + self.pred.p_cost.size].copy()}
        elif self.kind.tag == SMPC:
            aux = {"binaries": len(prob.binary), "nodes": sol.nodes}
        return MpcStepResult(u[0].copy(), u, sol.objective, OPTIMAL, elapsed, aux)


def build_drmpc_qp(spec, schedule, x_t, kind=None):
    return MpcController(kind or ControllerKind(DRMPC), spec, schedule).build(x_t)


def build_tight_drmpc_qp(spec, schedule, x_t, kind=None):
    return MpcController(kind or ControllerKind(TIGHT_DRMPC), spec, schedule).build(x_t)


def build_smpc_miqp(spec, x_t, kind=None):
    return MpcController(kind or ControllerKind(SMPC), spec).build(x_t)


def build_cvar_mpc_qp(spec, x_t, kind=None):
    return MpcController(kind or ControllerKind(CVAR_MPC), spec).build(x_t)


def build_nominal_qp(spec, x_t):
    """Deterministic MPC: same cost and input set, untightened state constraints."""
    return MpcController(ControllerKind(NOMINAL), spec).build(x_t)


def realized_costs(spec: ControlProblemSpec, x_t, u_seq):
    """Total stage cost of every horizon scenario, by direct propagation."""
    from .dynamics import propagate_disturbed

    sc = enumerate_scenarios(spec.disturbance, spec.N)
    u = np.asarray(u_seq, dtype=float).reshape(spec.N, spec.sys.n_u)
    costs = np.empty(len(sc))
    for j, seq in enumerate(sc.sequences):
        xs = propagate_disturbed(spec.sys, x_t, u, seq)
        costs[j] = sum(xs[k] @ spec.Q @ xs[k] + u[k - 1] @ spec.R @ u[k - 1] for k in range(1, spec.N + 1))
    return costs, sc.joint_probs


def evaluate_cost_oracle(spec: ControlProblemSpec, x_t, u_seq):
    """TV-ball risk of the realized total cost for a fixed input sequence."""
    costs, probs = realized_costs(spec, x_t, u_seq)
    return tvd_risk(costs, probs, spec.alpha)


def receding_horizon_step(kind, spec, schedule, x_t) -> MpcStepResult:
    """Build and solve one controller problem at ``x_t``; report the first input."""
    return MpcController(kind if isinstance(kind, ControllerKind) else ControllerKind(kind),
                         spec, schedule).step(x_t)
