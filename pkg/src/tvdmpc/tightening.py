"""Offline tightening of distributionally robust state constraints.

For each prediction step ``k`` the TV-ball inflation ``zeta_k`` of the
violation probability is obtained from a small dual LP, and the remaining
budget ``epsilon - zeta_k`` becomes the CVaR tail mass used to shrink the
state polytope around the nominal prediction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import LinearSystemModel, batch_matrices, enumerate_scenarios, scenario_offsets
from .errors import DimensionError, DomainError, ScheduleError, SolverError
from .qp import QpProblem, solve_qp
from .risk import DiscreteDistribution, cvar_tail

PAPER_LITERAL = "paper-literal"
CORRECTED = "corrected"
AUTO = "auto"
ZETA_MODES = (PAPER_LITERAL, CORRECTED, AUTO)
TAIL_BUDGET = "budget"
TAIL_LITERAL = "literal"
SCHEDULE_FORMAT_VERSION = 1
# LP optima carry ~1e-11 noise; a budget thinner than this is treated as exhausted
BUDGET_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PolytopeConstraint:
    """``{x : F x <= g}``."""

    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        if F.shape[0] != g.size or F.shape[0] < 1:
            raise DimensionError(f"F is {F.shape} but g has {g.size} entries")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise DomainError("polytope data must be finite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    @property
    def r(self):
        return self.F.shape[0]

    @property
    def dim(self):
        return self.F.shape[1]

    def contains(self, x, tol=1e-9):
        return bool(np.all(self.F @ np.asarray(x, dtype=float) <= self.g + tol))

    def bounds(self):
        """Per-coordinate bounding box (assumes the polytope is bounded)."""
        from scipy.optimize import linprog

        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for i in range(self.dim):
            c = np.zeros(self.dim)
            c[i] = 1.0
            free = [(None, None)] * self.dim
            rl = linprog(c, A_ub=self.F, b_ub=self.g, bounds=free, method="highs")
            rh = linprog(-c, A_ub=self.F, b_ub=self.g, bounds=free, method="highs")
            if rl.status != 0 or rh.status != 0:
                raise DomainError("polytope is empty or unbounded")
            lo[i], hi[i] = rl.fun, -rh.fun
        return lo, hi


@dataclass
class ZetaLpSolution:
    zeta: float
    lambda1: np.ndarray
    lambda2: float
    nu: float
    status: str


def _joint_probs(joint):
    if hasattr(joint, "joint_probs"):
        return np.asarray(joint.joint_probs, dtype=float)
    if isinstance(joint, DiscreteDistribution):
        return joint.probs
    return np.asarray(joint, dtype=float).ravel()


def zeta_lp(joint, alpha, mode=CORRECTED):
    """Dual LP bounding the TV-ball inflation of a failure probability.

    Minimizes ``sum(lambda1) + 2 alpha lambda2`` over ``lambda1 >= 0``,
    ``lambda2 >= 0`` and free ``nu``.  In ``paper-literal`` mode the
    per-scenario bounds are ``-lambda2 <= nu p_j + lambda1_j`` and
    ``p_j <= lambda2 - nu p_j - lambda1_j``; ``corrected`` mode multiplies
    each ``lambda2`` by ``p_j``.
    """
    if mode not in (PAPER_LITERAL, CORRECTED):
        raise DomainError(f"unknown zeta mode {mode!r}")
    if not (0.0 <= alpha < 1.0):
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    p = _joint_probs(joint)
    M = p.size
    scale = p if mode == CORRECTED else np.ones(M)
    # variables: [lambda1 (M), lambda2, nu]
    f = np.concatenate([np.ones(M), [2.0 * alpha, 0.0]])
    eye = np.eye(M)
    G = np.vstack([
        np.hstack([-eye, np.zeros((M, 2))]),
        np.concatenate([np.zeros(M), [-1.0, 0.0]])[None, :],
        np.hstack([-eye, -scale[:, None], -p[:, None]]),
        np.hstack([eye, -scale[:, None], p[:, None]]),
    ])
    h = np.concatenate([np.zeros(M + 1), np.zeros(M), -p])
    if alpha == 0.0:
        # lambda2 carries no cost; cap it so the feasible set stays bounded
        G = np.vstack([G, np.concatenate([np.zeros(M), [1.0, 0.0]])[None, :]])
        h = np.concatenate([h, [1.0]])
    sol = solve_qp(QpProblem(None, f, G, h))
    if not sol.ok:
        raise SolverError(f"zeta LP failed with status {sol.status}", sol.status)
    x = sol.x
    return ZetaLpSolution(max(sol.objective, 0.0), x[:M].copy(), float(x[M]), float(x[M + 1]), sol.status)


def exact_indicator_tightening(alpha):
    """Exact worst-case inflation of an event probability over a TV ball of radius ``alpha``."""
    if not (0.0 <= alpha < 1.0):
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    return float(alpha)


def cvar_margin(sys: LinearSystemModel, con: PolytopeConstraint, k, joint, tail):
    """Row-wise CVaR of ``F D_k dbar_k`` over the step-``k`` scenarios."""
    if joint.k != k:
        raise DimensionError(f"scenario set has length {joint.k}, expected {k}")
    if not (0.0 < tail <= 1.0):
        raise DomainError(f"tail mass must lie in (0, 1], got {tail}")
    images = con.F @ scenario_offsets(sys, joint).T
    return np.array([cvar_tail(row, joint.joint_probs, tail) for row in images])


def norm_margin(sys: LinearSystemModel, con: PolytopeConstraint, marginal: DiscreteDistribution, tail, k=1):
    """Scenario-free margin ``|F D_k|_1 * CVaR(|delta|)`` per row.

    Uses only the single-step marginal: by subadditivity and positive
    homogeneity the CVaR of ``sum_l a_l delta_l`` is at most
    ``sum_l |a_l| CVaR(|delta_l|)`` for identically distributed terms.
    """
    if not (0.0 < tail <= 1.0):
        raise DomainError(f"tail mass must lie in (0, 1], got {tail}")
    atoms = np.abs(marginal.atom_vectors())
    per_component = np.array([cvar_tail(atoms[:, l], marginal, tail) for l in range(marginal.n_d)])
    FD = np.abs(con.F @ batch_matrices(sys, k).Dk)
    weights = np.tile(per_component, k)
    return FD @ weights


def tail_mass(epsilon, zeta, convention=TAIL_BUDGET):
    if convention == TAIL_BUDGET:
        return epsilon - zeta
    if convention == TAIL_LITERAL:
        return 1.0 - epsilon + zeta
    raise DomainError(f"unknown tail convention {convention!r}")


@dataclass
class TighteningSchedule:
    epsilon: float
    alpha: float
    zeta: np.ndarray
    tails: np.ndarray
    cvar_margins: np.ndarray
    norm_margins: np.ndarray
    zeta_mode: str = CORRECTED
    margin_mode: str = "cvar"
    tail_convention: str = TAIL_BUDGET
    info: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.zeta.size

    @property
    def margins(self):
        return self.cvar_margins if self.margin_mode == "cvar" else self.norm_margins

    def to_dict(self):
        return {
            "format_version": SCHEDULE_FORMAT_VERSION,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "zeta_mode": self.zeta_mode,
            "margin_mode": self.margin_mode,
            "tail_convention": self.tail_convention,
            "zeta": self.zeta.tolist(),
            "tails": self.tails.tolist(),
            "cvar_margins": self.cvar_margins.tolist(),
            "norm_margins": self.norm_margins.tolist(),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != SCHEDULE_FORMAT_VERSION:
            raise DomainError(f"unsupported schedule format {doc.get('format_version')!r}")
        return cls(
            epsilon=doc["epsilon"],
            alpha=doc["alpha"],
            zeta=np.asarray(doc["zeta"], dtype=float),
            tails=np.asarray(doc["tails"], dtype=float),
            cvar_margins=np.asarray(doc["cvar_margins"], dtype=float),
            norm_margins=np.asarray(doc["norm_margins"], dtype=float),
            zeta_mode=doc["zeta_mode"],
            margin_mode=doc["margin_mode"],
            tail_convention=doc["tail_convention"],
            info=doc.get("info", {}),
        )


def zeta_schedule(d: DiscreteDistribution, alpha, N, mode=CORRECTED):
    return np.array([zeta_lp(enumerate_scenarios(d, k), alpha, mode).zeta for k in range(1, N + 1)])


def build_schedule(sys, con, d, epsilon, alpha, N, zeta_mode=CORRECTED, margin_mode="cvar",
                   tail_convention=TAIL_BUDGET):
    """Per-step ``zeta_k``, tail masses and margins for steps ``1..N``.

    ``zeta_mode="auto"`` uses the corrected LP when it leaves a positive
    budget at every step and falls back to the paper-literal LP otherwise.
    Raises :class:`ScheduleError` when some ``zeta_k >= epsilon - BUDGET_TOL``.
    """
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not (0.0 <= alpha < 1.0):
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    if N < 1:
        raise DomainError(f"horizon must be >= 1, got {N}")
    if margin_mode not in ("cvar", "norm"):
        raise DomainError(f"unknown margin mode {margin_mode!r}")
    info = {}
    if zeta_mode == AUTO:
        zeta = zeta_schedule(d, alpha, N, CORRECTED)
        used = CORRECTED
        if np.any(zeta >= epsilon - BUDGET_TOL):
            info["fallback_reason"] = "corrected zeta exhausts the budget"
            zeta = zeta_schedule(d, alpha, N, PAPER_LITERAL)
            used = PAPER_LITERAL
    else:
        zeta = zeta_schedule(d, alpha, N, zeta_mode)
        used = zeta_mode
    bad = np.flatnonzero(zeta >= epsilon - BUDGET_TOL)
    if bad.size:
        k = int(bad[0]) + 1
        raise ScheduleError(
            f"zeta_{k} = {zeta[bad[0]]:.6g} >= epsilon = {epsilon}: reduce alpha or increase epsilon",
            k=k, zeta=float(zeta[bad[0]]))
    tails = np.array([tail_mass(epsilon, z, tail_convention) for z in zeta])
    cvm, nm = [], []
    for k in range(1, N + 1):
        joint = enumerate_scenarios(d, k)
        cvm.append(cvar_margin(sys, con, k, joint, tails[k - 1]))
        nm.append(norm_margin(sys, con, d, tails[k - 1], k))
    info["zeta_mode_used"] = used
    return TighteningSchedule(float(epsilon), float(alpha), zeta, tails, np.array(cvm), np.array(nm),
                              zeta_mode=used, margin_mode=margin_mode,
                              tail_convention=tail_convention, info=info)
