"""Discrete distributions and coherent risk measures.

All risk functions take a vector of cost realizations aligned with the
atoms of a :class:`DiscreteDistribution` (or a bare probability vector).
CVaR is parameterized by its *tail mass*, i.e. the divisor in
``inf_z z + E[(C - z)^+] / tail``; ``tail=1`` is the expectation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, DomainError, RiskWarning, SolverError

PROB_TOL = 1e-12
# vertex solutions with tight tolerances, so the LP oracles agree with closed forms to ~1e-10
_SIMPLEX_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite support ``atoms`` (shape ``(J,)`` or ``(J, n_d)``) with masses ``probs``."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        probs = np.asarray(self.probs, dtype=float).ravel()
        if atoms.ndim == 0:
            atoms = atoms.reshape(1)
        if atoms.shape[0] != probs.size:
            raise DimensionError(f"{atoms.shape[0]} atoms but {probs.size} masses")
        if probs.size < 1:
            raise DimensionError("distribution needs at least one atom")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DomainError("probability masses must be finite and non-negative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise DomainError(f"masses sum to {probs.sum():.15g}, not 1")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, value=0.0):
        v = np.asarray(value, dtype=float)
        return cls(v[None, ...], [1.0])

    @classmethod
    def normalized(cls, atoms, weights):
        """Build from non-negative weights, renormalizing them to sum to one."""
        w = np.asarray(weights, dtype=float)
        return cls(atoms, w / w.sum())

    @property
    def J(self):
        return self.probs.size

    @property
    def n_d(self):
        return 1 if self.atoms.ndim == 1 else self.atoms.shape[1]

    def atom_vectors(self):
        """Atoms as a ``(J, n_d)`` array."""
        return self.atoms.reshape(self.J, self.n_d)

    def with_probs(self, probs):
        return DiscreteDistribution(self.atoms, probs)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return (self.atoms.shape == other.atoms.shape
                and np.array_equal(self.atoms, other.atoms)
                and np.array_equal(self.probs, other.probs))

    __hash__ = None


def _probs(d):
    if isinstance(d, DiscreteDistribution):
        return d.probs
    return np.asarray(d, dtype=float).ravel()


def _pair(values, d):
    c = np.asarray(values, dtype=float).ravel()
    p = _probs(d)
    if c.size != p.size:
        raise DimensionError(f"{c.size} cost values for {p.size} atoms")
    if c.size == 0:
        raise DomainError("empty cost sample")
    return c, p


def _check_tail(tail):
    if not (0.0 <= tail <= 1.0):
        raise DomainError(f"tail mass must lie in (0, 1], got {tail}")


def expectation(values, d):
    c, p = _pair(values, d)
    return float(p @ c)


def var_tail(values, d, tail):
    """Smallest support value ``z`` with ``P(C <= z) >= 1 - tail``."""
    c, p = _pair(values, d)
    _check_tail(tail)
    if tail == 0.0:
        return float(np.max(c[p > 0]))
    order = np.argsort(c, kind="stable")
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, 1.0 - tail - PROB_TOL, side="left"))
    return float(c[order][min(k, c.size - 1)])


def cvar_tail(values, d, tail, method="sorted"):
    """CVaR with tail mass ``tail``.

    ``method="sorted"`` averages the worst ``tail`` of the probability mass;
    ``method="lp"`` solves the epigraph linear program
    ``min_{z,s} sum_j p_j (z + s_j/tail)``, ``s >= 0``, ``s_j + z >= C_j``.
    ``tail=0`` returns the essential supremum and emits a :class:`RiskWarning`.
    """
    c, p = _pair(values, d)
    _check_tail(tail)
    if tail == 0.0:
        warnings.warn("CVaR with zero tail mass: returning the essential supremum",
                      RiskWarning, stacklevel=2)
        return float(np.max(c[p > 0]))
    if method == "sorted":
        return _cvar_sorted(c, p, tail)
    if method == "lp":
        return cvar_lp(c, p, tail)[0]
    raise ValueError(f"unknown method {method!r}")


def _cvar_sorted(c, p, tail):
    order = np.argsort(-c, kind="stable")
    cs, ps = c[order], p[order]
    before = np.concatenate([[0.0], np.cumsum(ps)[:-1]])
    take = np.clip(tail - before, 0.0, ps)
    return float(take @ cs / tail)


def cvar_lp(values, d, tail):
    """Epigraph LP for CVaR, solved to a vertex by HiGHS dual simplex.  Returns ``(value, z, s)``."""
    c, p = _pair(values, d)
    _check_tail(tail)
    if tail == 0.0:
        raise DomainError("the CVaR LP needs a positive tail mass")
    J = c.size
    # variables: [z, s_1..s_J];  s_j >= c_j - z,  s >= 0
    f = np.concatenate([[1.0], p / tail])
    A_ub = np.hstack([-np.ones((J, 1)), -np.eye(J)])
    res = linprog(f, A_ub=A_ub, b_ub=-c, bounds=[(None, None)] + [(0, None)] * J,
                  method="highs-ds", options=_SIMPLEX_OPTIONS)
    if res.status != 0:
        raise SolverError(f"CVaR LP failed: {res.message}", res.status)
    return float(res.fun), float(res.x[0]), res.x[1:].copy()


def tvd_risk(values, d, alpha):
    """Worst-case expectation over the total-variation ball of radius ``alpha``."""
    c, p = _pair(values, d)
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    top = float(np.max(c))
    if alpha == 1.0:
        return top
    return alpha * top + (1.0 - alpha) * _cvar_sorted(c, p, 1.0 - alpha)


def brute_force_tvd_sup(values, d, alpha):
    """Oracle: the TV-ball supremum as an explicit LP (HiGHS via scipy).

    Variables are ``q`` and ``t`` with ``t >= |q - p|``.
    """
    c, p = _pair(values, d)
    J = c.size
    eye = np.eye(J)
    obj = np.concatenate([-c, np.zeros(J)])
    A_ub = np.vstack([
        np.hstack([eye, -eye]),
        np.hstack([-eye, -eye]),
        np.concatenate([np.zeros(J), 0.5 * np.ones(J)])[None, :],
    ])
    b_ub = np.concatenate([p, -p, [alpha]])
    A_eq = np.concatenate([np.ones(J), np.zeros(J)])[None, :]
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (2 * J), method="highs-ds", options=_SIMPLEX_OPTIONS)
    if res.status != 0:
        raise SolverError(f"TV oracle LP failed: {res.message}", res.status)
    return float(-res.fun)


def worst_case_distribution(values, d, alpha):
    """Greedy maximizer of the TV-ball problem.

    Moves up to ``alpha`` mass from the cheapest atoms onto the first
    atom of maximal cost.
    """
    c, p = _pair(values, d)
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    q = p.copy()
    top = int(np.argmax(c))
    budget = min(alpha, 1.0 - p[top])
    for j in np.argsort(c, kind="stable"):
        if budget <= 0.0:
            break
        if j == top:
            continue
        moved = min(q[j], budget)
        q[j] -= moved
        q[top] += moved
        budget -= moved
    q = np.maximum(q, 0.0)
    q /= q.sum()
    if isinstance(d, DiscreteDistribution):
        return d.with_probs(q)
    return DiscreteDistribution(np.arange(c.size, dtype=float), q)


def tvd_distance(p, q):
    pp, qq = _probs(p), _probs(q)
    if pp.size != qq.size:
        raise DimensionError(f"supports differ in length: {pp.size} vs {qq.size}")
    return float(0.5 * np.sum(np.abs(pp - qq)))


def sample_in_tvd_ball(p: DiscreteDistribution, alpha, seed, adversarial_cost=None):
    """Random pmf within total-variation distance ``alpha`` of ``p``.

    A direction is drawn uniformly on the zero-sum tangent space, scaled to
    TV length ``r ~ U[0, alpha]``, and added to ``p``.  Masses pushed below
    zero are clipped and the positive part of the perturbation is shrunk to
    rebalance, which can only reduce the distance.  With
    ``adversarial_cost`` the greedy worst case for that cost is returned.
    """
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if adversarial_cost is not None:
        return worst_case_distribution(adversarial_cost, p, alpha)
    probs = p.probs
    if alpha == 0.0 or p.J == 1:
        return p
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(p.J)
    direction -= direction.mean()
    direction /= 0.5 * np.sum(np.abs(direction))
    radius = rng.uniform(0.0, alpha)
    delta = radius * direction
    delta = np.maximum(probs + delta, 0.0) - probs
    pos = delta > 0
    neg_mass = -delta[~pos].sum()
    pos_mass = delta[pos].sum()
    if pos_mass > 0:
        delta[pos] *= neg_mass / pos_mass
    q = np.maximum(probs + delta, 0.0)
    q /= q.sum()
    return p.with_probs(q)
