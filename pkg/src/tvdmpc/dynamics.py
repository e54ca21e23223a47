"""Linear models ``x+ = A x + B u + D delta``, batch matrices and scenario trees.

Indexing follows the batch convention used throughout the package: inputs
``u_0 .. u_{k-1}`` and disturbances ``delta_1 .. delta_k`` produce ``x_k``,
with ``x_k = A^k x_0 + B_k ubar_k + D_k dbar_k`` and
``B_k = [A^{k-1} B, ..., A B, B]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DimensionError, DomainError
from .risk import DiscreteDistribution

SCENARIO_CAP = 200_000


@dataclass(frozen=True, eq=False)
class LinearSystemModel:
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        D = np.asarray(self.D, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        for name, M in (("B", B), ("D", D)):
            if M.size == 0 or M.size % n or (M.ndim == 2 and M.shape[0] != n):
                raise DimensionError(f"{name} needs {n} rows, got shape {M.shape}")
        B = B.reshape(n, -1)
        D = D.reshape(n, -1)
        for name, M in (("A", A), ("B", B), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise DomainError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_d(self):
        return self.D.shape[1]

    def step(self, x, u, delta=None):
        x_next = self.A @ x + self.B @ np.atleast_1d(u)
        if delta is not None:
            x_next = x_next + self.D @ np.atleast_1d(delta)
        return x_next


@dataclass(frozen=True)
class BatchMatrices:
    k: int
    Bk: np.ndarray
    Dk: np.ndarray


def _stacked_powers(A, M, k):
    blocks = []
    P = M
    for _ in range(k):
        blocks.append(P)
        P = A @ P
    return np.hstack(blocks[::-1])


def batch_matrices(sys: LinearSystemModel, k: int) -> BatchMatrices:
    if k < 1:
        raise DomainError(f"batch horizon must be >= 1, got {k}")
    return BatchMatrices(k, _stacked_powers(sys.A, sys.B, k), _stacked_powers(sys.A, sys.D, k))


def prediction_matrices(sys: LinearSystemModel, N: int):
    """Stacked maps for ``[x_1; ...; x_N] = Phi x_0 + Gamma ubar + Delta dbar``."""
    n, m, q = sys.n_x, sys.n_u, sys.n_d
    Phi = np.zeros((N * n, n))
    Gamma = np.zeros((N * n, N * m))
    Delta = np.zeros((N * n, N * q))
    Ak = np.eye(n)
    for k in range(1, N + 1):
        Ak = sys.A @ Ak
        Phi[(k - 1) * n:k * n] = Ak
        bm = batch_matrices(sys, k)
        Gamma[(k - 1) * n:k * n, :k * m] = bm.Bk
        Delta[(k - 1) * n:k * n, :k * q] = bm.Dk
    return Phi, Gamma, Delta


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """All ``J**k`` disturbance sequences of length ``k``.

    ``sequences`` has shape ``(J**k, k, n_d)``; ``index`` holds the atom
    indices, lexicographic with atom 0 first and the last step varying
    fastest.
    """

    k: int
    index: np.ndarray
    sequences: np.ndarray
    joint_probs: np.ndarray

    def __len__(self):
        return self.joint_probs.size

    def stacked(self):
        """Sequences flattened to ``(J**k, k*n_d)``, matching ``dbar_k``."""
        return self.sequences.reshape(len(self), -1)


def enumerate_scenarios(d: DiscreteDistribution, k: int, cap: int = SCENARIO_CAP) -> ScenarioSet:
    if k < 0:
        raise DomainError(f"scenario length must be >= 0, got {k}")
    J = d.J
    if J ** k > cap:
        raise CapacityError(f"J**k = {J}**{k} = {J ** k} scenarios exceed the cap of {cap}")
    atoms = d.atom_vectors()
    if k == 0:
        return ScenarioSet(0, np.zeros((1, 0), dtype=int), np.zeros((1, 0, d.n_d)), np.ones(1))
    index = np.array(list(itertools.product(range(J), repeat=k)), dtype=int)
    sequences = atoms[index]
    joint = np.prod(d.probs[index], axis=1)
    return ScenarioSet(k, index, sequences, joint)


def propagate_nominal(sys: LinearSystemModel, x0, u_seq):
    """States ``x_0 .. x_N`` of the undisturbed recursion, shape ``(N+1, n_x)``."""
    return propagate_disturbed(sys, x0, u_seq, None)


def propagate_disturbed(sys: LinearSystemModel, x0, u_seq, delta_seq):
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != sys.n_x:
        raise DimensionError(f"x0 has {x0.size} entries, expected {sys.n_x}")
    u = np.asarray(u_seq, dtype=float).reshape(-1, sys.n_u)
    N = u.shape[0]
    if delta_seq is None:
        w = np.zeros((N, sys.n_d))
    else:
        w = np.asarray(delta_seq, dtype=float).reshape(-1, sys.n_d)
        if w.shape[0] != N:
            raise DimensionError(f"{w.shape[0]} disturbances for {N} inputs")
    xs = np.empty((N + 1, sys.n_x))
    xs[0] = x0
    for t in range(N):
        xs[t + 1] = sys.A @ xs[t] + sys.B @ u[t] + sys.D @ w[t]
    return xs


def disturbance_offset(sys: LinearSystemModel, scenario):
    """``D_k dbar_k`` for one length-``k`` disturbance sequence."""
    w = np.asarray(scenario, dtype=float).reshape(-1, sys.n_d)
    if w.shape[0] < 1:
        raise DomainError("scenario must have length >= 1")
    return batch_matrices(sys, w.shape[0]).Dk @ w.ravel()


def scenario_offsets(sys: LinearSystemModel, scenarios: ScenarioSet):
    """``D_k dbar_k`` for every scenario, shape ``(J**k, n_x)``."""
    if scenarios.k == 0:
        return np.zeros((len(scenarios), sys.n_x))
    return scenarios.stacked() @ batch_matrices(sys, scenarios.k).Dk.T
