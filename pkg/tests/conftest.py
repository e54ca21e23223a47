import json
from pathlib import Path

import numpy as np
import pytest

from tvdmpc import (ControlProblemSpec, DiscreteDistribution, LinearSystemModel, PolytopeConstraint)
from tvdmpc.config import load_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

BENCH_A = [[1.0475, -0.0463], [0.0463, 0.9690]]
BENCH_B = [[0.028], [-0.0195]]


def bench_spec(epsilon=0.5, alpha=0.5, N=4, probs=(0.1, 0.8, 0.1)):
    sys = LinearSystemModel(BENCH_A, BENCH_B, BENCH_B)
    return ControlProblemSpec(
        sys,
        PolytopeConstraint.box([-4.0, -4.0], [4.0, 4.0]),
        PolytopeConstraint.box([-20.0], [20.0]),
        np.eye(2), 0.1 * np.eye(1), N, epsilon, alpha,
        DiscreteDistribution([-1.0, 0.0, 1.0], list(probs)))


def random_system(rng, n_x, n_u=1, n_d=1, spectral=1.05):
    A = rng.normal(size=(n_x, n_x))
    A *= spectral / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9) * rng.uniform(0.5, 1.0)
    B = rng.normal(size=(n_x, n_u)) * 0.3
    D = rng.normal(size=(n_x, n_d)) * 0.1
    return LinearSystemModel(A, B, D)


def random_spec(rng, n_x=None, J=None, N=None, epsilon=None, alpha=None, point_mass=False):
    n_x = n_x or int(rng.integers(1, 4))
    J = J or int(rng.integers(2, 4))
    N = N or int(rng.integers(1, 5))
    sys = random_system(rng, n_x)
    if point_mass:
        dist = DiscreteDistribution.point_mass([0.0])
    else:
        dist = DiscreteDistribution(rng.uniform(-1, 1, size=J), rng.dirichlet(np.ones(J)))
    Lq = rng.normal(size=(n_x, n_x))
    Q = Lq @ Lq.T + 0.1 * np.eye(n_x)
    R = np.array([[rng.uniform(0.05, 1.0)]])
    bound = 10.0
    return ControlProblemSpec(
        sys, PolytopeConstraint.box(-bound * np.ones(n_x), bound * np.ones(n_x)),
        PolytopeConstraint.box([-5.0], [5.0]), Q, R, N,
        epsilon if epsilon is not None else float(rng.uniform(0.3, 0.9)),
        alpha if alpha is not None else float(rng.choice([0.0, 0.1, 0.2])),
        dist)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def section5_config():
    return load_config(CONFIGS / "paper-section5.json")


@pytest.fixture(scope="session")
def smoke_config_path():
    return CONFIGS / "smoke.json"


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
