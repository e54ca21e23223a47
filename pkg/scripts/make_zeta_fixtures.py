"""Regenerate tests/fixtures/zeta_paper_literal.json with an independent LP oracle.

The LP is assembled here from scratch (variable order ``[nu, lambda2,
lambda1]``) and solved with scipy's HiGHS interface, so the fixture does
not depend on any code in the package.
"""
import argparse
import itertools
import json
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

BENCH_PMF = [0.1, 0.8, 0.1]
ALPHAS = [0.0, 0.1, 0.15, 0.5, 0.8]


def joint_pmf(p, k):
    return np.array([np.prod(c) for c in itertools.product(p, repeat=k)])


def literal_zeta(pk, alpha):
    M = pk.size
    # min sum(l1) + 2 alpha l2   s.t.  -l2 - nu p_j - l1_j <= 0,  p_j - l2 + nu p_j + l1_j <= 0
    c = np.concatenate([[0.0, 2.0 * alpha], np.ones(M)])
    A1 = np.hstack([-pk[:, None], -np.ones((M, 1)), -np.eye(M)])
    A2 = np.hstack([pk[:, None], -np.ones((M, 1)), np.eye(M)])
    A = np.vstack([A1, A2])
    b = np.concatenate([np.zeros(M), -pk])
    bounds = [(None, None), (0, 1.0 if alpha == 0 else None)] + [(0, None)] * M
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(res.message)
    return float(res.fun)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/fixtures/zeta_paper_literal.json"))
    args = ap.parse_args()
    cases = []
    for k in range(1, 5):
        pk = joint_pmf(BENCH_PMF, k)
        for a in ALPHAS:
            cases.append({"marginal": BENCH_PMF, "k": k, "alpha": a, "zeta": literal_zeta(pk, a)})
    rng = np.random.default_rng(12345)
    for _ in range(12):
        J = int(rng.integers(2, 6))
        p = rng.dirichlet(np.ones(J))
        p = (p / p.sum()).tolist()
        k = int(rng.integers(1, 4))
        a = float(rng.choice(ALPHAS))
        cases.append({"marginal": p, "k": k, "alpha": a, "zeta": literal_zeta(joint_pmf(p, k), a)})
    doc = {"format_version": 1, "kind": "zeta-oracle-fixtures", "solver": "scipy.optimize.linprog/highs",
           "mode": "paper-literal", "cases": cases}
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {args.out}")


if __name__ == "__main__":
    main()
