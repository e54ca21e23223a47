"""How much of the initial-state box can the benchmark system keep inside X at all?

The plant is open-loop unstable and the input is weak, so some initial
states leave the state box whatever the controller does.  This script
measures two things on a grid over the campaign's x0 box:

* the fraction of states from which an input sequence exists that keeps
  the undisturbed trajectory in X for T steps (an LP per state), and
* the fraction of states where deterministic receding-horizon MPC with
  horizon N survives T closed-loop steps without disturbance.

Output is a small CSV on stdout.
"""
import argparse

import numpy as np
from scipy.optimize import linprog

from tvdmpc import ControllerKind, MpcController, propagate_nominal
from tvdmpc.config import load_config
from tvdmpc.dynamics import prediction_matrices
from tvdmpc.qp import OPTIMAL


def viable(spec, x0, T):
    Phi, Gamma, _ = prediction_matrices(spec.sys, T)
    F, g = spec.state_con.F, spec.state_con.g
    FF = np.kron(np.eye(T), F)
    lo, hi = spec.input_con.bounds()
    res = linprog(np.zeros(T * spec.sys.n_u), A_ub=FF @ Gamma, b_ub=np.tile(g, T) - FF @ Phi @ x0,
                  bounds=list(zip(np.tile(lo, T), np.tile(hi, T))), method="highs")
    return res.status == 0


def mpc_survives(ctrl, spec, x0, T):
    x = np.array(x0, dtype=float)
    for _ in range(T):
        r = ctrl.step(x)
        if r.status != OPTIMAL:
            return False
        x = propagate_nominal(spec.sys, x, r.u0[None, :])[1]
    return True


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/paper-section5.json")
    ap.add_argument("--grid", type=int, default=12, help="points per axis")
    ap.add_argument("--horizons", default="4,8,15,35", help="LP horizons T")
    ap.add_argument("--mpc-horizons", default="4,8,12", help="MPC horizons N for the closed-loop check")
    ap.add_argument("--steps", type=int, default=35)
    args = ap.parse_args()
    rc = load_config(args.config)
    camp, spec = rc.campaign, rc.spec
    axes = [np.linspace(lo, hi, args.grid) for lo, hi in zip(camp.x0_low, camp.x0_high)]
    grid = np.array(np.meshgrid(*axes)).reshape(len(axes), -1).T
    print("kind,parameter,fraction")
    for T in (int(t) for t in args.horizons.split(",")):
        frac = np.mean([viable(spec, x, T) for x in grid])
        print(f"open-loop-viable,T={T},{frac:.4f}")
    from dataclasses import replace
    for N in (int(n) for n in args.mpc_horizons.split(",")):
        s = replace(spec, N=N)
        ctrl = MpcController(ControllerKind("nominal"), s)
        frac = np.mean([mpc_survives(ctrl, s, x, args.steps) for x in grid])
        print(f"nominal-mpc-survives,N={N},{frac:.4f}")


if __name__ == "__main__":
    main()
