import json

import numpy as np
import pytest

from tvdmpc import CampaignConfig, Cell, compare_report, run_campaign, run_trial, tvd_distance
from tvdmpc.errors import DomainError, ReportError
from tvdmpc.io import dumps_json
from tvdmpc.montecarlo import (PERTURB_ADVERSARIAL, PERTURB_NONE, draw_world, markdown_table,
                               trial_seed_key)
from tvdmpc.tightening import AUTO, CORRECTED

from conftest import bench_spec


def small_campaign(**kw):
    base = dict(spec=bench_spec(0.5, 0.1, N=3), controllers=("cvar_mpc", "tight_drmpc"),
                cells=((0.5, 0.5), (0.9, 0.0)), trials=3, steps=4,
                x0_low=np.array([3.1, 3.0]), x0_high=np.array([3.5, 3.4]), seed=11, zeta_mode=AUTO)
    base.update(kw)
    return CampaignConfig(**base)


def test_seed_key_and_world_are_stable():
    cfg = small_campaign()
    cell = cfg.cells[0]
    assert trial_seed_key(11, cell, 2) == (11, 500000, 500000, 2)
    a, b = draw_world(cfg, cell, 2), draw_world(cfg, cell, 2)
    assert a.x0.tobytes() == b.x0.tobytes()
    assert np.array_equal(a.atom_index, b.atom_index)
    # adding controllers must not reshuffle the worlds
    more = small_campaign(controllers=("smpc", "cvar_mpc", "drmpc", "tight_drmpc"))
    c = draw_world(more, cell, 2)
    assert c.x0.tobytes() == a.x0.tobytes() and np.array_equal(c.atom_index, a.atom_index)
    assert draw_world(cfg, cell, 3).x0.tobytes() != a.x0.tobytes()


def test_world_pmf_respects_radius():
    cfg = small_campaign()
    for t in range(20):
        w = draw_world(cfg, cfg.cells[0], t)
        assert tvd_distance(cfg.spec.disturbance, w.pmf) <= 0.5 + 1e-12
        assert np.all((w.x0 >= cfg.x0_low) & (w.x0 <= cfg.x0_high))
    w = draw_world(cfg, cfg.cells[1], 0)
    assert np.array_equal(w.pmf.probs, cfg.spec.disturbance.probs)
    assert np.array_equal(draw_world(small_campaign(perturbation=PERTURB_NONE), cfg.cells[0], 0).pmf.probs,
                          cfg.spec.disturbance.probs)
    adv = draw_world(small_campaign(perturbation=PERTURB_ADVERSARIAL), cfg.cells[0], 0)
    assert tvd_distance(cfg.spec.disturbance, adv.pmf) == pytest.approx(0.5)


def test_controller_alpha_rule():
    cfg = small_campaign()
    assert cfg.controller_alpha(Cell(0.5, 0.5)) == 0.5
    assert cfg.controller_alpha(Cell(0.9, 0.0)) == cfg.nominal_alpha


def test_violations_use_realized_states():
    cfg = small_campaign(steps=6)
    cell = cfg.cells[0]
    rec = run_trial(cfg, cell, "cvar_mpc", 0)
    sys = cfg.spec.sys
    x = rec.x0
    for t in range(rec.n_steps):
        x = sys.A @ x + sys.B @ rec.inputs[t] + sys.D @ rec.disturbances[t]
        assert np.allclose(x, rec.states[t + 1])
        assert rec.violations[t] == (not cfg.spec.state_con.contains(x, tol=1e-9))


def test_common_random_numbers_across_controllers():
    cfg = small_campaign()
    cell = cfg.cells[0]
    a = run_trial(cfg, cell, "cvar_mpc", 1)
    b = run_trial(cfg, cell, "tight_drmpc", 1)
    n = min(a.n_steps, b.n_steps)
    assert np.array_equal(a.x0, b.x0)
    assert np.array_equal(a.disturbances[:n], b.disturbances[:n])


def test_campaign_is_deterministic_and_thread_independent():
    cfg = small_campaign()
    one = dumps_json(run_campaign(cfg).to_dict())
    again = dumps_json(run_campaign(cfg).to_dict())
    assert one == again
    two = dumps_json(run_campaign(cfg, threads=2, chunk=2).to_dict())
    assert one == two


def test_infeasible_schedule_marks_cell_not_run():
    cfg = small_campaign(controllers=("drmpc",), cells=((0.5, 0.5),), zeta_mode=CORRECTED)
    s = run_campaign(cfg).results[0].summary()
    assert s["status"] == "not-run" and s["violation_pct"] is None


def test_campaign_validation():
    with pytest.raises(DomainError):
        small_campaign(trials=0)
    with pytest.raises(DomainError):
        small_campaign(perturbation="sideways")
    with pytest.raises(DomainError):
        small_campaign(x0_low=np.array([1.0, 1.0]), x0_high=np.array([0.0, 0.0]))


def _doc(values):
    return {"cells": [{"epsilon": e, "alpha": a, "controller": c, "violation_pct": v}
                      for (e, a, c), v in values.items()]}


def reference_like():
    vals = {}
    for e, a in ((0.2, 0.15), (0.5, 0.5), (0.9, 0.8)):
        vals[(e, a, "smpc")] = 24.3 if (e, a) == (0.9, 0.8) else 5.0
        vals[(e, a, "cvar_mpc")] = 3.0
        vals[(e, a, "drmpc")] = 0.0
        vals[(e, a, "tight_drmpc")] = 0.0
    return _doc(vals)


def test_compare_identical_report_passes():
    ref = reference_like()
    out = compare_report(ref, ref)
    assert out["all_pass"]
    assert all(r["delta"] == 0 for r in out["rows"])
    assert "PASS" in markdown_table(out)


def test_compare_detects_failures():
    ref = reference_like()
    bad = json.loads(json.dumps(ref))
    for c in bad["cells"]:
        if c["controller"] == "drmpc" and c["epsilon"] == 0.5:
            c["violation_pct"] = 4.0
    out = compare_report(bad, ref)
    failed = {c["name"] for c in out["checks"] if not c["pass"]}
    assert failed == {"order eps=0.5 alpha=0.5", "zero drmpc eps=0.5 alpha=0.5"}
    with pytest.raises(ReportError):
        compare_report({"cells": []}, ref)
