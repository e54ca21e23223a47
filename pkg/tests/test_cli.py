import json
from pathlib import Path

import pytest

from tvdmpc.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, OUT_ENV, main
from tvdmpc.config import load_config, parse_config_text
from tvdmpc.errors import ConfigError
from tvdmpc.io import read_trajectory

from conftest import CONFIGS


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    assert main(["run", "--config", str(CONFIGS / "smoke.json"), "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_report_timing_and_trajectories(smoke_run):
    report = json.loads((smoke_run / "report.json").read_text())
    assert report["kind"] == "tvdmpc-simulation-report" and report["format_version"] == 1
    assert {c["controller"] for c in report["cells"]} == {"smpc", "cvar_mpc", "drmpc", "tight_drmpc"}
    for ctrl in ("smpc", "cvar_mpc", "drmpc", "tight_drmpc"):
        files = sorted((smoke_run / "trajectories" / "e0.5_a0.5" / ctrl).glob("*.csv"))
        assert [f.name for f in files] == ["trial_0000.csv", "trial_0001.csv"]
        states, header = read_trajectory(files[0])
        assert header[0] == "step" and states.shape[1] == 2
    timing = json.loads((smoke_run / "timing.json").read_text())
    assert set(timing["controllers"]) == {"smpc", "cvar_mpc", "drmpc", "tight_drmpc"}
    assert "solve_time" not in (smoke_run / "report.json").read_text()


def test_run_is_byte_deterministic(smoke_run, tmp_path):
    assert main(["run", "--config", str(CONFIGS / "smoke.json"), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "report.json").read_bytes() == (smoke_run / "report.json").read_bytes()


def test_seed_override_changes_worlds(smoke_run, tmp_path):
    assert main(["run", "--config", str(CONFIGS / "smoke.json"), "--out", str(tmp_path), "--seed", "99"]) == 0
    a = json.loads((smoke_run / "report.json").read_text())
    b = json.loads((tmp_path / "report.json").read_text())
    assert b["seed"] == 99
    assert a["cells"][0]["trial_records"][0]["x0"] != b["cells"][0]["trial_records"][0]["x0"]


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert main(["tighten", "--config", str(CONFIGS / "smoke.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "envout" / "schedules.json").read_text())
    cell = doc["cells"][0]
    assert cell["zeta_corrected"] == pytest.approx([0.5] * 3)
    assert not cell["corrected_feasible"] and cell["paper_literal_feasible"]
    assert cell["schedule"]["zeta_mode"] == "paper-literal"


def test_tighten_corrected_mode_reports_infeasible(tmp_path):
    assert main(["tighten", "--config", str(CONFIGS / "smoke.json"), "--out", str(tmp_path),
                 "--zeta-mode", "corrected"]) == EXIT_OK
    cell = json.loads((tmp_path / "schedules.json").read_text())["cells"][0]
    assert cell["infeasible"] and "epsilon" in cell["reason"]


def test_compare_and_report(smoke_run, tmp_path, capsys):
    code = main(["compare", str(smoke_run / "report.json"), "--out", str(tmp_path)])
    # the smoke grid lacks most reference cells
    assert code == EXIT_CONFIG
    ref = {"format_version": 1, "kind": "tvdmpc-reference-table",
           "cells": [{"epsilon": 0.5, "alpha": 0.5, "controller": c, "violation_pct": 0.0}
                     for c in ("smpc", "cvar_mpc", "drmpc", "tight_drmpc")]}
    (tmp_path / "ref.json").write_text(json.dumps(ref))
    code = main(["compare", str(smoke_run / "report.json"), "--reference", str(tmp_path / "ref.json"),
                 "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_ACCEPTANCE)
    assert (tmp_path / "comparison.md").exists() and (tmp_path / "comparison.json").exists()
    assert main(["report", str(smoke_run / "report.json"), "--out", str(tmp_path / "plot")]) == EXIT_OK
    assert (tmp_path / "plot" / "violations.csv").exists()
    boundary = (tmp_path / "plot" / "boundary.csv").read_text().splitlines()
    assert len(boundary) == 2 + 8  # comment, header, two points per facet of the box
    overlay = (tmp_path / "plot" / "overlay_e0.5_a0.5.csv").read_text().splitlines()
    assert len(overlay) > 2


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1,\n "system": [}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "bad.json:2:" in capsys.readouterr().err
    doc = json.loads((CONFIGS / "smoke.json").read_text())
    doc["horizon"] = 0
    bad.write_text(json.dumps(doc))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "horizon" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["run", "--config", str(CONFIGS / "smoke.json"), "--seed", "-1"]) == EXIT_CONFIG


def test_report_on_missing_file_exits_2(tmp_path):
    assert main(["report", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_config_cross_checks():
    doc = json.loads((CONFIGS / "smoke.json").read_text())
    doc["disturbance"]["probs"] = [0.5, 0.5]
    with pytest.raises(ConfigError, match="atoms"):
        from tvdmpc.config import build_run_config
        build_run_config(parse_config_text(json.dumps(doc)))
    doc = json.loads((CONFIGS / "smoke.json").read_text())
    doc["surprise"] = 1
    with pytest.raises(ConfigError, match="surprise"):
        parse_config_text(json.dumps(doc))


def test_bundled_configs_load():
    for path in Path(CONFIGS).glob("*.json"):
        rc = load_config(path)
        assert rc.spec.sys.n_x == 2
