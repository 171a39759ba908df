import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy.integrate import trapezoid

from vessel_empc import cli
from vessel_empc.errors import ParseError, ScenarioValidationError
from vessel_empc.harness import (STEP_FIELDS, RunLog, Scenario, bundled_scenario, export, load_scenario, run,
                                 save_scenario, scenario_from_dict, summary_from_dir, sweep_kec,
                                 totals_from_steps)

NORTH = [0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0]


def _straight(length=10.0, **extra):
    d = {"name": "straight", "environment": {"start": [0.0, 0.0], "goal": [0.0, length]},
         "initial_state": NORTH, "empc": {"R_delta": [5.0, 5.0]}}
    d.update(extra)
    return scenario_from_dict(d)


@pytest.fixture(scope="module")
def straight_log():
    return run(_straight())


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

def test_minimal_file_gets_field_defaults(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("environment:\n  start: [0, 0]\n  goal: [5, 60]\n")
    sc = load_scenario(p)
    assert sc.empc.T_p == 20.0 and sc.speed.U_d == 0.2 and sc.sensor_range == 15.0
    assert sc.empc.R_delta == (500.0, 500.0) and sc.empc.Q == (10.0, 10.0, 20.0, 1.0, 1.0, 1.0)
    assert sc.schedule.T_d == 13.0 and sc.schedule.T_c == 2.0
    assert sc.tracker.horizon == 5.0 and sc.k_c == 0.95 and sc.timeout == 600.0
    np.testing.assert_allclose(sc.initial_aug_state(), [0, 0, np.arctan2(60, 5), 0, 0, 0, 0, 0])


def test_negative_radius_names_obstacle_index():
    d = {"environment": {"start": [0, 0], "goal": [0, 10],
                         "obstacles": [{"center": [5, 5]}, {"center": [-5, 5], "radius": -0.1}]}}
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(d)
    assert exc.value.path == "environment.obstacles.1.radius"


def test_unknown_key_rejected():
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict({"environment": {"start": [0, 0], "goal": [0, 10]}, "empc": {"Rdelta": [1, 1]}})
    assert exc.value.path == "empc.Rdelta"


@pytest.mark.parametrize("patch, path", [
    ({"vessel": {"X_lim": 0.0}}, "vessel.X_lim"),
    ({"schedule": {"T_d": 19.0}}, ""),
    ({"environment": {"start": [0, 0], "goal": [0, 10], "obstacles": [{"center": [0, 0.5]}]}}, ""),
])
def test_inconsistent_scenarios_rejected(patch, path):
    d = {"environment": {"start": [0, 0], "goal": [0, 10]}}
    d.update(patch)
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(d)
    assert exc.value.path == path


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("environment: [unclosed\n")
    with pytest.raises(ParseError):
        load_scenario(p)
    p.write_text("- just\n- a list\n")
    with pytest.raises(ParseError):
        load_scenario(p)


@pytest.mark.parametrize("name", ["benchmark", "ambush"])
def test_round_trip_is_identity(tmp_path, name):
    sc = load_scenario(bundled_scenario(name))
    save_scenario(sc, tmp_path / "s.yaml")
    again = load_scenario(tmp_path / "s.yaml")
    assert again == sc
    save_scenario(again, tmp_path / "t.yaml")
    assert (tmp_path / "s.yaml").read_bytes() == (tmp_path / "t.yaml").read_bytes()


def test_default_bounds_cover_everything():
    sc = _straight()
    x0, y0, x1, y1 = sc.bounds()
    assert x0 < 0 < x1 and y0 < 0 and y1 > 10


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------

def test_straight_run_passes(straight_log):
    log = straight_log
    assert log.status == "pass" and log.exit_code == 0
    tot = log.totals()
    assert tot["energy"] > 0
    end = log.steps[-1]
    assert np.hypot(end[1], end[2] - 10.0) <= 0.5 and np.hypot(end[4], end[5]) < 0.05
    assert log.steps.shape[1] == len(STEP_FIELDS)
    assert log.tracker_failures == 0


def test_energy_is_trapezoid_of_power(straight_log):
    t, p = straight_log.column("t"), straight_log.column("power")
    assert np.all(p >= 0)
    np.testing.assert_allclose(straight_log.totals()["energy"], trapezoid(p, t), rtol=1e-12)


def test_cycle_timeline_in_log(straight_log):
    cyc = straight_log.cycles
    assert len(cyc) >= 3
    for a, b in zip(cyc, cyc[1:]):
        assert b.t_s - a.t_s == 15.0
    assert all(c.spliced == 25.0 for c in cyc)


def test_commands_respect_limits(straight_log):
    cmd = straight_log.steps[:, [STEP_FIELDS.index("X_cmd"), STEP_FIELDS.index("N_cmd")]]
    tau = straight_log.steps[:, [STEP_FIELDS.index("X"), STEP_FIELDS.index("N")]]
    assert np.all(np.abs(cmd) <= [39.2, 10.84])
    assert np.all(np.abs(np.diff(tau, axis=0)) <= np.array([4.9, 1.35]) * 0.2 + 1e-9)


def test_timeout_status():
    log = run(_straight(), timeout=10.0)
    assert log.status == "timeout" and log.exit_code == 3
    assert log.steps[-1, 0] == 10.0


def test_exit_codes():
    log = RunLog("x", 0.0, np.zeros((1, len(STEP_FIELDS))), [])
    for status, code in (("pass", 0), ("timeout", 3), ("collision", 4)):
        log.status = status
        assert log.exit_code == code


def test_late_obstacle_does_not_change_committed_plans():
    # detection for cycle 1 happens at t = 15.0; the blocker exists only from 15.2 on
    base = {"environment": {"start": [0.0, 0.0], "goal": [0.0, 25.0]}}
    blocked = {"environment": {"start": [0.0, 0.0], "goal": [0.0, 25.0],
                               "obstacles": [{"center": [0.3, 14.0], "appear_at": 15.2}]}}
    logs = [run(_straight(**d), timeout=34.0) for d in (base, blocked)]
    plans = [dict((k, m) for k, m in log.plans) for log in logs]
    for k in (0, 1):
        np.testing.assert_array_equal(plans[0][k].states, plans[1][k].states)
    assert logs[1].cycles[2].n_known == 1
    assert not np.array_equal(plans[0][2].states, plans[1][2].states)


def test_sweep_rows():
    sc = _straight(6.0)
    rows, logs = sweep_kec(sc, [0.3, 0.3], timeout=60.0)
    assert rows[0] == rows[1]
    np.testing.assert_array_equal(logs[0].steps, logs[1].steps)
    with pytest.raises(ValueError):
        sweep_kec(sc, [0.0])


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def test_export_reimport_totals(tmp_path, straight_log):
    export(straight_log, tmp_path)
    again = summary_from_dir(tmp_path)
    for k, v in straight_log.totals().items():
        assert again[k] == pytest.approx(v, rel=1e-9, abs=1e-12)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "pass" and summary["cycles"] == len(straight_log.cycles)
    assert summary["min_margin"] is None


def test_svg_structure(tmp_path, straight_log):
    export(straight_log, tmp_path, _straight().build_environment())
    ns = "{http://www.w3.org/2000/svg}"
    for name in ("trajectory.svg", "tracking_error.svg", "power.svg"):
        assert (tmp_path / name).stat().st_size > 0
        ET.parse(tmp_path / name)
    root = ET.parse(tmp_path / "trajectory.svg").getroot()
    classes = [e.get("class") for e in root.iter(f"{ns}polyline")]
    assert classes.count("plan") == len(straight_log.cycles)
    assert classes.count("reference") == 1 and classes.count("executed") == 1


def test_runs_are_byte_identical(tmp_path, straight_log):
    export(straight_log, tmp_path / "a")
    export(run(_straight()), tmp_path / "b")
    for name in ("trajectory.csv", "cycles.csv", "plans.csv", "summary.json", "trajectory.svg", "power.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_totals_handle_single_step():
    steps = np.zeros((1, len(STEP_FIELDS)))
    tot = totals_from_steps(steps)
    assert tot["energy"] == 0.0 and tot["duration"] == 0.0


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

def _write(tmp_path, sc):
    p = tmp_path / "sc.yaml"
    save_scenario(sc, p)
    return str(p)


def test_cli_validate(tmp_path, capsys):
    assert cli.main(["validate", "--scenario", "benchmark"]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("environment: {start: [0, 0], goal: [0, 10], extra: 1}\n")
    assert cli.main(["validate", "--scenario", str(bad)]) == 2
    assert "environment.extra" in capsys.readouterr().err
    assert cli.main(["validate", "--scenario", str(tmp_path / "missing.yaml")]) == 2


def test_cli_run_and_timeout(tmp_path):
    p = _write(tmp_path, _straight())
    assert cli.main(["run", "--scenario", p, "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "trajectory.svg").exists()
    assert cli.main(["run", "--scenario", p, "--out", str(tmp_path / "t"), "--timeout", "8"]) == 3


def test_cli_plan(tmp_path):
    p = _write(tmp_path, load_scenario(bundled_scenario("ambush")))
    assert cli.main(["plan", "--scenario", p, "--out", str(tmp_path / "plan")]) == 0
    for name in ("roadmap.csv", "waypoints.csv", "control_points.csv", "reference.csv", "plan.svg"):
        assert (tmp_path / "plan" / name).stat().st_size > 0
    ET.parse(tmp_path / "plan" / "plan.svg")


def test_cli_sweep(tmp_path):
    p = _write(tmp_path, _straight(4.0))
    assert cli.main(["sweep", "--scenario", p, "--out", str(tmp_path / "sw"), "--kec", "0,0.6"]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("k_ec,energy")
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--scenario", p, "--kec", "a,b"])


def test_scenario_model_is_frozen_schema():
    assert Scenario.model_config["extra"] == "forbid"
