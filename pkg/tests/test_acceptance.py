"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import time

import numpy as np
import pytest

from vessel_empc import kernels
from vessel_empc.bezier import (CUBIC_TO_QUAD_E, CUBIC_TO_QUAD_F, QUARTIC_TO_CUBIC_E, QUARTIC_TO_CUBIC_F,
                                BezierCurve, angle_between, cubic_to_quadratics, evaluate, opt_quad1, quad_kmax,
                                quartic_to_cubics, start_tangent)
from vessel_empc.empc import dynamics_defects, motion_margins
from vessel_empc.env_graph import accel_cost, jerk_cost, obstacle_arrays, plan_path
from vessel_empc.errors import Disconnected
from vessel_empc.harness import bundled_scenario, export, load_scenario, run, scenario_from_dict, sweep_kec
from vessel_empc.smoothing import SmoothingContext, max_join_mismatch, min_clearance_sampled, smooth
from vessel_empc.vessel import VesselParams, integrate

from test_empc import _fd, _random_nlp, _rel
from test_env_graph import accel_oracle, jerk_oracle
from test_smoothing import _random_scene
from test_vessel import _fine, _rk4_unwrapped

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return _report


@pytest.fixture(scope="module")
def benchmark():
    return load_scenario(bundled_scenario("benchmark"))


@pytest.fixture(scope="module")
def sweep(benchmark):
    t0 = time.perf_counter()
    rows, logs = sweep_kec(benchmark, [0.0, 0.3, 0.6])
    return rows, logs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ambush_log():
    return run(load_scenario(bundled_scenario("ambush")))


def test_criterion_1_energy_trend(sweep, report):
    rows, _, wall = sweep
    e = [r["energy"] for r in rows]
    dev = [r["mean_ref_dev"] for r in rows]
    ok = e[0] > e[1] > e[2] and dev[0] <= dev[1] <= dev[2] and wall <= 600.0
    report(1, ok, f"energy {[round(v, 2) for v in e]} J, mean deviation {[round(v, 4) for v in dev]} m, "
                  f"{wall:.0f} s wall")


def test_criterion_2_cost_oracles(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p0, pf, v0, a0, vf = rng.normal(size=(5, 2))
        T = rng.uniform(0.5, 20.0)
        worst = max(worst, abs(jerk_cost(p0, pf, v0, a0, vf, T) / jerk_oracle(p0, pf, v0, a0, vf, T) - 1),
                    abs(accel_cost(p0, pf, v0, vf, T) / accel_oracle(p0, pf, v0, vf, T) - 1))
    z = np.zeros(2)
    j1 = jerk_cost(z, [1.0, 0.0], z, z, z, 1.0)
    a1 = accel_cost(z, [1.0, 0.0], z, z, 1.0)
    ok = worst <= 1e-6 and j1 == pytest.approx(320.0, rel=1e-12) and a1 == pytest.approx(12.0, rel=1e-12)
    report(2, ok, f"max relative error {worst:.2e}, unit cases {j1:.12g} / {a1:.12g}")


def test_criterion_3_degree_reduction(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        for n, split in ((4, cubic_to_quadratics), (5, quartic_to_cubics)):
            P = rng.uniform(-10, 10, size=(n, 2))
            E, F = split(P)
            mid = evaluate(BezierCurve(P), 0.5)
            worst = max(worst, np.abs(E.points[-1] - F.points[0]).max(), np.abs(E.points[-1] - mid).max())
    rows = max(np.abs(M.sum(axis=1) - 1).max() for M in (CUBIC_TO_QUAD_E, CUBIC_TO_QUAD_F,
                                                          QUARTIC_TO_CUBIC_E, QUARTIC_TO_CUBIC_F))
    ok = worst <= 1e-12 and rows <= 1e-15
    report(3, ok, f"max |E(1)-F(0)|, |E(1)-D(0.5)| = {worst:.1e}, row-sum error {rows:.1e}")


def test_criterion_4_opt_quad1(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        alpha, beta, phi = rng.uniform(0.2, 3.0), rng.uniform(0.2, 6.0), rng.uniform(0.05, np.pi - 0.05)
        p0, p1 = np.array([-alpha, 0.0]), np.zeros(2)
        d = np.array([np.cos(phi), np.sin(phi)])
        Ls = np.linspace(beta / 1e4, beta, 10000)
        Q = np.stack([np.broadcast_to(p0, Ls.shape + (2,)), np.broadcast_to(p1, Ls.shape + (2,)), Ls[:, None] * d], 1)
        L_brute = Ls[np.argmin(quad_kmax(Q))]
        L = np.hypot(*opt_quad1(p0, p1, beta * d))
        # brute-force grid spacing beta / 1e4 is added to the allowance
        worst = max(worst, (abs(L - L_brute) - beta / 1e4) / alpha)
    folds = []
    for alpha, beta in ((1.0, 4.0), (1.0, 1.5), (2.0, 3.0)):
        L = np.hypot(*opt_quad1([-alpha, 0.0], [0.0, 0.0], [-beta, 0.0]))
        folds.append(L == min(beta, 2 * alpha))
    ok = worst <= 1e-3 and all(folds)
    report(4, ok, f"max |L - L_brute| / alpha = {max(worst, 0.0):.2e}, fold-back exact {all(folds)}")


def test_criterion_5_smoothing(report):
    rng = np.random.default_rng(0)
    done, g1, clear, tang = 0, 0.0, np.inf, 0.0
    while done < 20:
        env = _random_scene(rng)
        try:
            pp = plan_path(env, np.array([0, 0, np.pi / 2, 0.2, 0, 0]), 15.0, 0.2)
        except Disconnected:
            continue
        C, R = obstacle_arrays(env.obstacles)
        pw = smooth(SmoothingContext(pp.points, np.array([0.0, 0.2]), C, R, 0.77, 0.2, env.bounds,
                                     pp.start_cell, pp.shared_edge))
        g1 = max(g1, max_join_mismatch(pw))
        clear = min(clear, min_clearance_sampled(pw, C, R + 0.77, per_curve=1000))
        tang = max(tang, angle_between(start_tangent(pw.curves[0]), np.array([0.0, 1.0])))
        done += 1
    ok = g1 <= 1e-6 and clear >= -1e-3 and tang <= 1e-6
    report(5, ok, f"20 scenes: G1 mismatch {g1:.1e} rad, clearance margin {clear:.3f} m, start angle {tang:.1e} rad")


def test_criterion_6_nlp(sweep, report):
    rng = np.random.default_rng(6)
    grad = 0.0
    for _ in range(50):
        nlp, z = _random_nlp(rng, T_p=1.0)
        grad = max(grad, _rel(nlp.gradient(z), _fd(nlp.objective, z)[0]),
                   _rel(nlp.eq_jacobian(z), _fd(nlp.eq_constraints, z)),
                   _rel(nlp.ineq_jacobian(z), _fd(nlp.ineq_constraints, z)))
    sc = load_scenario(bundled_scenario("benchmark"))
    env, params, cfg = sc.build_environment(), sc.params(), sc.empc_config()
    defect = box = 0.0
    margin = np.inf
    n = 0
    for log in sweep[1]:
        for _, m in log.plans:
            if m.obstacle_ids is None:
                continue
            C, R = obstacle_arrays([env.obstacles[i] for i in m.obstacle_ids])
            defect = max(defect, float(np.abs(dynamics_defects(m, params)).max()))
            box = max(box, float(np.max(np.abs(m.states[:, 6:8]) - params.tau_lim)),
                      float(np.max(np.abs(m.rates) - params.rate_lim)))
            margin = min(margin, motion_margins(m, C, R, cfg))
            n += 1
    ok = grad <= 1e-4 and defect <= 1e-5 and box <= 1e-6 and margin >= -1e-5 and n > 0
    report(6, ok, f"FD relative error {grad:.1e} at 50 points; {n} benchmark plans: defect {defect:.1e}, "
                  f"box excess {max(box, 0.0):.1e}, margin {margin:.2e} m^2")


def test_criterion_7_closed_loop_safety(sweep, ambush_log, report):
    logs = [sweep[1][0], ambush_log]
    margins = [lg.totals()["min_margin"] for lg in logs]
    codes = [lg.exit_code for lg in logs]
    sc = load_scenario(bundled_scenario("ambush"))
    late = [i for i, o in enumerate(sc.environment.obstacles) if o.appear_at > 0]
    revealed = any(set(late) <= set(m.obstacle_ids or ()) for _, m in ambush_log.plans)
    ok = all(m >= -1e-3 for m in margins) and codes == [0, 0] and revealed
    report(7, ok, f"benchmark/ambush min margin {[round(m, 3) for m in margins]} m, exit codes {codes}")


def test_criterion_8_timing_and_causality(sweep, report):
    cyc = sweep[1][0].cycles
    steps = {b.t_s - a.t_s for a, b in zip(cyc, cyc[1:])}
    spliced = {c.spliced for c in cyc}
    base = {"environment": {"start": [0.0, 0.0], "goal": [0.0, 25.0]},
            "initial_state": [0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0], "empc": {"R_delta": [5.0, 5.0]}}
    late = dict(base, environment={"start": [0.0, 0.0], "goal": [0.0, 25.0],
                                   "obstacles": [{"center": [0.3, 14.0], "appear_at": 15.2}]})
    a, b = (dict(run(scenario_from_dict(d), timeout=34.0).plans) for d in (base, late))
    causal = all(np.array_equal(a[k].states, b[k].states) for k in (0, 1)) and not np.array_equal(a[2].states,
                                                                                                  b[2].states)
    ok = steps == {15.0} and spliced == {25.0} and causal
    report(8, ok, f"t_s steps {sorted(steps)} s, spliced lengths {sorted(spliced)} s, late obstacle ignored {causal}")


def test_criterion_9_dynamics(report):
    p = VesselParams()
    a = np.array([0, 0, 0, 0, 0, 0, 29.23, 0.0])
    for _ in range(600):
        a = integrate(a, np.zeros(2), 0.2, p)
    a0 = np.array([0.0, 0.0, 0.3, 0.8, 0.1, 0.2, 20.0, 3.0])
    cr = np.array([1.5, -0.6])
    ref = _fine(a0, cr, 4.0)
    errs = [np.linalg.norm(_rk4_unwrapped(a0, cr, 4.0, n) - ref) for n in (10, 20, 40, 80)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = abs(a[3] - 1.0) <= 1e-3 and orders.min() >= 3.8
    backend = "numba" if kernels.USE_NUMBA else "numpy"
    report(9, ok, f"u(120 s) = {a[3]:.6f} m/s, RK4 orders {np.round(orders, 3).tolist()} ({backend} kernels)")


def test_criterion_10_determinism(ambush_log, tmp_path, report):
    export(ambush_log, tmp_path / "a")
    export(run(load_scenario(bundled_scenario("ambush"))), tmp_path / "b")
    names = ("trajectory.csv", "cycles.csv", "plans.csv", "summary.json", "trajectory.svg", "tracking_error.svg",
             "power.svg")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    report(10, all(same), f"{sum(same)}/{len(same)} exported files byte-identical across two ambush runs")
