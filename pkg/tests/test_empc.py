import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vessel_empc.bezier import BezierCurve, PiecewiseBezier
from vessel_empc.empc import (
    EmpcConfig,
    PlannedMotion,
    PlanningProblem,
    collision_margin,
    dynamics_defects,
    economic_cost,
    motion_margins,
    plan,
    solve,
    state_error,
    terminal_cost,
    tracking_cost,
    transcribe,
)
from vessel_empc.errors import DimensionMismatch, SolveFailure
from vessel_empc.trajectory import SpeedProfile, generate_reference
from vessel_empc.vessel import VesselParams, thrust_join

PARAMS = VesselParams()
Q = np.array([10.0, 10.0, 20.0, 1.0, 1.0, 1.0])
finite = st.floats(-50, 50, allow_nan=False)


# cost terms ----------------------------------------------------------------

def test_economic_zero_thrust():
    assert economic_cost(0.0, 0.0, 0.28, 0.6) == 0.0


def test_economic_single_propeller_example():
    X, N = thrust_join(10.0, 0.0, 0.28)
    assert economic_cost(X, N, 0.28, 0.6, 0.0) == pytest.approx(18.9737, abs=1e-4)


def test_economic_smoothing_limit():
    X, N = thrust_join(3.0, -7.0, 0.28)
    exact = 0.6 * (3.0 ** 1.5 + 7.0 ** 1.5)
    assert economic_cost(X, N, 0.28, 0.6, 1e-10) == pytest.approx(exact, abs=1e-7)
    assert abs(economic_cost(X, N, 0.28, 0.6, 1e-4) - exact) < 2e-3


@given(finite, finite, st.floats(0, 2))
def test_economic_mirror_symmetry(X, N, k):
    assert economic_cost(X, N, 0.28, k) == pytest.approx(economic_cost(X, -N, 0.28, k), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("eps", [0.0, 1e-4, 1.0])
def test_economic_convex_on_grid(eps):
    # Hessian in (F_l, F_r) is diagonal: phi'' >= 0 checked by second differences
    F = np.linspace(-40, 40, 401)
    phi = (F * F + eps) ** 0.75 - eps ** 0.75
    assert np.all(phi[:-2] - 2 * phi[1:-1] + phi[2:] >= -1e-9)


def test_tracking_zero_and_wrap():
    s = np.array([1.0, 2.0, -3.1, 0.2, 0.0, 0.1])
    assert tracking_cost(s, s, Q) == 0.0
    sd = s.copy()
    sd[2] = 3.1
    assert tracking_cost(s, sd, Q) == pytest.approx(20 * (2 * np.pi - 6.2) ** 2, rel=1e-12)
    assert tracking_cost(s, sd, Q) == pytest.approx(0.1385, abs=2e-4)


@given(st.lists(finite, min_size=12, max_size=12))
def test_tracking_scales_linearly_in_weight(v):
    s, sd = np.array(v[:6]), np.array(v[6:])
    assert tracking_cost(s, sd, 2 * Q) == pytest.approx(2 * tracking_cost(s, sd, Q), rel=1e-12)


@given(st.lists(finite, min_size=12, max_size=12), st.lists(st.floats(0, 100), min_size=6, max_size=6))
def test_terminal_equals_tracking_with_same_weight(v, P):
    s, sd = np.array(v[:6]), np.array(v[6:])
    assert terminal_cost(s, sd, P) == tracking_cost(s, sd, P)


def test_state_error_wrapped_range():
    e = state_error(np.array([0, 0, np.pi, 0, 0, 0]), np.array([0, 0, -np.pi, 0, 0, 0]))
    assert e[2] == 0.0


def test_collision_margin_examples():
    c = np.array([1.0, 2.0])
    assert collision_margin(c, c, 0.15) == pytest.approx(-0.92 ** 2)
    assert collision_margin(c + [0.92, 0.0], c, 0.15) == pytest.approx(0.0, abs=1e-15)
    assert EmpcConfig().inflation + 0.15 == pytest.approx(0.92)


def test_config_validation():
    with pytest.raises(ValueError):
        EmpcConfig(k_ec=-1.0)
    with pytest.raises(ValueError):
        EmpcConfig(T_p=1.1, dt=0.2)
    with pytest.raises(ValueError):
        EmpcConfig(Q=np.ones((6, 6)))
    assert EmpcConfig().H == 100
    np.testing.assert_array_equal(EmpcConfig(Q=np.diag(Q)).Q, Q)


# transcription ---------------------------------------------------------------

def _straight_ref(t_p, u0=0.2):
    pw = PiecewiseBezier([BezierCurve([[0, 0], [0, 60]])])
    return generate_reference(pw, SpeedProfile(0.2, 5.0, u0), 0.0, t_p, 0.2)


def _cruise_state():
    return np.array([0.0, 0.0, np.pi / 2, 0.2, 0.0, 0.0, PARAMS.D1 * 0.2, 0.0])


def test_transcription_counts_h1():
    cfg = EmpcConfig(T_p=0.2)
    ref = _straight_ref(0.2)
    nlp = transcribe(PlanningProblem(_cruise_state(), ref.samples), cfg)
    assert nlp.n == 10
    assert nlp.n_defects == 8
    assert nlp.m_ineq == 8


def test_transcription_dimension_mismatch():
    ref = _straight_ref(1.0)
    with pytest.raises(DimensionMismatch):
        transcribe(PlanningProblem(_cruise_state(), ref.samples), EmpcConfig(T_p=2.0))
    with pytest.raises(DimensionMismatch):
        PlanningProblem(_cruise_state(), np.zeros((5, 4)))


def _random_nlp(rng, k_ec=0.6, T_p=2.0):
    cfg = EmpcConfig(T_p=T_p, k_ec=k_ec)
    ref = _straight_ref(T_p)
    centers = rng.uniform([-2, 0], [2, 2], size=(3, 2))
    prob = PlanningProblem(_cruise_state(), ref.samples, centers, np.full(3, 0.15))
    nlp = transcribe(prob, cfg)
    X = np.zeros((nlp.H + 1, 8))
    X[:, :6] = ref.samples
    X += rng.normal(scale=[0.3, 0.3, 0.5, 0.1, 0.05, 0.1, 10.0, 3.0], size=X.shape)
    X[0] = prob.a0
    W = rng.normal(scale=[2.0, 0.5], size=(nlp.H, 2))
    return nlp, nlp.pack(X, W)


def _fd(fun, z, h=1e-6):
    cols = []
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = h
        cols.append((np.atleast_1d(fun(z + e)) - np.atleast_1d(fun(z - e))) / (2 * h))
    return np.array(cols).T


def _rel(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    nlp, z = _random_nlp(np.random.default_rng(seed))
    assert _rel(nlp.gradient(z), _fd(nlp.objective, z)[0]) <= 1e-4
    assert _rel(nlp.eq_jacobian(z), _fd(nlp.eq_constraints, z)) <= 1e-4
    assert _rel(nlp.ineq_jacobian(z), _fd(nlp.ineq_constraints, z)) <= 1e-4


def test_hessian_blocks_match_finite_differences():
    nlp, z = _random_nlp(np.random.default_rng(9))
    hess = nlp.evaluate(z).hess
    Hfd = _fd(nlp.gradient, z, 1e-5)
    for k in range(nlp.H):
        s = slice(10 * k, 10 * (k + 1))
        assert _rel(hess[k], Hfd[s, s]) <= 1e-4


def test_objective_on_steady_straight_run_is_regularizer_only():
    cfg = EmpcConfig(T_p=4.0)
    ref = _straight_ref(4.0)
    prob = PlanningProblem(_cruise_state(), ref.samples)
    nlp = transcribe(prob, cfg)
    X = np.zeros((nlp.H + 1, 8))
    X[:, :6] = ref.samples
    X[:, 6] = PARAMS.D1 * 0.2
    z = nlp.pack(X, np.zeros((nlp.H, 2)))
    expected = cfg.T_p * cfg.R_u[0] * (PARAMS.D1 * 0.2) ** 2
    assert nlp.objective(z) == pytest.approx(expected, rel=1e-9)
    assert np.abs(nlp.eq_constraints(z)).max() <= 1e-9


# planning ------------------------------------------------------------------

def _check_motion(m, prob, cfg):
    assert np.abs(dynamics_defects(m, prob.params)).max() <= 1e-5
    assert np.all(np.abs(m.states[:, 6:8]) <= PARAMS.tau_lim + 1e-6)
    assert np.all(np.abs(m.rates) <= PARAMS.rate_lim + 1e-6)
    assert motion_margins(m, prob.centers, prob.radii, cfg) >= -1e-5


def test_straight_line_tracking():
    cfg = EmpcConfig()
    ref = _straight_ref(cfg.T_p)
    prob = PlanningProblem(_cruise_state(), ref.samples)
    m = plan(prob, cfg)
    _check_motion(m, prob, cfg)
    err = np.linalg.norm(state_error(m.states[:, :6], ref.samples), axis=1)
    assert err.max() <= 0.05
    assert np.hypot(*(m.states[:, :2] - ref.samples[:, :2]).T).max() <= 0.1


def test_warm_restart_converges_fast():
    cfg = EmpcConfig()
    ref = _straight_ref(cfg.T_p)
    prob = PlanningProblem(_cruise_state(), ref.samples, np.array([[-0.6, 3.0]]), np.array([0.15]))
    m = plan(prob, cfg)
    m2 = plan(prob, cfg, warm_start=m)
    assert m2.iterations <= 3
    np.testing.assert_allclose(m2.states, m.states, atol=1e-4)


@pytest.mark.parametrize("cx", [0.0, 0.3, -0.5])
def test_obstacle_on_reference_is_avoided(cx):
    cfg = EmpcConfig()
    ref = _straight_ref(cfg.T_p)
    prob = PlanningProblem(_cruise_state(), ref.samples, np.array([[cx, 2.0]]), np.array([0.15]))
    m = plan(prob, cfg)
    _check_motion(m, prob, cfg)
    assert m.converged


def test_energy_weight_trades_tracking_for_thrust():
    ref = _straight_ref(20.0)
    prob = PlanningProblem(_cruise_state(), ref.samples)
    dev, power = [], []
    for k in (0.0, 0.3, 0.6):
        m = plan(prob, EmpcConfig(k_ec=k))
        dev.append(np.hypot(*(m.states[:, :2] - ref.samples[:, :2]).T).mean())
        power.append(economic_cost(m.states[:, 6], m.states[:, 7], PARAMS.d, 1.0, 0.0).sum())
    assert dev[0] <= dev[1] <= dev[2]
    assert power[0] >= power[1] >= power[2]


def test_iteration_cap_zero_raises():
    cfg = EmpcConfig(max_iter=0)
    ref = _straight_ref(cfg.T_p)
    prob = PlanningProblem(_cruise_state(), ref.samples, np.array([[0.3, 2.0]]), np.array([0.15]))
    with pytest.raises(SolveFailure) as exc:
        plan(prob, cfg)
    assert exc.value.reason == "MaxIterations"
    assert isinstance(exc.value.best, PlannedMotion)


def test_solve_accepts_reference_trajectory():
    cfg = EmpcConfig(T_p=4.0)
    ref = _straight_ref(10.0)
    prob = PlanningProblem(_cruise_state(), ref, t_start=0.0)
    nlp = transcribe(prob, cfg)
    np.testing.assert_array_equal(nlp.ref, ref.samples[:21])
    X = np.zeros((21, 8))
    X[:, :6] = ref.samples[:21]
    X[0] = prob.a0
    m = solve(nlp, nlp.pack(X, np.zeros((20, 2))), cfg)
    assert m.H == 20 and m.t_end == pytest.approx(4.0)


# planned motions -------------------------------------------------------------

def _toy_motion():
    cfg = EmpcConfig(T_p=2.0)
    prob = PlanningProblem(_cruise_state(), _straight_ref(2.0).samples, t_start=4.0)
    return plan(prob, cfg), prob


def test_motion_time_queries():
    m, _ = _toy_motion()
    assert m.t_end == pytest.approx(6.0)
    np.testing.assert_array_equal(m.state_at(4.4), m.states[2])
    with pytest.raises(ValueError):
        m.state_at(4.1)
    seg = m.segment(4.4, 5.0)
    assert seg.H == 3 and seg.t_start == pytest.approx(4.4)


def test_shifted_motion_extends_with_zero_rates():
    m, _ = _toy_motion()
    s = m.shifted(5.0, 10, PARAMS)
    assert s.H == 10
    np.testing.assert_array_equal(s.states[:6], m.states[5:])
    np.testing.assert_array_equal(s.rates[5:], 0.0)
    assert np.abs(dynamics_defects(s, PARAMS)).max() <= 1e-12


def test_motion_csv(tmp_path):
    m, _ = _toy_motion()
    p = tmp_path / "m.csv"
    m.to_csv(p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "x", "y"]
    data = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(data[:, 1:9], m.states)
    np.testing.assert_array_equal(data[:-1, 9:11], m.rates)
