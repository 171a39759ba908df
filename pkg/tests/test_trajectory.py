import csv

import numpy as np
import pytest
from scipy.integrate import quad

from vessel_empc.bezier import BezierCurve, PiecewiseBezier, curvature, derivative, evaluate
from vessel_empc.errors import DegenerateTangent, NonpositiveDuration, ReferenceExpired
from vessel_empc.trajectory import (
    ReferenceTrajectory,
    SpeedProfile,
    generate_reference,
    profile_step,
    reference_state,
)
from vessel_empc.vessel import wrap_angle


def _arc(curve, a=0.0, b=1.0):
    d = derivative(curve)
    return quad(lambda t: np.hypot(*evaluate(d, t)), a, b, limit=200)[0]


def test_profile_validation():
    for kw in ({"U_d": 0.0}, {"T_theta": 0.0}, {"u_d0": -0.1}):
        with pytest.raises(ValueError):
            SpeedProfile(**kw)


def test_lag_fixed_point():
    c = BezierCurve([[0, 0], [10, 0]])
    _, u = profile_step(0.1, 0.2, c, 0.2, 5.0, 0.2)
    assert u == 0.2


def test_lag_matches_analytic():
    c = BezierCurve([[0, 0], [1000, 0]])
    theta, u = 0.0, 0.0
    for k in range(1, 301):
        theta, u = profile_step(theta, u, c, 0.2, 5.0, 0.2)
        assert abs(u - 0.2 * (1 - np.exp(-0.2 * k / 5.0))) <= 1e-6


def test_straight_segment_advance():
    L = 7.0
    c = BezierCurve([[0, 0], [L, 0]])
    theta, _ = profile_step(0.3, 0.2, c, 0.2, 5.0, 0.2)
    assert theta == pytest.approx(0.3 + 0.2 * 0.2 / L, abs=1e-15)


def test_theta_clamps_at_end():
    c = BezierCurve([[0, 0], [1, 0]])
    theta, _ = profile_step(0.99, 0.2, c, 0.2, 5.0, 0.2)
    assert theta == 1.0


def test_reference_state_straight_up():
    ref = reference_state(BezierCurve([[0, 0], [0, 5]]), 0.4, 0.1)
    assert ref[2] == pytest.approx(np.pi / 2)
    assert ref[5] == 0.0
    assert ref[4] == 0.0
    assert ref[3] == pytest.approx(0.5)


def test_reference_state_quadratic_example():
    ref = reference_state(BezierCurve([[1, 0], [1, 1], [0, 1]]), 0.0, 1.0)
    np.testing.assert_allclose(ref, [1, 0, np.pi / 2, 2, 0, 1], atol=1e-15)


def test_reference_rate_is_curvature_times_speed():
    c = BezierCurve([[0, 0], [1, 2], [3, -1], [4, 1]])
    for th in np.linspace(0, 1, 7):
        ref = reference_state(c, th, 0.3)
        assert ref[5] == pytest.approx(curvature(c, th) * ref[3], rel=1e-12)


def test_reference_state_degenerate():
    with pytest.raises(DegenerateTangent):
        reference_state(BezierCurve([[0, 0], [0, 0], [1, 0]]), 0.0, 1.0)


def test_generate_two_samples():
    pw = PiecewiseBezier([BezierCurve([[0, 0], [5, 0]])])
    ref = generate_reference(pw, SpeedProfile(), 3.0, 0.2, 0.2)
    assert len(ref) == 2
    np.testing.assert_allclose(ref.times, [3.0, 3.2])


def test_generate_rejects_nonpositive():
    pw = PiecewiseBezier([BezierCurve([[0, 0], [5, 0]])])
    with pytest.raises(NonpositiveDuration):
        generate_reference(pw, SpeedProfile(), 0.0, 0.0, 0.2)
    with pytest.raises(NonpositiveDuration):
        generate_reference(pw, SpeedProfile(), 0.0, 1.0, -0.2)


def test_straight_line_distance():
    pw = PiecewiseBezier([BezierCurve([[0, 0], [100, 0]])])
    ref = generate_reference(pw, SpeedProfile(0.2, 5.0, 0.2), 0.0, 60.0, 0.2)
    assert ref.samples[-1, 0] == pytest.approx(0.2 * 60.0, rel=1e-3)
    assert np.all(ref.samples[:, 4] == 0.0)


def _wiggle():
    return PiecewiseBezier([
        BezierCurve([[0, 0], [2, 0], [3, 1], [3, 3]]),
        BezierCurve([[3, 3], [3, 5], [4, 6], [6, 6]]),
        BezierCurve([[6, 6], [7, 6], [8, 6]]),
    ])


def test_hold_after_end_and_length_bound():
    pw = _wiggle()
    total = sum(_arc(c) for c in pw.curves)
    dt = 0.2
    ref = generate_reference(pw, SpeedProfile(0.2, 5.0, 0.2), 0.0, 120.0, dt)
    steps = np.hypot(*np.diff(ref.samples[:, :2], axis=0).T)
    assert steps.sum() <= total + 0.2 * dt
    np.testing.assert_allclose(ref.samples[-1, :2], [8, 6], atol=1e-12)
    assert ref.samples[-1, 3] == 0.0 and ref.samples[-1, 5] == 0.0
    assert ref.curve_index[-1] == -1


def test_speed_and_heading_consistency():
    pw = _wiggle()
    dt = 0.2
    ref = generate_reference(pw, SpeedProfile(0.2, 5.0, 0.0), 0.0, 40.0, dt)
    S = ref.samples
    live = ref.curve_index >= 0
    # central differences at interior samples
    v = (S[2:, :2] - S[:-2, :2]) / (2 * dt)
    sp = np.hypot(v[:, 0], v[:, 1])
    mask = live[2:] & live[:-2] & (S[1:-1, 3] > 0.02)
    np.testing.assert_allclose(sp[mask], S[1:-1, 3][mask], rtol=0.02)
    rate = wrap_angle(S[2:, 2] - S[:-2, 2]) / (2 * dt)
    same = (ref.curve_index[2:] == ref.curve_index[:-2]) & mask & (np.abs(S[1:-1, 5]) > 1e-3)
    np.testing.assert_allclose(rate[same], S[1:-1, 5][same], rtol=0.05)


def test_theta_monotone_and_handoff():
    ref = generate_reference(_wiggle(), SpeedProfile(0.2, 5.0, 0.2), 0.0, 120.0, 0.2)
    live = ref.curve_index >= 0
    progress = ref.curve_index[live] + ref.theta[live]
    assert np.all(np.diff(progress) >= 0)
    assert set(ref.curve_index[live]) == {0, 1, 2}


def test_window_and_at():
    ref = generate_reference(_wiggle(), SpeedProfile(0.2, 5.0, 0.2), 10.0, 20.0, 0.2)
    W = ref.window(12.0, 5)
    np.testing.assert_array_equal(W[0], ref.samples[10])
    np.testing.assert_allclose(ref.at(12.0), ref.samples[10])
    mid = ref.at(12.1)
    np.testing.assert_allclose(mid[:2], 0.5 * (ref.samples[10, :2] + ref.samples[11, :2]))
    with pytest.raises(ReferenceExpired):
        ref.at(9.0)
    with pytest.raises(ReferenceExpired):
        ref.window(29.0, 10)


def test_heading_interpolation_across_pi():
    rows = np.zeros((2, 6))
    rows[0, 2] = 3.1
    rows[1, 2] = -3.1
    ref = ReferenceTrajectory(0.0, 1.0, rows)
    assert abs(ref.at(0.5)[2]) == pytest.approx(np.pi, abs=1e-12)


def test_csv_roundtrip(tmp_path):
    ref = generate_reference(_wiggle(), SpeedProfile(), 0.0, 2.0, 0.2)
    p = tmp_path / "ref.csv"
    ref.to_csv(p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x_d", "y_d", "psi_d", "u_d", "v_d", "r_d"]
    data = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(data[:, 1:], ref.samples)
    np.testing.assert_array_equal(data[:, 0], ref.times)


def test_samples_read_only():
    ref = generate_reference(_wiggle(), SpeedProfile(), 0.0, 2.0, 0.2)
    with pytest.raises(ValueError):
        ref.samples[0, 0] = 1.0


def test_resume_matches_uninterrupted_run():
    pw = _wiggle()
    prof = SpeedProfile(0.2, 5.0, 0.2)
    full = generate_reference(pw, prof, 0.0, 40.0, 0.2)
    j = 80
    resumed = generate_reference(pw, SpeedProfile(0.2, 5.0, full.samples[j, 3]), 16.0, 24.0, 0.2,
                                 start=(full.curve_index[j], full.theta[j]))
    np.testing.assert_allclose(resumed.samples, full.samples[j:], atol=1e-9)


def test_resume_rejects_bad_start():
    with pytest.raises(ValueError):
        generate_reference(_wiggle(), SpeedProfile(), 0.0, 1.0, 0.2, start=(5, 0.0))
