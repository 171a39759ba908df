"""Time parameterization of a piecewise Bezier path.

The curve parameter follows ``theta_dot = u_d / |P'(theta)|`` while the
reference surge speed relaxes to the desired speed through a first-order
lag ``T_theta u_d_dot + u_d = U_d``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .bezier import derivative, evaluate
from .errors import DegenerateTangent, NonpositiveDuration, ReferenceExpired
from .vessel import wrap_angle

REF_COLUMNS = ("x_d", "y_d", "psi_d", "u_d", "v_d", "r_d")
_TICK_TOL = 1e-9


@dataclass(frozen=True)
class SpeedProfile:
    """Speed-profile parameters.

    Parameters
    ----------
    U_d : float
        Desired cruise speed (m/s).
    T_theta : float
        Lag time constant (s).
    u_d0 : float
        Initial reference surge speed (m/s).
    """

    U_d: float = 0.2
    T_theta: float = 5.0
    u_d0: float = 0.0

    def __post_init__(self):
        if not self.U_d > 0.0:
            raise ValueError(f"U_d must be > 0, got {self.U_d}")
        if not self.T_theta > 0.0:
            raise ValueError(f"T_theta must be > 0, got {self.T_theta}")
        if not self.u_d0 >= 0.0:
            raise ValueError(f"u_d0 must be >= 0, got {self.u_d0}")


class _CurveDerivs:
    # hodographs cached per curve so the ODE does not rebuild them each stage
    def __init__(self, curve):
        self.curve = curve
        self.d1 = derivative(curve)
        self.d2 = derivative(self.d1)

    def speed(self, theta):
        th = min(max(theta, 0.0), 1.0)
        s = float(np.hypot(*evaluate(self.d1, th)))
        if s <= 1e-9:
            raise DegenerateTangent(f"|P'| vanishes at theta={th}")
        return s


def _rhs(theta, u, cd, U_d, T_theta):
    return u / cd.speed(theta), (U_d - u) / T_theta


def _rk4_raw(theta, u, cd, U_d, T_theta, dt):
    k1 = _rhs(theta, u, cd, U_d, T_theta)
    k2 = _rhs(theta + 0.5 * dt * k1[0], u + 0.5 * dt * k1[1], cd, U_d, T_theta)
    k3 = _rhs(theta + 0.5 * dt * k2[0], u + 0.5 * dt * k2[1], cd, U_d, T_theta)
    k4 = _rhs(theta + dt * k3[0], u + dt * k3[1], cd, U_d, T_theta)
    th = theta + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    un = u + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return th, un


def profile_step(theta, u_d, curve, U_d, T_theta, dt):
    """One RK4 step of the coupled ``(theta, u_d)`` ODE; theta clamped to 1."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta outside [0, 1]: {theta}")
    cd = curve if isinstance(curve, _CurveDerivs) else _CurveDerivs(curve)
    th, un = _rk4_raw(theta, u_d, cd, U_d, T_theta, dt)
    return min(th, 1.0), un


def reference_state(curve, theta, theta_dot):
    """Reference ``[x, y, psi, u, 0, r]`` at ``theta`` moving at ``theta_dot``.

    ``u = |P'| theta_dot`` and ``r = (x'y'' - y'x'') / |P'|^2 * theta_dot``.
    """
    cd = curve if isinstance(curve, _CurveDerivs) else _CurveDerivs(curve)
    p = evaluate(cd.curve, theta)
    d1 = evaluate(cd.d1, theta)
    d2 = evaluate(cd.d2, theta) if cd.curve.degree >= 2 else np.zeros(2)
    sp2 = d1 @ d1
    if sp2 <= 1e-18:
        raise DegenerateTangent(f"|P'| vanishes at theta={theta}")
    psi = wrap_angle(np.arctan2(d1[1], d1[0]))
    r_theta = (d1[0] * d2[1] - d1[1] * d2[0]) / sp2
    return np.array([p[0], p[1], psi, np.sqrt(sp2) * theta_dot, 0.0, r_theta * theta_dot])


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Uniformly sampled reference states.

    ``samples`` has one row ``(x_d, y_d, psi_d, u_d, v_d, r_d)`` per time
    ``t0 + k dt``.  ``curve_index`` and ``theta`` record where each sample
    sits on the source curve (``-1`` once the path end is held).
    """

    t0: float
    dt: float
    samples: np.ndarray
    curve_index: np.ndarray = None
    theta: np.ndarray = None

    def __post_init__(self):
        S = np.array(self.samples, dtype=float).reshape(-1, 6)
        S.setflags(write=False)
        object.__setattr__(self, "samples", S)
        n = len(S)
        ci = np.full(n, -1, dtype=int) if self.curve_index is None else np.asarray(self.curve_index, dtype=int)
        th = np.full(n, np.nan) if self.theta is None else np.asarray(self.theta, dtype=float)
        for a in (ci, th):
            a.setflags(write=False)
        object.__setattr__(self, "curve_index", ci)
        object.__setattr__(self, "theta", th)

    def __len__(self):
        return len(self.samples)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.samples))

    @property
    def t_end(self):
        return self.t0 + self.dt * (len(self.samples) - 1)

    def index_of(self, t):
        """Sample index at time ``t`` (must lie on the sample grid)."""
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-6 or kr < 0 or kr >= len(self.samples):
            raise ReferenceExpired(f"t={t} not a sample of [{self.t0}, {self.t_end}] step {self.dt}")
        return kr

    def at(self, t):
        """Reference at time ``t``, linear in position/speed, shortest-arc in heading."""
        if t < self.t0 - _TICK_TOL or t > self.t_end + _TICK_TOL:
            raise ReferenceExpired(f"t={t} outside [{self.t0}, {self.t_end}]")
        k = (t - self.t0) / self.dt
        i = int(np.clip(np.floor(k + 1e-9), 0, len(self.samples) - 1))
        if i == len(self.samples) - 1:
            return self.samples[i].copy()
        a = min(max(k - i, 0.0), 1.0)
        s0, s1 = self.samples[i], self.samples[i + 1]
        out = (1.0 - a) * s0 + a * s1
        out[2] = wrap_angle(s0[2] + a * wrap_angle(s1[2] - s0[2]))
        return out

    def window(self, t_start, n):
        """``n`` consecutive samples starting at grid time ``t_start``."""
        i = self.index_of(t_start)
        if i + n > len(self.samples):
            raise ReferenceExpired(f"need {n} samples from t={t_start}, have {len(self.samples) - i}")
        return self.samples[i:i + n]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + REF_COLUMNS)
            for t, row in zip(self.times, self.samples):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _hold_state(curve):
    cd = _CurveDerivs(curve)
    ref = reference_state(cd, 1.0, 0.0)
    ref[3] = ref[5] = 0.0
    return ref


def generate_reference(pw, prof, t0, duration, dt, start=(0, 0.0)):
    """Sample the reference every ``dt`` over ``[t0, t0 + duration]``.

    Crossing a curve end carries the leftover arc length into the next
    curve; after the last curve the end pose is held at zero speed.
    ``start = (curve index, theta)`` resumes part way along ``pw``.
    """
    if not duration > 0.0:
        raise NonpositiveDuration(f"duration must be > 0, got {duration}")
    if not dt > 0.0:
        raise NonpositiveDuration(f"dt must be > 0, got {dt}")
    n = int(round(duration / dt)) + 1
    curves = [_CurveDerivs(c) for c in pw.curves]
    k, theta, u = int(start[0]), float(start[1]), float(prof.u_d0)
    if not (0 <= k < len(curves) and 0.0 <= theta <= 1.0):
        raise ValueError(f"start {start} outside the path")
    done = False
    rows, ci, th = [], [], []
    hold = None
    for _ in range(n):
        if done:
            rows.append(hold)
            ci.append(-1)
            th.append(np.nan)
        else:
            cd = curves[k]
            rows.append(reference_state(cd, theta, u / cd.speed(theta)))
            ci.append(k)
            th.append(theta)
            th_raw, u = _rk4_raw(theta, u, cd, prof.U_d, prof.T_theta, dt)
            while th_raw >= 1.0:
                if k == len(curves) - 1:
                    done = True
                    hold = _hold_state(cd.curve)
                    break
                residual = (th_raw - 1.0) * cd.speed(1.0)
                k += 1
                cd = curves[k]
                th_raw = residual / cd.speed(0.0)
            theta = th_raw
    return ReferenceTrajectory(float(t0), float(dt), np.array(rows), np.array(ci), np.array(th))


def reference_from_rows(t0, dt, rows):
    """Reference built directly from sample rows (no curve bookkeeping)."""
    return ReferenceTrajectory(float(t0), float(dt), np.asarray(rows, dtype=float))
