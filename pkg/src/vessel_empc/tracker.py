"""Low-level MPC that drives the plant along a planned motion.

The tracker reuses the planner transcription: thrust is carried as a
state with a lightly weighted rate, so the knot thrusts act as the
inputs and the plant's linear thrust ramp over one step is modelled
exactly.  Thrust deviation from the planned thrust is weighted by ``R``.
Rate limits are part of the tracking problem and the command change is
clamped once more before it is applied.
"""

from dataclasses import dataclass

import numpy as np

from .empc import EmpcConfig, PlanningProblem, plan
from .errors import SolveFailure


@dataclass(frozen=True)
class TrackerConfig:
    """Tracking horizon, step and weights (diagonals)."""

    horizon: float = 5.0
    dt: float = 0.2
    Q: tuple = (10.0, 10.0, 0.5, 0.1, 0.1, 0.1)
    R: tuple = (1e-3, 1e-3)
    P: tuple = (100.0, 100.0, 5.0, 0.1, 0.1, 0.1)
    rate_weight: float = 1e-4
    max_iter: int = 50

    def __post_init__(self):
        if not (self.horizon > 0 and self.dt > 0):
            raise ValueError("horizon and dt must be positive")
        if abs(self.horizon / self.dt - round(self.horizon / self.dt)) > 1e-9:
            raise ValueError("horizon must be a multiple of dt")
        for name in ("Q", "R", "P"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} entries must be >= 0")

    @property
    def H(self):
        return int(round(self.horizon / self.dt))

    def empc_config(self):
        return EmpcConfig(Q=self.Q, P=self.P, R_delta=(self.rate_weight, self.rate_weight), R_u=self.R,
                          k_ec=0.0, T_p=self.horizon, dt=self.dt, max_iter=self.max_iter, rate_bounds=True)


def clamp_command(tau_cmd, tau_now, params, dt):
    """Limit the command change to ``rate_lim * dt`` and the result to ``tau_lim``."""
    step = np.clip(np.asarray(tau_cmd, dtype=float) - tau_now, -params.rate_lim * dt, params.rate_lim * dt)
    return np.clip(tau_now + step, -params.tau_lim, params.tau_lim)


def _window(motion, t_now, H, params):
    # planned knots over [t_now, t_now + H dt], extended by a zero-rate rollout past the end
    t = t_now if motion.covers(t_now) else motion.t_end
    return motion.shifted(t, H, params).states


class Tracker:
    """Tracking MPC with a warm-start cache (one instance per simulation)."""

    def __init__(self, cfg=None, params=None):
        from .vessel import VesselParams

        self.cfg = cfg or TrackerConfig()
        self.params = params or VesselParams()
        self._ecfg = self.cfg.empc_config()
        self._last = None
        self.failures = 0

    def reset(self):
        self._last = None

    def command(self, plant_state, tau_now, motion, t_now):
        """Thrust command ``(X, N)`` to hold over ``[t_now, t_now + dt)``."""
        H = self.cfg.H
        tau_now = np.asarray(tau_now, dtype=float)
        ref = _window(motion, t_now, H, self.params)
        a0 = np.concatenate([np.asarray(plant_state, dtype=float)[:6], tau_now])
        prob = PlanningProblem(a0, ref[:, :6], params=self.params, t_start=t_now, tau_ref=ref[:, 6:8])
        warm = self._last if self._last is not None and self._last.covers(t_now) else None
        try:
            sol = plan(prob, self._ecfg, warm_start=warm)
            self._last = sol
            tau_cmd = sol.states[1, 6:8]
        except SolveFailure:
            self.failures += 1
            self._last = None
            tau_cmd = ref[0, 6:8]
        return clamp_command(tau_cmd, tau_now, self.params, self.cfg.dt)


def track(plant_state, motion, t_now, cfg=None, params=None, tau_now=None):
    """Single tracking solve without warm start; see :class:`Tracker`."""
    tr = Tracker(cfg, params)
    if tau_now is None:
        tau_now = np.asarray(plant_state, dtype=float)[6:8] if len(plant_state) == 8 else np.zeros(2)
    return tr.command(plant_state, tau_now, motion, t_now)
