"""Receding-horizon orchestration: detection, timing, references, splicing.

Time is counted in integer ticks of ``dt`` so cycle boundaries are exact.
Cycle ``k`` detects at ``t_d = k (T_d + T_c + lead)``, charges the fixed
computation time ``T_c`` and the plan it produces starts at
``t_next_s = t_d + T_c + lead``.  With ``lead = 0`` the new plan takes
over as soon as it is ready.
"""

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bezier import evaluate
from .empc import PlannedMotion, PlanningProblem, motion_margins, plan
from .env_graph import Environment, obstacle_arrays, plan_path
from .errors import SolveFailure, SpliceMismatch, VesselEmpcError
from .smoothing import SmoothingContext, smooth
from .trajectory import ReferenceTrajectory, generate_reference
from .vessel import VesselParams

SPLICE_TOL = 1e-3


# --------------------------------------------------------------------------
# timing
# --------------------------------------------------------------------------

def _ticks(value, dt, name):
    n = value / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{name}={value} is not a multiple of dt={dt}")
    return int(round(n))


@dataclass(frozen=True)
class Schedule:
    """Horizon ``T_p``, detection delay ``T_d``, computation budget ``T_c``.

    ``lead`` postpones the start of each new plan past the instant it is
    ready; it must keep the new plan starting before the active one ends.
    """

    T_p: float = 20.0
    T_d: float = 13.0
    T_c: float = 2.0
    dt: float = 0.2
    lead: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and self.T_c > 0 and self.T_d > 0 and self.lead >= 0):
            raise ValueError("dt, T_c, T_d must be > 0 and lead >= 0")
        for name in ("T_p", "T_d", "T_c", "lead"):
            _ticks(getattr(self, name), self.dt, name)
        if not self.T_d + self.T_c < self.T_p or self.n_d + self.n_c + self.n_lead > self.n_p:
            raise ValueError("need T_d + T_c < T_p and T_d + T_c + lead <= T_p")

    @property
    def n_p(self):
        return _ticks(self.T_p, self.dt, "T_p")

    @property
    def n_d(self):
        return _ticks(self.T_d, self.dt, "T_d")

    @property
    def n_c(self):
        return _ticks(self.T_c, self.dt, "T_c")

    @property
    def n_lead(self):
        return _ticks(self.lead, self.dt, "lead")

    @property
    def period_ticks(self):
        return self.n_d + self.n_c + self.n_lead

    @property
    def splice_ticks(self):
        return 2 * self.n_p - self.n_d - self.n_c

    @property
    def splice_length(self):
        return self.time(self.splice_ticks)

    def time(self, tick):
        return round(tick * self.dt, 9)

    def detect_tick(self, k):
        return k * self.period_ticks

    def ready_tick(self, k):
        return self.detect_tick(k) + self.n_c

    def start_tick(self, k):
        """Tick at which the plan produced by cycle ``k`` starts."""
        return self.ready_tick(k) + self.n_lead

    def cycle_times(self, k):
        """``(t_s, t_d, t_u, t_next_s)``; ``t_s`` of cycle 0 is virtual."""
        d = self.detect_tick(k)
        return (self.time(d - self.n_d), self.time(d), self.time(self.ready_tick(k)), self.time(self.start_tick(k)))


# --------------------------------------------------------------------------
# detection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionState:
    """Known obstacle indices and the sensed region (union of discs)."""

    known: tuple = ()
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def known_obstacles(self, env):
        return [env.obstacles[i] for i in self.known]

    def contains(self, pts):
        """Closed-ball membership of points in the sensed region."""
        P = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(self.centers) == 0:
            return np.zeros(len(P), dtype=bool)
        d2 = ((P[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        return np.any(d2 <= self.radii[None, :] ** 2 + 1e-12, axis=1)


def detect(env, position, sensor_range, ds=None, t=np.inf):
    """Add obstacles (visible at ``t``) whose centers lie within range."""
    if not sensor_range > 0:
        raise ValueError("sensor_range must be > 0")
    ds = ds or DetectionState()
    p = np.asarray(position, dtype=float).reshape(2)
    known = set(ds.known)
    for i, o in enumerate(env.obstacles):
        if i in known or o.appear_at > t:
            continue
        if np.hypot(o.center[0] - p[0], o.center[1] - p[1]) <= sensor_range:
            known.add(i)
    return DetectionState(tuple(sorted(known)), np.vstack([ds.centers, p[None, :]]),
                          np.append(ds.radii, float(sensor_range)), np.append(ds.times, float(t)))


# --------------------------------------------------------------------------
# references
# --------------------------------------------------------------------------

def next_reference_start(reference, t_next_s):
    """Anchor for the next reference: the current reference sampled at ``t_next_s``.

    Returns ``(sample, curve_index, theta)``.
    """
    k = reference.index_of(t_next_s)
    return reference.samples[k].copy(), int(reference.curve_index[k]), float(reference.theta[k])


def _hold_row(row):
    h = np.array(row, dtype=float)
    h[3:] = 0.0
    return h


def _concat_refs(parts, t0, dt):
    rows = np.vstack([p[0] for p in parts])
    ci = np.concatenate([p[1] for p in parts])
    th = np.concatenate([p[2] for p in parts])
    return ReferenceTrajectory(t0, dt, rows, ci, th)


def construct_safe_reference(prev_tail, candidate, region, min_duration=None):
    """Previous tail followed by the in-region prefix of ``candidate``.

    Parameters
    ----------
    prev_tail : ReferenceTrajectory or None
        Unexecuted part of the previous reference, ending one sample
        before ``candidate.t0``.
    candidate : ReferenceTrajectory
    region : DetectionState
    min_duration : float, optional
        Required span from ``candidate.t0``; short prefixes are padded by
        holding the last safe sample at rest.

    Returns
    -------
    reference : ReferenceTrajectory
    n_valid : int
        Length of the accepted candidate prefix.
    padded : bool
    """
    inside = region.contains(candidate.samples[:, :2])
    n_valid = len(inside) if inside.all() else int(np.argmin(inside))
    need = len(candidate) if min_duration is None else int(round(min_duration / candidate.dt)) + 1
    parts = []
    if prev_tail is not None and len(prev_tail):
        if abs(prev_tail.t_end + prev_tail.dt - candidate.t0) > 1e-6:
            raise ValueError("previous tail does not end one step before the candidate")
        parts.append((prev_tail.samples, prev_tail.curve_index, prev_tail.theta))
    parts.append((candidate.samples[:n_valid], candidate.curve_index[:n_valid], candidate.theta[:n_valid]))
    padded = n_valid < need
    if padded:
        n_pad = need - n_valid
        if n_valid:
            last, ci, th = candidate.samples[n_valid - 1], candidate.curve_index[n_valid - 1], candidate.theta[n_valid - 1]
        elif prev_tail is not None and len(prev_tail):
            last, ci, th = prev_tail.samples[-1], prev_tail.curve_index[-1], prev_tail.theta[-1]
        else:
            last, ci, th = candidate.samples[0], candidate.curve_index[0], candidate.theta[0]
        # padding remembers where on the path it stopped so a later cycle can resume from rest
        parts.append((np.tile(_hold_row(last), (n_pad, 1)), np.full(n_pad, ci), np.full(n_pad, th)))
    t0 = prev_tail.t0 if prev_tail is not None and len(prev_tail) else candidate.t0
    return _concat_refs(parts, t0, candidate.dt), n_valid, padded


def reference_segment(ref, t0, t1):
    """Samples of ``ref`` on ``[t0, t1)`` as a trajectory (None when empty)."""
    if t1 <= t0 + 1e-9:
        return None
    i, j = ref.index_of(t0), ref.index_of(t1)
    return ReferenceTrajectory(ref.t0 + i * ref.dt, ref.dt, ref.samples[i:j], ref.curve_index[i:j], ref.theta[i:j])


# --------------------------------------------------------------------------
# motions
# --------------------------------------------------------------------------

def rest_motion(a0, t0, H, dt, params):
    """Zero-rate rollout from ``a0`` (the motion before the first plan)."""
    base = PlannedMotion(t0, dt, np.asarray(a0, dtype=float)[None, :], np.zeros((0, 2)), converged=False)
    return base.shifted(t0, H, params)


def _extend(motion, t_end, params):
    n = int(round((t_end - motion.t_start) / motion.dt))
    if n <= motion.H:
        return motion
    ext = motion.shifted(motion.t_start, n, params)
    ext.econ = np.concatenate([motion.econ, np.zeros(n - motion.H)])
    ext.track = np.concatenate([motion.track, np.zeros(n - motion.H)])
    ext.iterations, ext.converged, ext.residuals = motion.iterations, motion.converged, dict(motion.residuals)
    if motion.duals is not None:
        ext.duals = tuple(np.vstack([d, np.zeros((n - motion.H, d.shape[1]))]) for d in motion.duals)
    return ext


def concatenate(active, nxt, t_u, length=None, params=None):
    """Active motion on ``[t_u, nxt.t_start]`` followed by ``nxt``.

    When ``length`` is given the result is extended with a zero-rate
    rollout so that it covers ``[t_u, t_u + length]``.

    Raises
    ------
    SpliceMismatch
        If ``nxt`` does not start on the active motion (state gap > 1e-3).
    """
    params = params or VesselParams()
    gap = np.abs(active.state_at(nxt.t_start) - nxt.states[0]).max()
    if gap > SPLICE_TOL:
        raise SpliceMismatch(f"state gap {gap:.3g} at t={nxt.t_start}")
    head = active.segment(t_u, nxt.t_start)
    states = np.vstack([head.states[:-1], nxt.states])
    rates = np.vstack([head.rates, nxt.rates])
    duals = None
    if nxt.duals is not None:
        duals = tuple(np.vstack([np.zeros((head.H, d.shape[1])), d]) for d in nxt.duals)
    out = PlannedMotion(head.t_start, nxt.dt, states, rates, np.concatenate([head.econ, nxt.econ]),
                        np.concatenate([head.track, nxt.track]), nxt.iterations, nxt.converged,
                        dict(nxt.residuals), duals)
    if length is not None:
        out = _extend(out, t_u + length, params)
    return out


# --------------------------------------------------------------------------
# planner
# --------------------------------------------------------------------------

@dataclass
class CycleRecord:
    k: int
    tick_d: int
    t_s: float
    t_d: float
    t_u: float
    t_next_s: float
    iterations: int
    converged: bool
    fallback: bool
    regenerated: bool
    padded: bool
    n_known: int
    min_margin: float
    reason: str = ""
    spliced: float = float("nan")

    FIELDS = ("k", "tick_d", "t_s", "t_d", "t_u", "t_next_s", "iterations", "converged", "fallback",
              "regenerated", "padded", "n_known", "min_margin", "reason", "spliced")

    def row(self):
        return [getattr(self, f) for f in self.FIELDS]


def write_cycle_log(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CycleRecord.FIELDS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])


@dataclass
class ReferenceLedger:
    """Current safe reference and the path it follows."""

    reference: Optional[ReferenceTrajectory] = None
    path: object = None
    path_obstacles: tuple = ()
    history: list = field(default_factory=list)


class RecedingHorizonPlanner:
    """Produces one plan per cycle from the known world at detection time.

    Parameters
    ----------
    env : Environment
        Full world; only detected obstacles are ever used.
    params : VesselParams
    empc : EmpcConfig
    schedule : Schedule
    profile : SpeedProfile
    sensor_range : float
    """

    def __init__(self, env, params, empc, schedule, profile, sensor_range, regen_factor=2.0):
        if abs(empc.T_p - schedule.T_p) > 1e-9 or abs(empc.dt - schedule.dt) > 1e-9:
            raise ValueError("EmpcConfig and Schedule disagree on T_p or dt")
        self.env = env
        self.params = params
        self.empc = empc
        self.schedule = schedule
        self.profile = profile
        self.sensor_range = sensor_range
        self.regen_factor = regen_factor
        self.ledger = ReferenceLedger()

    # global stage ----------------------------------------------------------
    def _global_path(self, pos, heading, speed, known):
        env = Environment(self.env.bounds, tuple(self.env.obstacles[i] for i in known), tuple(pos),
                          self.env.goal, self.env.margin)
        if np.hypot(pos[0] - env.goal[0], pos[1] - env.goal[1]) < 1e-6:
            return None
        pose = np.array([pos[0], pos[1], heading, speed, 0.0, 0.0])
        pp = plan_path(env, pose, self.sensor_range, self.profile.U_d, params=self.params)
        C, R = obstacle_arrays(env.obstacles)
        v0 = np.array([np.cos(heading), np.sin(heading)]) * max(speed, self.profile.U_d)
        ctx = SmoothingContext(pp.points, v0, C, R, env.margin, self.profile.U_d, env.bounds,
                               pp.start_cell, pp.shared_edge)
        return smooth(ctx)

    def _needs_regen(self, known, start):
        # regenerate when a newly known obstacle lies near the rest of the current path
        if self.ledger.path is None:
            return True
        new = [i for i in known if i not in self.ledger.path_obstacles]
        if not new:
            return False
        k0, th0 = start
        curves = self.ledger.path.curves
        if k0 < 0:
            pts = curves[-1].points[-1:]
        else:
            t = np.linspace(0.0, 1.0, 100)
            pts = np.vstack([evaluate(curves[k0], th0 + (1.0 - th0) * t)] + [evaluate(c, t) for c in curves[k0 + 1:]])
        C, R = obstacle_arrays([self.env.obstacles[i] for i in new])
        d = np.hypot(pts[:, None, 0] - C[None, :, 0], pts[:, None, 1] - C[None, :, 1])
        near = d.min(axis=0) <= self.regen_factor * self.sensor_range
        # only obstacles that actually cut the remaining path force a new roadmap
        blocking = d.min(axis=0) < R + self.env.margin
        return bool(np.any(near & blocking))

    def _candidate(self, anchor, t0, known):
        row, ci, th = anchor
        sch = self.schedule
        regen = self._needs_regen(known, (ci, th))
        start = (ci, th)
        if regen:
            speed = float(row[3])
            try:
                path = self._global_path(row[:2], float(row[2]), speed, known)
            except (VesselEmpcError, ValueError):
                path = self.ledger.path
                regen = False
            else:
                self.ledger.path = path
                self.ledger.path_obstacles = tuple(known)
                start = (0, 0.0)
        path = self.ledger.path
        prof = replace(self.profile, u_d0=max(float(row[3]), 0.0))
        if path is None or start[0] < 0:
            n = sch.n_p + 1
            rows = np.tile(_hold_row(row), (n, 1))
            cand = ReferenceTrajectory(t0, sch.dt, rows, np.full(n, -1), np.full(n, np.nan))
        else:
            cand = generate_reference(path, prof, t0, sch.T_p, sch.dt, start=start)
            # keep the anchor sample exact so the reference is continuous
            rows = np.array(cand.samples)
            rows[0] = row
            cand = ReferenceTrajectory(t0, sch.dt, rows, cand.curve_index, cand.theta)
        return cand, regen

    # cycles ----------------------------------------------------------------
    def initial(self, a0, t0=0.0):
        """Motion executed before the first plan is ready, and the first anchor."""
        sch = self.schedule
        H = sch.n_c + sch.n_lead + sch.splice_ticks
        motion = rest_motion(a0, t0, H, sch.dt, self.params)
        row = np.array([a0[0], a0[1], a0[2], max(a0[3], 0.0), 0.0, 0.0])
        self._first_anchor = (row, 0, 0.0)
        return motion

    def replan_cycle(self, k, active, ds):
        """Plan for ``[t_next_s, t_next_s + T_p]`` from the state predicted by ``active``.

        Returns ``(motion, record)``; solver failures fall back to the
        shifted active motion and are flagged in the record.
        """
        sch = self.schedule
        t_s, t_d, t_u, t_next = sch.cycle_times(k)
        known = ds.known
        led = self.ledger
        if led.reference is None:
            row, _, _ = self._first_anchor
            a_pred = active.state_at(t_next)
            row = row.copy()
            row[:3] = a_pred[:3]
            anchor = (row, 0, 0.0)
            prev_tail = None
        else:
            anchor = next_reference_start(led.reference, t_next)
            prev_tail = reference_segment(led.reference, max(t_d, led.reference.t0), t_next)
        cand, regen = self._candidate(anchor, t_next, known)
        ref, n_valid, padded = construct_safe_reference(prev_tail, cand, ds, sch.T_p)
        led.reference = ref
        led.history.append(ref)
        a0 = active.state_at(t_next)
        C, R = obstacle_arrays([self.env.obstacles[i] for i in known])
        prob = PlanningProblem(a0, ref, C, R, self.params, t_next)
        reason = ""
        try:
            motion = plan(prob, self.empc, warm_start=active)
            if not motion.converged:
                raise SolveFailure("MaxIterations", motion, motion.residuals)
            motion.obstacle_ids = tuple(known)
            fallback = False
        except SolveFailure as exc:
            reason = exc.reason
            iters = getattr(exc.best, "iterations", 0)
            motion = active.shifted(t_next, sch.n_p, self.params)
            motion.iterations = iters
            fallback = True
        margin = motion_margins(motion, C, R, self.empc)
        rec = CycleRecord(k, sch.detect_tick(k), t_s, t_d, t_u, t_next, motion.iterations, bool(motion.converged),
                          fallback, bool(regen), bool(padded), len(known), float(margin), reason)
        return motion, rec

    def activate(self, active, motion, k):
        sch = self.schedule
        _, _, t_u, _ = sch.cycle_times(k)
        return concatenate(active, motion, t_u, sch.splice_length, self.params)

    @staticmethod
    def record_splice(rec, spliced):
        """Store the activated motion's span (seconds) in the cycle record."""
        rec.spliced = round(spliced.t_end - spliced.t_start, 9)
