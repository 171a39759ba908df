"""Scenarios, closed-loop simulation, energy accounting and export."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.integrate import trapezoid

from .empc import EmpcConfig, actuator_power
from .env_graph import Environment, Obstacle, obstacle_arrays, plan_path
from .errors import ParseError, ScenarioValidationError
from .horizon import CycleRecord, RecedingHorizonPlanner, Schedule, detect, write_cycle_log
from .smoothing import SmoothingContext, smooth
from .tracker import Tracker, TrackerConfig
from .trajectory import SpeedProfile, generate_reference
from .vessel import VesselParams, integrate, wrap_angle

Vec2 = Tuple[float, float]
Vec6 = Tuple[float, float, float, float, float, float]

EXIT_PASS, EXIT_INVALID, EXIT_TIMEOUT, EXIT_COLLISION = 0, 2, 3, 4
COLLISION_TOL = 1e-3


# --------------------------------------------------------------------------
# scenario schema
# --------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ObstacleSpec(_Section):
    center: Vec2
    radius: float = Field(0.15, ge=0.0)
    appear_at: float = Field(0.0, ge=0.0)


class EnvironmentSpec(_Section):
    start: Vec2
    goal: Vec2
    bounds: Optional[Tuple[float, float, float, float]] = None
    obstacles: List[ObstacleSpec] = []


class VesselSpec(_Section):
    M1: float = Field(493.77, gt=0)
    M2: float = Field(455.81, gt=0)
    M3: float = Field(55.81, gt=0)
    D1: float = Field(29.23, gt=0)
    D2: float = Field(2173.7, gt=0)
    D3: float = Field(17.7, gt=0)
    d: float = Field(0.28, gt=0)
    X_lim: float = Field(39.2, gt=0)
    N_lim: float = Field(10.84, gt=0)
    Xdelta_lim: float = Field(4.9, gt=0)
    Ndelta_lim: float = Field(1.35, gt=0)


class EmpcSpec(_Section):
    Q: Vec6 = (10.0, 10.0, 20.0, 1.0, 1.0, 1.0)
    P: Vec6 = (10.0, 10.0, 20.0, 1.0, 1.0, 1.0)
    R_delta: Vec2 = (500.0, 500.0)
    R_u: Vec2 = (0.1, 0.1)
    k_ec: float = Field(0.0, ge=0.0)
    T_p: float = Field(20.0, gt=0)
    dt: float = Field(0.2, gt=0)
    r_c: float = Field(0.0, ge=0.0)
    r_v: float = Field(0.77, ge=0.0)
    smoothing_eps: float = Field(1e-4, ge=0.0)
    max_iter: int = Field(150, ge=0)
    tol_kkt: float = Field(1e-4, gt=0)
    tol_defect: float = Field(1e-5, gt=0)


class TrackerSpec(_Section):
    horizon: float = Field(5.0, gt=0)
    Q: Vec6 = (10.0, 10.0, 0.5, 0.1, 0.1, 0.1)
    R: Vec2 = (1e-3, 1e-3)
    P: Vec6 = (100.0, 100.0, 5.0, 0.1, 0.1, 0.1)


class ScheduleSpec(_Section):
    T_d: float = Field(13.0, gt=0)
    T_c: float = Field(2.0, gt=0)
    lead: float = Field(0.0, ge=0)


class SpeedSpec(_Section):
    U_d: float = Field(0.2, gt=0)
    T_theta: float = Field(5.0, gt=0)


class Scenario(_Section):
    """Everything a closed-loop run needs; defaults are the field-trial settings."""

    name: str = "scenario"
    environment: EnvironmentSpec
    initial_state: Optional[Vec6] = None
    vessel: VesselSpec = VesselSpec()
    empc: EmpcSpec = EmpcSpec()
    tracker: TrackerSpec = TrackerSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    speed: SpeedSpec = SpeedSpec()
    sensor_range: float = Field(15.0, gt=0)
    timeout: float = Field(600.0, gt=0)
    goal_tolerance: float = Field(0.5, gt=0)
    stop_speed: float = Field(0.05, gt=0)
    k_c: float = Field(0.95, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        for q in (self.empc.Q, self.empc.P, self.empc.R_delta, self.empc.R_u, self.tracker.Q, self.tracker.R,
                  self.tracker.P):
            if min(q) < 0:
                raise ValueError("weights must be >= 0")
        self.schedule_obj()
        self.tracker_config()
        self.empc_config()
        self.build_environment()
        return self

    # builders ----------------------------------------------------------------
    def bounds(self):
        e = self.environment
        if e.bounds is not None:
            return tuple(e.bounds)
        pts = np.array([e.start, e.goal] + [o.center for o in e.obstacles], dtype=float)
        lo, hi = pts.min(axis=0) - 10.0, pts.max(axis=0) + 10.0
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def build_environment(self):
        e = self.environment
        obs = tuple(Obstacle(o.center, o.radius, o.appear_at) for o in e.obstacles)
        return Environment(self.bounds(), obs, e.start, e.goal, self.empc.r_c + self.empc.r_v)

    def params(self):
        return VesselParams(**self.vessel.model_dump())

    def empc_config(self):
        e = self.empc
        return EmpcConfig(Q=e.Q, P=e.P, R_delta=e.R_delta, R_u=e.R_u, k_ec=e.k_ec, T_p=e.T_p, dt=e.dt, r_c=e.r_c,
                          r_v=e.r_v, smoothing_eps=e.smoothing_eps, max_iter=e.max_iter, tol_kkt=e.tol_kkt,
                          tol_defect=e.tol_defect)

    def tracker_config(self):
        t = self.tracker
        return TrackerConfig(horizon=t.horizon, dt=self.empc.dt, Q=t.Q, R=t.R, P=t.P)

    def schedule_obj(self):
        s = self.schedule
        return Schedule(T_p=self.empc.T_p, T_d=s.T_d, T_c=s.T_c, dt=self.empc.dt, lead=s.lead)

    def profile(self):
        return SpeedProfile(self.speed.U_d, self.speed.T_theta, 0.0)

    def initial_aug_state(self):
        e = self.environment
        if self.initial_state is not None:
            s = np.array(self.initial_state, dtype=float)
        else:
            heading = np.arctan2(e.goal[1] - e.start[1], e.goal[0] - e.start[0])
            s = np.array([e.start[0], e.start[1], heading, 0.0, 0.0, 0.0])
        s[2] = wrap_angle(s[2])
        return np.concatenate([s, np.zeros(2)])

    def with_kec(self, k_ec):
        return self.model_copy(update={"empc": self.empc.model_copy(update={"k_ec": float(k_ec)})})


def _error_path(err):
    e = err.errors()[0]
    return ".".join(str(p) for p in e["loc"]), e["msg"]


def scenario_from_dict(data):
    """Validate a mapping into a :class:`Scenario`."""
    if not isinstance(data, dict):
        raise ParseError("scenario must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioValidationError(*_error_path(exc)) from None


def load_scenario(path):
    """Parse and validate a YAML scenario file."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return scenario_from_dict(data)


def save_scenario(sc, path):
    with open(path, "w") as fh:
        yaml.safe_dump(sc.model_dump(mode="json"), fh, sort_keys=False)


def bundled_scenario(name):
    """Path of a scenario shipped with the package (``benchmark``, ``ambush``)."""
    return Path(__file__).parent / "scenarios" / f"{name}.yaml"


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------

STEP_FIELDS = ("t", "x", "y", "psi", "u", "v", "r", "X", "N", "X_cmd", "N_cmd", "plan", "ref_x", "ref_y",
               "plan_x", "plan_y", "min_margin", "power")


@dataclass
class RunLog:
    """Per-step records, per-cycle records, plans and totals of one run."""

    name: str
    k_ec: float
    steps: np.ndarray
    cycles: list
    plans: list = field(default_factory=list)
    references: list = field(default_factory=list)
    status: str = "timeout"
    tracker_failures: int = 0

    def column(self, name):
        return self.steps[:, STEP_FIELDS.index(name)]

    @property
    def exit_code(self):
        return {"pass": EXIT_PASS, "timeout": EXIT_TIMEOUT, "collision": EXIT_COLLISION}[self.status]

    def totals(self):
        return totals_from_steps(self.steps)


def totals_from_steps(steps):
    """Energy (trapezoid of power), duration, RMS tracking and reference deviation, min margin."""
    col = {n: steps[:, i] for i, n in enumerate(STEP_FIELDS)}
    t = col["t"]
    track = np.hypot(col["x"] - col["plan_x"], col["y"] - col["plan_y"])
    dev = np.hypot(col["x"] - col["ref_x"], col["y"] - col["ref_y"])
    return {
        "energy": float(trapezoid(col["power"], t)) if len(t) > 1 else 0.0,
        "duration": float(t[-1] - t[0]) if len(t) else 0.0,
        "rms_tracking": float(np.sqrt(np.mean(track ** 2))),
        "mean_ref_dev": float(np.mean(dev)),
        "rms_ref_dev": float(np.sqrt(np.mean(dev ** 2))),
        "min_margin": float(np.min(col["min_margin"])),
    }


def _margins(pos, env, known, inflation):
    if not known:
        return np.inf
    C, R = obstacle_arrays([env.obstacles[i] for i in known])
    return float((np.hypot(C[:, 0] - pos[0], C[:, 1] - pos[1]) - R - inflation).min())


def run(sc, timeout=None):
    """Deterministic closed-loop simulation of a scenario.

    Returns a :class:`RunLog`; reaching the timeout is a status, not an
    exception.
    """
    env = sc.build_environment()
    params = sc.params()
    ecfg = sc.empc_config()
    sched = sc.schedule_obj()
    planner = RecedingHorizonPlanner(env, params, ecfg, sched, sc.profile(), sc.sensor_range)
    tracker = Tracker(sc.tracker_config(), params)
    dt = sched.dt
    inflation = ecfg.inflation
    a = sc.initial_aug_state()
    ds = detect(env, a[:2], sc.sensor_range, None, 0.0)
    active = planner.initial(a)
    active_ref = None
    plan_id = -1
    pending = None
    k = 0
    rows, cycles, plans, refs = [], [], [], []
    collided = reached = False
    max_tick = int(round((sc.timeout if timeout is None else timeout) / dt))
    goal = np.array(env.goal)
    for tick in range(max_tick + 1):
        t = sched.time(tick)
        if tick > 0:
            ds = detect(env, a[:2], sc.sensor_range, ds, t)
        if tick == sched.detect_tick(k):
            motion, rec = planner.replan_cycle(k, active, ds)
            pending = (k, motion, rec, planner.ledger.reference)
        if pending is not None and tick == sched.ready_tick(pending[0]):
            kk, motion, rec, ref = pending
            active = planner.activate(active, motion, kk)
            planner.record_splice(rec, active)
            active_ref, plan_id = ref, kk
            cycles.append(rec)
            plans.append((kk, motion))
            refs.append(ref)
            pending = None
            k += 1
        p_state = active.state_at(t) if active.covers(t) else active.states[-1]
        if active_ref is not None:
            r_xy = active_ref.at(min(max(t, active_ref.t0), active_ref.t_end))[:2]
        else:
            r_xy = active.states[0, :2]
        margin = _margins(a[:2], env, ds.known, inflation)
        collided |= margin < -COLLISION_TOL
        power = float(actuator_power(a[6], a[7], params.d, sc.k_c))
        done = np.hypot(*(a[:2] - goal)) <= sc.goal_tolerance and np.hypot(a[3], a[4]) < sc.stop_speed
        if done or tick == max_tick:
            cmd = a[6:8].copy()
        else:
            cmd = tracker.command(a[:6], a[6:8], active, t)
        rows.append([t, *a, *cmd, plan_id, *r_xy, *p_state[:2], margin, power])
        if done:
            reached = True
            break
        if tick == max_tick:
            break
        a = integrate(a, (cmd - a[6:8]) / dt, dt, params)
    status = "collision" if collided else ("pass" if reached else "timeout")
    return RunLog(sc.name, sc.empc.k_ec, np.array(rows, dtype=float), cycles, plans, refs, status,
                  tracker.failures)


def sweep_kec(sc, values, timeout=None):
    """One run per ``k_ec`` value; returns table rows and the logs."""
    if len(values) < 2:
        raise ValueError("need at least two k_ec values")
    rows, logs = [], []
    for v in values:
        log = run(sc.with_kec(v), timeout)
        tot = log.totals()
        rows.append({"k_ec": float(v), "energy": tot["energy"], "rms_ref_dev": tot["rms_ref_dev"],
                     "mean_ref_dev": tot["mean_ref_dev"], "min_margin": tot["min_margin"], "status": log.status})
        logs.append(log)
    return rows, logs


def write_sweep_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k_ec", "energy", "rms_ref_dev", "mean_ref_dev", "min_margin", "status"))
        for r in rows:
            w.writerow([repr(r["k_ec"]), repr(r["energy"]), repr(r["rms_ref_dev"]), repr(r["mean_ref_dev"]),
                        repr(r["min_margin"]), r["status"]])


# --------------------------------------------------------------------------
# global stage only
# --------------------------------------------------------------------------

@dataclass
class GlobalPlan:
    graph: object
    waypoints: np.ndarray
    path: object
    reference: object


def plan_global(sc):
    """Roadmap, smoothing and reference from the start with the initially visible obstacles."""
    full = sc.build_environment()
    env = Environment(full.bounds, tuple(o for o in full.obstacles if o.appear_at <= 0.0), full.start, full.goal,
                      full.margin)
    a0 = sc.initial_aug_state()
    pp = plan_path(env, a0[:6], sc.sensor_range, sc.speed.U_d, params=sc.params())
    C, R = obstacle_arrays(env.obstacles)
    v0 = np.array([np.cos(a0[2]), np.sin(a0[2])]) * sc.speed.U_d
    pw = smooth(SmoothingContext(pp.points, v0, C, R, env.margin, sc.speed.U_d, env.bounds, pp.start_cell,
                                 pp.shared_edge))
    length = float(np.sum(np.hypot(*np.diff(pw.sample(200), axis=0).T)))
    horizon = length / sc.speed.U_d + 5 * sc.speed.T_theta
    ref = generate_reference(pw, sc.profile(), 0.0, round(horizon / sc.empc.dt) * sc.empc.dt, sc.empc.dt)
    return GlobalPlan(pp.graph, pp.points, pw, ref)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_steps(steps, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_FIELDS)
        for row in steps:
            w.writerow([_fmt(v) for v in row])


def read_steps(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != STEP_FIELDS:
        raise ParseError(f"{path}: unexpected header")
    return np.array(rows[1:], dtype=float)


class _Svg:
    # minimal world-to-canvas SVG writer (y axis up)
    def __init__(self, box, width=600.0):
        x0, y0, x1, y1 = box
        self.box = box
        self.s = width / max(x1 - x0, 1e-9)
        self.w = width
        self.h = max((y1 - y0) * self.s, 1.0)
        self.items = []

    def xy(self, x, y):
        return (x - self.box[0]) * self.s, self.h - (y - self.box[1]) * self.s

    def polyline(self, pts, cls, color, width=1.0):
        coords = " ".join("%.3f,%.3f" % self.xy(x, y) for x, y in pts)
        self.items.append(f'<polyline class="{cls}" points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def circle(self, c, r, cls, color):
        x, y = self.xy(*c)
        self.items.append(f'<circle class="{cls}" cx="{x:.3f}" cy="{y:.3f}" r="{r * self.s:.3f}" fill="{color}"/>')

    def text(self, x, y, s):
        self.items.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="12">{s}</text>')

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.0f}" height="{self.h:.0f}" '
                     f'viewBox="0 0 {self.w:.3f} {self.h:.3f}">\n')
            for it in self.items:
                fh.write(it + "\n")
            fh.write("</svg>\n")


def _series_svg(t, ys, path, label):
    y = np.asarray(ys, dtype=float)
    finite = y[np.isfinite(y)]
    lo, hi = (float(finite.min()), float(finite.max())) if len(finite) else (0.0, 1.0)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    span_t = max(float(t[-1] - t[0]), 1e-9) if len(t) else 1.0
    scale = span_t / (hi - lo) * 0.5
    svg = _Svg((float(t[0]) if len(t) else 0.0, lo * scale, (float(t[0]) if len(t) else 0.0) + span_t, hi * scale))
    svg.polyline([(a, b * scale) for a, b in zip(t, y) if np.isfinite(b)], "series", "#1f4e99")
    svg.text(5, 15, label)
    svg.write(path)


def export(log, out_dir, env=None):
    """Write CSV logs, a JSON summary and SVG plots into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_steps(log.steps, out / "trajectory.csv")
    write_cycle_log(log.cycles, out / "cycles.csv")
    with open(out / "plans.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("cycle", "t", "x", "y", "psi", "u", "v", "r", "X", "N"))
        for k, m in log.plans:
            for t, s in zip(m.times, m.states):
                w.writerow([k, _fmt(t)] + [_fmt(v) for v in s])
    summary = {"name": log.name, "k_ec": log.k_ec, "status": log.status, "exit_code": log.exit_code,
               "cycles": len(log.cycles), "tracker_failures": log.tracker_failures,
               "fallbacks": sum(1 for c in log.cycles if c.fallback)}
    summary.update({k: (v if np.isfinite(v) else None) for k, v in log.totals().items()})
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    xy = log.steps[:, 1:3]
    pts = [xy]
    for _, m in log.plans:
        pts.append(m.states[:, :2])
    if env is not None:
        pts.append(np.array([env.bounds[:2], env.bounds[2:]]))
    P = np.vstack(pts)
    box = (P[:, 0].min() - 1, P[:, 1].min() - 1, P[:, 0].max() + 1, P[:, 1].max() + 1)
    svg = _Svg(box, 400.0)
    if env is not None:
        for o in env.obstacles:
            svg.circle(o.center, o.radius + env.margin, "inflation", "#f3d3d3")
            svg.circle(o.center, max(o.radius, 0.05), "obstacle", "#b22222")
    svg.polyline(log.steps[:, [STEP_FIELDS.index("ref_x"), STEP_FIELDS.index("ref_y")]], "reference", "#2e8b57", 1.5)
    for _, m in log.plans:
        svg.polyline(m.states[:, :2], "plan", "#d2691e", 0.8)
    svg.polyline(xy, "executed", "#1f4e99", 1.0)
    svg.write(out / "trajectory.svg")
    t = log.column("t")
    err = np.hypot(log.column("x") - log.column("plan_x"), log.column("y") - log.column("plan_y"))
    _series_svg(t, err, out / "tracking_error.svg", "tracking error (m)")
    _series_svg(t, log.column("power"), out / "power.svg", "power (W)")
    return out


def summary_from_dir(out_dir):
    """Totals recomputed from an exported trajectory CSV."""
    return totals_from_steps(read_steps(Path(out_dir) / "trajectory.csv"))
