"""Turn a waypoint path into a G1, collision-free piecewise Bezier curve.

Two steps: the first curve is designed from the first three waypoints and
the initial velocity (ten geometric cases), then remaining waypoints are
appended greedily while the control hull stays clear of obstacles, starting
a new curve whenever it would not.  Joins left without a common tangent are
repaired last.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bezier import (
    BezierCurve,
    HullFilter,
    Locus,
    PiecewiseBezier,
    angle_between,
    end_tangent,
    golden_section,
    join_is_g1,
    opt_cubic,
    opt_quad1,
    opt_quar,
    quad_kmax,
    start_tangent,
)
from .errors import DegenerateInput, NoFeasiblePoint

GEOM_TOL = 1e-6
ANGLE_TOL = 1e-6
SEARCH_TOL = 1e-3
_EPS_LEN = 1e-3
_T_MARGIN = 1e-3


@dataclass
class SmoothingContext:
    """Inputs of the smoother.

    Parameters
    ----------
    waypoints : ndarray (n, 2)
    v0 : ndarray (2,)
        Initial velocity; only its direction matters besides ``U_d``.
    centers, radii : ndarray
        Known obstacle discs.
    clearance : float
        Extra distance kept from every disc (``r_c + r_v``).
    U_d : float
        Desired speed, sets the nominal first-leg length ``U_d * 1 s``.
    bounds : tuple or None
        ``(xmin, ymin, xmax, ymax)`` used when no cell polygon is given;
        defaults to the waypoint box padded by half its larger side (at
        least 1 m).
    cell : ndarray or None
        Convex cell polygon around ``waypoints[0]``.
    shared_edge : ndarray (2, 2) or None
        Common edge of the start and goal cells (sparse scenes).
    """

    waypoints: np.ndarray
    v0: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    clearance: float = 0.77
    U_d: float = 0.2
    bounds: Optional[tuple] = None
    cell: Optional[np.ndarray] = None
    shared_edge: Optional[np.ndarray] = None

    def __post_init__(self):
        self.waypoints = _dedupe(np.asarray(self.waypoints, dtype=float).reshape(-1, 2))
        self.v0 = np.asarray(self.v0, dtype=float).reshape(2)
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if self.bounds is None:
            lo = self.waypoints.min(axis=0)
            hi = self.waypoints.max(axis=0)
            pad = max(1.0, 0.5 * float(np.max(hi - lo)))
            self.bounds = (lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad)

    def hull_filter(self):
        """Hull test; the floor tolerates an initial point already inside a margin."""
        hf = HullFilter(np.ascontiguousarray(self.centers), self.radii + self.clearance, 0.0)
        m0 = hf.margin(self.waypoints[:1])
        hf.floor = min(0.0, m0) - 1e-12
        return hf

    def heading(self):
        n = np.hypot(*self.v0)
        if n > 1e-9:
            return self.v0 / n
        d = self.waypoints[1] - self.waypoints[0]
        return d / np.hypot(*d)


def _dedupe(W):
    keep = [W[0]]
    for p in W[1:]:
        if np.hypot(*(p - keep[-1])) > GEOM_TOL:
            keep.append(p)
    return np.array(keep)


def _unit(v):
    return v / np.hypot(*v)


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _line_dist(p, a, b):
    d = b - a
    n = np.hypot(*d)
    if n <= 1e-15:
        return float(np.hypot(*(p - a)))
    return abs(_cross(d, p - a)) / n


def q1_tilde(ctx):
    """Nominal first-leg point on the initial velocity ray."""
    p0, p1 = ctx.waypoints[0], ctx.waypoints[1]
    ell = min(np.hypot(*(p1 - p0)), ctx.U_d * 1.0)
    return p0 + ell * ctx.heading()


def max_feasible_on_segment(fixed, a, b, hull, tol=SEARCH_TOL):
    """Farthest point on ``a -> b`` keeping ``hull(fixed + [point])`` clear.

    ``a`` itself is assumed admissible; feasibility is monotone along the
    segment because hulls only grow as the point moves away from ``a``.
    """
    fixed = np.asarray(fixed, dtype=float).reshape(-1, 2)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = np.hypot(*(b - a))
    if L <= 0.0 or hull.ok(np.vstack([fixed, b])):
        return b
    lo, hi = 0.0, 1.0
    while (hi - lo) * L > tol:
        mid = 0.5 * (lo + hi)
        if hull.ok(np.vstack([fixed, a + mid * (b - a)])):
            lo = mid
        else:
            hi = mid
    return a + lo * (b - a)


def _segments_intersect(a, b, c, d):
    r = b - a
    s = d - c
    den = _cross(r, s)
    if abs(den) < 1e-15:
        return None
    t = _cross(c - a, s) / den
    u = _cross(c - a, r) / den
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return a + t * r
    return None


def ray_exit(p, d, ctx):
    """Point where the ray ``p + t d`` leaves the cell (or the bounds)."""
    poly = ctx.cell
    if poly is None or len(poly) < 3:
        x0, y0, x1, y1 = ctx.bounds
        poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    d = _unit(d)
    best = np.inf
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        s = b - a
        den = _cross(d, s)
        if abs(den) < 1e-15:
            continue
        t = _cross(a - p, s) / den
        u = _cross(a - p, d) / den
        if t > 1e-9 and -1e-9 <= u <= 1 + 1e-9:
            best = min(best, t)
    if not np.isfinite(best):
        x0, y0, x1, y1 = ctx.bounds
        best = max(x1 - x0, y1 - y0)
    return p + best * d


def classify_first_case(ctx):
    """Case tag of the first curve: '1a'..'1c', '2a'..'2c', '3a', '3b', '4a', '4b'."""
    W = ctx.waypoints
    if len(W) < 3:
        raise ValueError("case analysis needs three waypoints")
    p0, p1, p2 = W[0], W[1], W[2]
    q1 = q1_tilde(ctx)
    q1_on = _line_dist(q1, p0, p1) <= GEOM_TOL
    p2_on = _line_dist(p2, p0, p1) <= GEOM_TOL
    acute = angle_between(p1 - p0, q1 - p0) <= np.pi / 2 + ANGLE_TOL
    if q1_on or p2_on:
        sub = "a" if (q1_on and p2_on) else ("b" if p2_on else "c")
        return ("1" if acute else "2") + sub
    s_q = np.sign(_cross(p1 - p0, q1 - p0))
    s_p = np.sign(_cross(p1 - p0, p2 - p0))
    if s_q != s_p:
        return "3a" if acute else "3b"
    X = _segments_intersect(p0, q1, p1, p2)
    if X is not None and ctx.hull_filter().ok(np.vstack([p0, X])):
        return "4b"
    return "4a"


def _recipe_cubic(ctx, hull):
    # p0, q1 on the velocity ray (free), p1 fixed, q3 on p1 -> q3~
    W = ctx.waypoints
    p0, p1, p2 = W[0], W[1], W[2]
    h = ctx.heading()
    ray_end = max_feasible_on_segment([p0, p1], p0 + _EPS_LEN * h, p0 + np.hypot(*(p1 - p0)) * h, hull)
    # locus end with the shortest first leg; the joint search handles the coupling
    q3_end = max_feasible_on_segment([p0, p0 + _EPS_LEN * h, p1], p1, p2, hull)
    loci = [Locus(p0 + _EPS_LEN * h, ray_end), p1, Locus(p1, q3_end)]
    q = opt_cubic(p0, loci, hull)
    return np.vstack([p0, q])


def _recipe_quartic(ctx, hull, rule, q1_free):
    # p0, q1 on the ray, q2 on p0 -> q2~ (cell exit), p1 fixed, q4 on p1 -> q4~
    W = ctx.waypoints
    p0, p1, p2 = W[0], W[1], W[2]
    h = ctx.heading()
    u1 = _unit(p1 - p0)
    n = np.array([-u1[1], u1[0]])
    if rule == "far":
        ea, eb = ray_exit(p0, n, ctx), ray_exit(p0, -n, ctx)
        q2_end = ea if np.hypot(*(ea - p0)) >= np.hypot(*(eb - p0)) else eb
    elif rule == "bisector":
        d = u1 + h
        if np.hypot(*d) < 1e-9:
            d = n if _cross(u1, p2 - p0) >= 0 else -n
        q2_end = ray_exit(p0, d, ctx)
    else:  # perpendicular on the side of p2
        d = n if _cross(u1, p2 - p0) >= 0 else -n
        q2_end = ray_exit(p0, d, ctx)
    q2_end = max_feasible_on_segment([p0], p0, q2_end, hull)
    q1 = q1_tilde(ctx)
    ray_end = max_feasible_on_segment([p0, p1], p0 + _EPS_LEN * h, p0 + np.hypot(*(p1 - p0)) * h, hull)
    if np.hypot(*(q1 - p0)) > np.hypot(*(ray_end - p0)):
        q1 = ray_end
    q4_end = max_feasible_on_segment([p0, q1 if not q1_free else p0 + _EPS_LEN * h, p1], p1, p2, hull)
    l1 = Locus(p0 + _EPS_LEN * h, ray_end) if q1_free else q1
    loci = [l1, Locus(p0, q2_end), p1, Locus(p1, q4_end)]
    q = opt_quar(p0, loci, hull)
    return np.vstack([p0, q])


def _recipe_quad(ctx, hull, corner):
    # p0, corner, OptQuad1 point on corner -> q2~ along the next leg
    W = ctx.waypoints
    p0, p2 = W[0], W[2]
    q2_end = max_feasible_on_segment([p0, corner], corner, p2, hull)
    if np.hypot(*(q2_end - corner)) <= 1e-9:
        return np.vstack([p0, corner])
    return np.vstack([p0, corner, opt_quad1(p0, corner, q2_end)])


def design_first_curve(ctx, case=None):
    """Control points of the first curve according to its case."""
    hull = ctx.hull_filter()
    case = case or classify_first_case(ctx)
    W = ctx.waypoints
    if case == "1a":
        P = W[:3].copy()
    elif case in ("1b", "3a"):
        P = _recipe_cubic(ctx, hull)
    elif case == "1c":
        P = _recipe_quad(ctx, hull, W[1])
    elif case == "2a":
        P = _recipe_quartic(ctx, hull, "far", q1_free=True)
    elif case in ("2b", "3b"):
        P = _recipe_quartic(ctx, hull, "bisector", q1_free=False)
    elif case == "2c":
        P = _recipe_quartic(ctx, hull, "perp", q1_free=False)
    elif case == "4a":
        acute = angle_between(W[1] - W[0], ctx.heading()) <= np.pi / 2 + ANGLE_TOL
        P = _recipe_cubic(ctx, hull) if acute else _recipe_quartic(ctx, hull, "bisector", q1_free=False)
    elif case == "4b":
        X = _segments_intersect(W[0], q1_tilde(ctx), W[1], W[2])
        P = _recipe_quad(ctx, hull, X)
    else:
        raise ValueError(f"unknown case {case}")
    return BezierCurve(P)


def sparse_adjust(ctx):
    """Replace the middle of a three-waypoint path by a point on the velocity ray.

    The new point ``q3`` lies on ``p0 q2`` where ``OptQuad1`` places it for the
    quadratic ``p2, q2, q3``, but never closer to ``p0`` than the nominal
    first leg.  Applies only when the start and goal cells share the edge ``p1 q1``,
    the midpoint of ``p0 p2`` lies on it and the velocity ray from ``p0``
    crosses it at ``q2``.  Otherwise the waypoints are returned unchanged.
    """
    W = ctx.waypoints
    E = ctx.shared_edge
    if len(W) != 3 or E is None:
        return W
    p0, p1, p2 = W
    a, b = np.asarray(E, dtype=float)
    if np.hypot(*(a - p1)) > GEOM_TOL and np.hypot(*(b - p1)) > GEOM_TOL:
        return W
    mid = 0.5 * (p0 + p2)
    t = np.clip((mid - a) @ (b - a) / ((b - a) @ (b - a)), 0.0, 1.0)
    if np.hypot(*(a + t * (b - a) - mid)) > GEOM_TOL:
        return W
    h = ctx.heading()
    far = p0 + h * 4.0 * (np.hypot(*(p2 - p0)) + np.hypot(*(p1 - p0)))
    q2 = _segments_intersect(p0, far, a, b)
    if q2 is None or np.hypot(*(q2 - p0)) <= GEOM_TOL:
        return W
    try:
        q3 = opt_quad1(p2, q2, p0)
    except DegenerateInput:
        return W
    # the clamp often lands q3 on p0; keep at least the nominal first leg
    ell = min(np.hypot(*(q2 - p0)), ctx.U_d * 1.0)
    if np.hypot(*(q3 - p0)) < ell:
        q3 = p0 + ell * _unit(q2 - p0)
    hull = ctx.hull_filter()
    if not hull.ok(np.vstack([p0, q3, p2])):
        return W
    return np.vstack([p0, q3, p2])


def extend_curve(control, nxt, hull, tol=SEARCH_TOL):
    """Append ``nxt`` if the hull stays clear, else the farthest clear point.

    Returns ``(point, broke)``; ``broke`` means a new curve starts at
    ``point``.
    """
    control = np.asarray(control, dtype=float).reshape(-1, 2)
    nxt = np.asarray(nxt, dtype=float)
    if hull.ok(np.vstack([control, nxt])):
        return nxt, False
    return max_feasible_on_segment(control, control[-1], nxt, hull, tol), True


def _first_unused_waypoint(W, P):
    # waypoints strictly after the last one the first curve reached
    end = P[-1]
    if len(W) > 2 and np.hypot(*(end - W[2])) <= GEOM_TOL:
        return 3
    return 2


def _repair_join(D, E, hull):
    d = D.points
    e = E.points
    a, b = d[-2], d[-1]
    if np.hypot(*(b - a)) <= 1e-12 or len(e) < 2:
        return D, E

    def pt(t):
        return a + t * (b - a)

    def feasible(t):
        return hull.ok(np.vstack([pt(t), e]))

    lo, hi = 0.0, 1.0
    if not feasible(lo):
        L = np.hypot(*(b - a))
        while (hi - lo) * L > 1e-4:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                hi = mid
            else:
                lo = mid
        lo = hi
    # keep both adjacent legs nondegenerate
    lo = max(lo, _T_MARGIN)
    t_max = 1.0 - _T_MARGIN

    def obj(t):
        p = pt(t)
        k_d = quad_kmax(np.array([d[-3], a, p]))[()] if len(d) >= 3 else 0.0
        k_e = quad_kmax(np.array([p, e[0], e[1]]))[()]
        return max(float(k_d), float(k_e))

    if lo >= t_max:
        t = lo if lo < 1.0 else t_max
    else:
        grid = np.linspace(lo, t_max, 101)
        vals = np.array([obj(t) for t in grid])
        k = int(np.argmin(vals))
        t = golden_section(obj, grid[max(k - 1, 0)], grid[min(k + 1, 100)], 1e-9)
        if obj(t) > vals[k]:
            t = grid[k]
    p = pt(t)
    return BezierCurve(np.vstack([d[:-1], p])), BezierCurve(np.vstack([p, e]))


def enforce_g1(pw, hull=None):
    """Move every non-G1 join point back along the incoming leg.

    The new join ``p`` lies on the last control leg of the incoming curve
    and is prepended to the outgoing curve, so both tangents at ``p`` are
    along that leg.  ``p`` minimizes the larger of the two adjacent
    quadratic max curvatures over the positions whose hull stays clear.
    """
    hull = hull or HullFilter.none()
    curves = list(pw.curves)
    for k in range(len(curves) - 1):
        if not join_is_g1(curves[k], curves[k + 1]):
            curves[k], curves[k + 1] = _repair_join(curves[k], curves[k + 1], hull)
    return PiecewiseBezier(curves)


def smooth(ctx):
    """Full smoothing pipeline from waypoints to a G1 piecewise curve."""
    W = ctx.waypoints
    if len(W) < 2:
        raise ValueError("need at least two waypoints")
    if len(W) == 2:
        W = np.vstack([W[0], 0.5 * (W[0] + W[1]), W[1]])
        ctx.waypoints = W
    ctx.waypoints = sparse_adjust(ctx)
    W = ctx.waypoints
    hull = ctx.hull_filter()
    first = design_first_curve(ctx)
    control = list(first.points)
    curves = []
    idx = _first_unused_waypoint(W, first.points)
    while idx < len(W):
        point, broke = extend_curve(control, W[idx], hull)
        if not broke:
            control.append(point)
            idx += 1
            continue
        if np.hypot(*(point - control[-1])) > SEARCH_TOL:
            control.append(point)
        curves.append(BezierCurve(control))
        control = [curves[-1].points[-1]]
    if len(control) >= 2:
        curves.append(BezierCurve(control))
    return enforce_g1(PiecewiseBezier(curves), hull)


def min_clearance_sampled(pw, centers, radii, per_curve=1000):
    """Smallest ``distance - radius`` over dense samples of the curve."""
    if len(centers) == 0:
        return np.inf
    S = pw.sample(per_curve)
    d = np.hypot(S[:, None, 0] - centers[None, :, 0], S[:, None, 1] - centers[None, :, 1]) - radii[None, :]
    return float(d.min())


def max_join_mismatch(pw):
    out = 0.0
    for a, b in zip(pw.curves[:-1], pw.curves[1:]):
        out = max(out, angle_between(end_tangent(a), start_tangent(b)))
    return out
