"""Environment, Voronoi roadmap, safest-path search and path ranking.

The roadmap is the Voronoi diagram of obstacle centers restricted to the
environment box.  Restriction is done exactly by adding the mirror image of
every site across each side of the box: inside the box the nearest site is
always a real one, and the box sides become bisectors between a site and
its mirror.  Graph edges are the ridges shared by two real sites.
"""

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Voronoi

from .errors import Disconnected, EmptyEnvironment, NonpositiveDuration
from .vessel import VesselParams, dynamics

_MERGE_TOL = 1e-9


@dataclass(frozen=True)
class Obstacle:
    """Disc obstacle.  ``appear_at`` lets scenarios reveal it mid-run."""

    center: tuple
    radius: float = 0.15
    appear_at: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius >= 0.0:
            raise ValueError(f"obstacle radius must be >= 0, got {self.radius}")


def obstacle_arrays(obstacles):
    """Centers ``(n, 2)`` and radii ``(n,)`` of a sequence of obstacles."""
    if len(obstacles) == 0:
        return np.zeros((0, 2)), np.zeros(0)
    c = np.array([o.center for o in obstacles], dtype=float)
    r = np.array([o.radius for o in obstacles], dtype=float)
    return c, r


@dataclass(frozen=True)
class Environment:
    """Rectangular workspace with disc obstacles.

    Parameters
    ----------
    bounds : tuple
        ``(xmin, ymin, xmax, ymax)``.
    obstacles : tuple of Obstacle
    start, goal : tuple
    margin : float
        Vehicle inflation ``r_c + r_v`` added to every obstacle radius.
    """

    bounds: tuple
    obstacles: tuple
    start: tuple
    goal: tuple
    margin: float = 0.77

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        if not (b[2] > b[0] and b[3] > b[1]):
            raise EmptyEnvironment(f"degenerate bounds {b}")
        for name in ("start", "goal"):
            p = getattr(self, name)
            if not (b[0] <= p[0] <= b[2] and b[1] <= p[1] <= b[3]):
                raise ValueError(f"{name} {p} outside bounds {b}")
            for i, o in enumerate(self.obstacles):
                if np.hypot(p[0] - o.center[0], p[1] - o.center[1]) < o.radius + self.margin - 1e-3:
                    raise ValueError(f"{name} {p} inside inflated obstacle {i}")

    @property
    def max_radius(self):
        return max((o.radius for o in self.obstacles), default=0.0)

    def default_min_clearance(self):
        return self.margin + self.max_radius


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    length: float
    clearance: float
    sites: tuple = (-1, -1)


@dataclass
class RoadmapGraph:
    """Undirected roadmap.

    Attributes
    ----------
    vertices : ndarray (V, 2)
    edges : list of Edge
    site_cells : list of ndarray
        Counter-clockwise Voronoi cell polygon of every real site.
    start, goal : int
        Vertex indices of the start and goal points.
    start_site, goal_site : int
        Site whose cell contains start / goal (-1 when there are no sites).
    """

    vertices: np.ndarray
    edges: list
    site_cells: list
    start: int
    goal: int
    start_site: int = -1
    goal_site: int = -1
    sites: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def adjacency(self):
        adj = {i: {} for i in range(len(self.vertices))}
        for e in self.edges:
            w = e.length
            if e.j not in adj[e.i] or w < adj[e.i][e.j]:
                adj[e.i][e.j] = w
                adj[e.j][e.i] = w
        return adj

    def neighbors(self, v):
        return sorted(self.adjacency()[v])

    def edge_between(self, a, b):
        for e in self.edges:
            if {e.i, e.j} == {a, b}:
                return e
        return None

    def cell_polygon(self, site):
        if site < 0 or site >= len(self.site_cells):
            return None
        return self.site_cells[site]

    def to_csv_rows(self):
        """Rows ``(x0, y0, x1, y1, length, clearance)`` for every edge."""
        V = self.vertices
        return [(V[e.i, 0], V[e.i, 1], V[e.j, 0], V[e.j, 1], e.length, e.clearance) for e in self.edges]


def _seg_point_dist(a, b, c):
    """Distances from points ``c`` (n, 2) to segment ``ab``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a
    dd = float(d @ d)
    c = np.atleast_2d(c)
    if dd == 0.0:
        return np.hypot(c[:, 0] - a[0], c[:, 1] - a[1])
    t = np.clip(((c - a) @ d) / dd, 0.0, 1.0)
    q = a + t[:, None] * d
    return np.hypot(c[:, 0] - q[:, 0], c[:, 1] - q[:, 1])


def segment_clearance(a, b, sites):
    """Minimum distance from segment ``ab`` to any site (inf if none)."""
    if len(sites) == 0:
        return np.inf
    return float(np.min(_seg_point_dist(a, b, sites)))


def segment_is_clear(a, b, env):
    """True when the segment keeps ``r_o + margin`` from every obstacle."""
    c, r = obstacle_arrays(env.obstacles)
    if len(c) == 0:
        return True
    return bool(np.all(_seg_point_dist(a, b, c) >= r + env.margin))


def _unique_sites(env):
    c, _ = obstacle_arrays(env.obstacles)
    keep = []
    for i in range(len(c)):
        if all(np.hypot(*(c[i] - c[j])) > _MERGE_TOL for j in keep):
            keep.append(i)
    return c[keep] if keep else np.zeros((0, 2))


def _degenerate_graph(env, sites):
    V = np.array([env.start, env.goal], dtype=float)
    edges = [Edge(0, 1, float(np.hypot(*(V[1] - V[0]))), segment_clearance(V[0], V[1], sites))]
    c, r = obstacle_arrays(env.obstacles)
    if len(c) == 1 and not segment_is_clear(V[0], V[1], env):
        # single blocking disc: detour through two points beside it
        d = V[1] - V[0]
        n = np.array([-d[1], d[0]]) / max(np.hypot(*d), 1e-12)
        R = 2.0 * (r[0] + env.margin)
        side = [c[0] + R * n, c[0] - R * n]
        V = np.vstack([V, side])
        edges = []
        for k in (2, 3):
            for a in (0, 1):
                edges.append(Edge(a, k, float(np.hypot(*(V[k] - V[a]))), segment_clearance(V[a], V[k], sites)))
    cells = []
    if len(sites) == 1:
        b = env.bounds
        cells = [np.array([[b[0], b[1]], [b[2], b[1]], [b[2], b[3]], [b[0], b[3]]])]
    return RoadmapGraph(V, edges, cells, 0, 1, 0 if len(sites) else -1, 0 if len(sites) else -1, sites)


def _nearest_site(p, sites):
    d = np.hypot(sites[:, 0] - p[0], sites[:, 1] - p[1])
    return int(np.argmin(d))


def build_roadmap(env):
    """Voronoi roadmap of the obstacle centers clipped to ``env.bounds``.

    Fewer than two distinct sites give a straight start-goal graph (with a
    two-point detour when a single disc blocks the straight line).
    """
    xmin, ymin, xmax, ymax = env.bounds
    if not (xmax > xmin and ymax > ymin):
        raise EmptyEnvironment("degenerate bounds")
    sites = _unique_sites(env)
    n = len(sites)
    if n < 2:
        return _degenerate_graph(env, sites)

    mirrors = [
        np.column_stack([2 * xmin - sites[:, 0], sites[:, 1]]),
        np.column_stack([2 * xmax - sites[:, 0], sites[:, 1]]),
        np.column_stack([sites[:, 0], 2 * ymin - sites[:, 1]]),
        np.column_stack([sites[:, 0], 2 * ymax - sites[:, 1]]),
    ]
    extra = np.vstack(mirrors)
    far = np.min(np.hypot(extra[:, None, 0] - sites[None, :, 0], extra[:, None, 1] - sites[None, :, 1]), axis=1)
    extra = extra[far > _MERGE_TOL]
    vor = Voronoi(np.vstack([sites, extra]))

    # graph vertices: endpoints of ridges between two real sites
    raw = vor.vertices
    ids = {}
    verts = []

    def vid(k):
        if k in ids:
            return ids[k]
        p = np.clip(raw[k], [xmin, ymin], [xmax, ymax])
        for j, q in enumerate(verts):
            if abs(q[0] - p[0]) <= _MERGE_TOL and abs(q[1] - p[1]) <= _MERGE_TOL:
                ids[k] = j
                return j
        verts.append(p)
        ids[k] = len(verts) - 1
        return ids[k]

    ridges = []
    for (a, b), rv in zip(vor.ridge_points, vor.ridge_vertices):
        if a < n and b < n and -1 not in rv:
            ridges.append((min(a, b), max(a, b), rv[0], rv[1]))
    ridges.sort()
    edges = []
    seen = set()
    for a, b, v0, v1 in ridges:
        i, j = vid(v0), vid(v1)
        if i == j or (min(i, j), max(i, j)) in seen:
            continue
        seen.add((min(i, j), max(i, j)))
        P, Q = verts[i], verts[j]
        edges.append(Edge(i, j, float(np.hypot(*(Q - P))), segment_clearance(P, Q, sites), (int(a), int(b))))

    cells = []
    for s in range(n):
        reg = vor.regions[vor.point_region[s]]
        poly = np.clip(vor.vertices[[k for k in reg if k >= 0]], [xmin, ymin], [xmax, ymax])
        ang = np.arctan2(poly[:, 1] - sites[s, 1], poly[:, 0] - sites[s, 0])
        cells.append(poly[np.argsort(ang, kind="stable")])

    V = np.array(verts, dtype=float).reshape(-1, 2)
    s_id = len(V)
    g_id = len(V) + 1
    V = np.vstack([V, env.start, env.goal])
    start_site = _nearest_site(env.start, sites)
    goal_site = _nearest_site(env.goal, sites)
    min_clear = env.default_min_clearance()

    def cell_vertex_ids(site):
        out = []
        for p in cells[site]:
            for j in range(s_id):
                if abs(V[j, 0] - p[0]) <= 1e-7 and abs(V[j, 1] - p[1]) <= 1e-7:
                    out.append(j)
                    break
        return sorted(set(out))

    def connect(pid, site):
        p = V[pid]
        made = False
        for j in cell_vertex_ids(site):
            cl = segment_clearance(p, V[j], sites)
            if cl >= min_clear and segment_is_clear(p, V[j], env):
                edges.append(Edge(min(pid, j), max(pid, j), float(np.hypot(*(V[j] - p))), cl))
                made = True
        if not made:
            # nothing visible in the own cell: nearest visible vertex anywhere
            order = np.argsort(np.hypot(V[:s_id, 0] - p[0], V[:s_id, 1] - p[1]), kind="stable")
            for j in order:
                cl = segment_clearance(p, V[j], sites)
                if cl >= min_clear and segment_is_clear(p, V[j], env):
                    edges.append(Edge(min(pid, int(j)), max(pid, int(j)), float(np.hypot(*(V[j] - p))), cl))
                    break

    connect(s_id, start_site)
    connect(g_id, goal_site)
    if start_site == goal_site and segment_is_clear(V[s_id], V[g_id], env):
        edges.append(Edge(s_id, g_id, float(np.hypot(*(V[g_id] - V[s_id]))), segment_clearance(V[s_id], V[g_id], sites)))
    return RoadmapGraph(V, edges, cells, s_id, g_id, start_site, goal_site, sites)


def _components_connected(g, a, b):
    adj = g.adjacency()
    seen = {a}
    stack = [a]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return b in seen


def prune_narrow(g, min_clearance):
    """Drop edges with clearance below ``min_clearance`` and isolated vertices."""
    if min_clearance < 0:
        raise ValueError("min_clearance must be >= 0")
    kept = [e for e in g.edges if e.clearance >= min_clearance]
    used = sorted({e.i for e in kept} | {e.j for e in kept})
    if g.start not in used or g.goal not in used:
        raise Disconnected("start or goal lost every edge")
    remap = {old: new for new, old in enumerate(used)}
    edges = [Edge(remap[e.i], remap[e.j], e.length, e.clearance, e.sites) for e in kept]
    out = RoadmapGraph(g.vertices[used], edges, g.site_cells, remap[g.start], remap[g.goal],
                       g.start_site, g.goal_site, g.sites)
    if not _components_connected(out, out.start, out.goal):
        raise Disconnected("start and goal in different components")
    return out


def shortest_path(g, a, b, banned=()):
    """Dijkstra shortest path from ``a`` to ``b`` as a vertex list.

    Equal-length paths are broken by lexicographic order of the vertex
    sequence.  Vertices in ``banned`` are never entered.
    """
    if a == b:
        return [a]
    adj = g.adjacency()
    banned = set(banned)
    heap = [(0.0, (a,))]
    done = set()
    while heap:
        d, path = heapq.heappop(heap)
        v = path[-1]
        if v in done:
            continue
        done.add(v)
        if v == b:
            return list(path)
        for w, wt in adj[v].items():
            if w in done or w in banned:
                continue
            heapq.heappush(heap, (round(d + wt, 9), path + (w,)))
    raise Disconnected(f"no path from {a} to {b}")


def path_length(g, path):
    return float(sum(np.hypot(*(g.vertices[path[k + 1]] - g.vertices[path[k]])) for k in range(len(path) - 1)))


@dataclass
class PathCandidate:
    """A start-to-goal vertex path and its ranking costs."""

    vertices: list
    points: np.ndarray
    J: float = 0.0
    A: float = 0.0
    L: float = 0.0
    partition: tuple = ((), (), ())

    @property
    def length(self):
        d = np.diff(self.points, axis=0)
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def candidate_paths(g, env=None):
    """One shortest path per first-hop vertex out of the start point."""
    out = []
    seen = set()
    for v in g.neighbors(g.start):
        if v == g.goal:
            path = [g.start, g.goal]
        else:
            try:
                path = [g.start] + shortest_path(g, v, g.goal, banned=(g.start,))
            except Disconnected:
                continue
        key = tuple(path)
        if key in seen:
            continue
        seen.add(key)
        out.append(PathCandidate(path, g.vertices[path].copy()))
    if not out:
        raise Disconnected("no candidate path")
    return out


def partition_path(points, pose, sensor_range):
    """Split a polyline into (first, middle, remaining) edge-index lists.

    Edge ``k`` joins ``points[k]`` and ``points[k+1]``.  ``first`` is edge 0,
    ``middle`` the longest run of following edges whose end vertices are
    within ``sensor_range`` of ``pose``, ``remaining`` the rest.
    """
    pts = np.asarray(points, dtype=float)
    n_edges = len(pts) - 1
    if n_edges < 1:
        return [], [], []
    first = [0]
    middle = []
    k = 1
    while k < n_edges and np.hypot(*(pts[k + 1] - np.asarray(pose[:2]))) <= sensor_range:
        middle.append(k)
        k += 1
    remaining = list(range(k, n_edges))
    return first, middle, remaining


def _check_T(T):
    T = np.broadcast_to(np.asarray(T, dtype=float), (2,))
    if np.any(T <= 0.0):
        raise NonpositiveDuration(f"durations must be positive, got {T}")
    return T


def jerk_coefficients(p0, pf, v0, a0, vf, T):
    """Per-axis (alpha, beta, gamma) of the minimum-jerk profile with free end acceleration."""
    T = _check_T(T)
    p0, pf, v0, a0, vf = (np.asarray(x, dtype=float) for x in (p0, pf, v0, a0, vf))
    dp = pf - (0.5 * a0 * T**2 + v0 * T + p0)
    dv = vf - (a0 * T + v0)
    alpha = (320.0 * dp - 120.0 * T * dv) / T**5
    beta = (-200.0 * T * dp + 72.0 * T**2 * dv) / T**5
    gamma = (40.0 * T**2 * dp - 12.0 * T**3 * dv) / T**5
    return alpha, beta, gamma


def jerk_cost(p0, pf, v0, a0, vf, T):
    """Time-averaged squared jerk (1/T)∫j² of the optimal profile, summed over both axes."""
    T = _check_T(T)
    al, be, ga = jerk_coefficients(p0, pf, v0, a0, vf, T)
    J = (ga**2 + be * ga * T + be**2 * T**2 / 3.0 + al * ga * T**2 / 3.0
         + al * be * T**3 / 4.0 + al**2 * T**4 / 20.0)
    return float(np.sum(J))


def accel_coefficients(p0, pf, v0, vf, T):
    """Per-axis (alpha, beta) of the minimum-acceleration profile ``a(t) = -(alpha t + beta)``."""
    T = _check_T(T)
    p0, pf, v0, vf = (np.asarray(x, dtype=float) for x in (p0, pf, v0, vf))
    dp = pf - (v0 * T + p0)
    dv = vf - v0
    alpha = (12.0 * dp - 6.0 * T * dv) / T**3
    beta = (-6.0 * T * dp + 2.0 * T**2 * dv) / T**3
    return alpha, beta


def accel_cost(p0, pf, v0, vf, T):
    """Time-averaged squared acceleration (1/T)∫a² of the optimal profile over both axes."""
    T = _check_T(T)
    al, be = accel_coefficients(p0, pf, v0, vf, T)
    return float(np.sum(al**2 * T**2 / 3.0 + al * be * T + be**2))


def priority_step(x, c):
    """1 on [0, c), -1 on (-c, 0), 0 elsewhere."""
    if 0.0 <= x < c:
        return 1.0
    if -c < x < 0.0:
        return -1.0
    return 0.0


def priority_value(ca, cb, w1, w2, c):
    dJ = ca.J - cb.J
    dA = ca.A - cb.A
    dL = ca.L - cb.L
    pj = priority_step(dJ, c)
    return dJ + w1 * pj * dA + w2 * pj * priority_step(dA, c) * dL


def compare_priority(ca, cb, w1=1.0, w2=1.0, c=0.0):
    """Sign of the multiscale priority difference: -1, 0 or 1."""
    v = priority_value(ca, cb, w1, w2, c)
    return int(np.sign(v))


def _unit(v):
    n = np.hypot(*v)
    return v / n if n > 0 else np.zeros(2)


def body_to_world_kinematics(pose, tau, params):
    """World-frame velocity and acceleration of a vessel ``State6``."""
    x, y, psi, u, v, r = pose
    R = np.array([[np.cos(psi), -np.sin(psi)], [np.sin(psi), np.cos(psi)]])
    ds = dynamics(pose, tau, params)
    vel = R @ np.array([u, v])
    acc = R @ np.array([ds[3] - r * v, ds[4] + r * u])
    return vel, acc


def evaluate_candidate(cand, pose, sensor_range, U_d, tau=(0.0, 0.0), params=None):
    """Fill ``J``, ``A``, ``L`` and ``partition`` of a candidate in place."""
    params = params or VesselParams()
    P = cand.points
    first, middle, remaining = partition_path(P, pose, sensor_range)
    cand.partition = (first, middle, remaining)
    v0, a0 = body_to_world_kinematics(np.asarray(pose, float), np.asarray(tau, float), params)
    seg = P[1] - P[0]
    Lseg = np.hypot(*seg)
    if Lseg > 0:
        vf = U_d * _unit(P[2] - P[1]) if len(P) > 2 else np.zeros(2)
        cand.J = jerk_cost(P[0], P[1], v0, a0, vf, Lseg / U_d)
    else:
        cand.J = 0.0
    A = 0.0
    for k in middle:
        d = P[k + 1] - P[k]
        Lk = np.hypot(*d)
        if Lk <= 0:
            continue
        vin = U_d * _unit(P[k] - P[k - 1])
        A += accel_cost(P[k], P[k + 1], vin, U_d * _unit(d), Lk / U_d)
    cand.A = A
    cand.L = float(sum(np.hypot(*(P[k + 1] - P[k])) for k in remaining))
    return cand


def select_path(candidates, pose, sensor_range, w1=1.0, w2=1.0, c=None, U_d=0.2, tau=(0.0, 0.0), params=None):
    """Best candidate under the multiscale priority criterion.

    Costs are evaluated in place.  ``c`` defaults to 10% of the mean jerk
    cost.  Ties go to the shorter path, then to the lexicographically
    smaller vertex sequence.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    for cand in candidates:
        evaluate_candidate(cand, pose, sensor_range, U_d, tau, params)
    if c is None:
        c = 0.1 * float(np.mean([cd.J for cd in candidates]))
    best = candidates[0]
    for cand in candidates[1:]:
        s = compare_priority(cand, best, w1, w2, c)
        if s < 0:
            best = cand
        elif s == 0:
            if (round(cand.length, 9), cand.vertices) < (round(best.length, 9), best.vertices):
                best = cand
    return best


@dataclass
class PathPlan:
    """Chosen waypoint path with the geometry the smoother needs."""

    points: np.ndarray
    graph: RoadmapGraph
    candidate: PathCandidate
    start_cell: Optional[np.ndarray]
    shared_edge: Optional[np.ndarray]


def plan_path(env, pose, sensor_range, U_d, tau=(0.0, 0.0), params=None, w1=1.0, w2=1.0, c=None,
              min_clearance=None):
    """Roadmap, pruning, candidate generation and selection in one call."""
    g = build_roadmap(env)
    mc = env.default_min_clearance() if min_clearance is None else min_clearance
    g = prune_narrow(g, mc)
    cands = candidate_paths(g, env)
    best = select_path(cands, pose, sensor_range, w1, w2, c, U_d, tau, params)
    shared = None
    if len(best.vertices) == 3 and g.start_site >= 0 and g.goal_site >= 0 and g.start_site != g.goal_site:
        pair = (min(g.start_site, g.goal_site), max(g.start_site, g.goal_site))
        for e in g.edges:
            if tuple(e.sites) == pair:
                shared = g.vertices[[e.i, e.j]].copy()
                break
    return PathPlan(best.points, g, best, g.cell_polygon(g.start_site), shared)
