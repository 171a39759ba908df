"""Bezier curve geometry and curvature-minimizing control point selection.

Maximum curvature of cubics and quartics is always estimated through
degree reduction: a cubic is split into two quadratics and a quartic into
two cubics (then four quadratics), and the exact closed-form maximum of
each quadratic is taken.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateInput, DegenerateTangent, DomainError, NoFeasiblePoint

TANGENT_EPS = 1e-9


@dataclass(frozen=True)
class BezierCurve:
    """Bezier curve given by its control points, shape ``(n + 1, 2)``."""

    points: np.ndarray

    def __post_init__(self):
        P = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(P) < 1:
            raise ValueError("a curve needs at least one control point")
        P.setflags(write=False)
        object.__setattr__(self, "points", P)

    @property
    def degree(self):
        return len(self.points) - 1

    def __len__(self):
        return len(self.points)


@dataclass
class PiecewiseBezier:
    """Sequence of curves sharing endpoints; ``g1[k]`` flags join ``k``."""

    curves: list
    g1: list = field(default_factory=list)

    def __post_init__(self):
        if not self.g1:
            self.g1 = [join_is_g1(a, b) for a, b in zip(self.curves[:-1], self.curves[1:])]

    @property
    def start(self):
        return self.curves[0].points[0]

    @property
    def end(self):
        return self.curves[-1].points[-1]

    def sample(self, per_curve=100):
        t = np.linspace(0.0, 1.0, per_curve)
        return np.vstack([evaluate(c, t) for c in self.curves])

    def control_rows(self):
        """Rows ``(curve_index, point_index, x, y)`` for export."""
        return [(k, i, p[0], p[1]) for k, c in enumerate(self.curves) for i, p in enumerate(c.points)]


def _check_theta(theta):
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0.0) or np.any(th > 1.0) or np.any(~np.isfinite(th)):
        raise DomainError(f"theta outside [0, 1]: {theta}")
    return th


def _casteljau(P, th):
    t = th.reshape(-1, 1, 1)
    Q = np.broadcast_to(P, (t.shape[0],) + P.shape).copy()
    for _ in range(P.shape[0] - 1):
        Q = (1.0 - t) * Q[:, :-1] + t * Q[:, 1:]
    return Q[:, 0]


def evaluate(c, theta):
    """Point(s) on the curve by de Casteljau's algorithm."""
    th = _check_theta(theta)
    out = _casteljau(c.points, np.atleast_1d(th))
    return out[0] if th.ndim == 0 else out


def derivative(c):
    """Hodograph: degree ``n - 1`` curve with points ``n (p_{i+1} - p_i)``."""
    P = c.points
    n = len(P) - 1
    if n < 1:
        return BezierCurve(np.zeros((1, 2)))
    return BezierCurve(n * np.diff(P, axis=0))


def _derivs(c, th):
    d1 = derivative(c)
    d2 = derivative(d1)
    return _casteljau(d1.points, th), _casteljau(d2.points, th)


def curvature(c, theta):
    """Signed curvature ``(x'y'' - y'x'') / |P'|^3``."""
    th = _check_theta(theta)
    t = np.atleast_1d(th)
    D1, D2 = _derivs(c, t)
    sp = np.hypot(D1[:, 0], D1[:, 1])
    if np.any(sp <= TANGENT_EPS):
        raise DegenerateTangent("hodograph vanishes")
    k = (D1[:, 0] * D2[:, 1] - D1[:, 1] * D2[:, 0]) / sp**3
    return k[0] if th.ndim == 0 else k


def max_abs_curvature(c, samples=200):
    """Maximum of |curvature| by dense sampling plus golden-section refinement."""
    if c.degree < 2:
        if c.degree == 1 and np.hypot(*(c.points[1] - c.points[0])) <= TANGENT_EPS:
            raise DegenerateTangent("zero-length segment")
        return 0.0
    t = np.linspace(0.0, 1.0, samples)
    k = np.abs(curvature(c, t))
    i = int(np.argmax(k))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, samples - 1)]
    f = lambda s: -abs(float(curvature(c, s)))
    s = golden_section(f, lo, hi, 1e-12)
    return max(float(k[i]), -f(s))


def golden_section(f, lo, hi, tol):
    """Minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    return min(cands)[1]


# degree reduction tables -------------------------------------------------

CUBIC_TO_QUAD_E = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [9.0, 21.0, 3.0, -1.0],
    [4.0, 12.0, 12.0, 4.0],
]) / np.array([[1.0], [32.0], [32.0]])
CUBIC_TO_QUAD_F = np.array([
    [4.0, 12.0, 12.0, 4.0],
    [-1.0, 3.0, 21.0, 9.0],
    [0.0, 0.0, 0.0, 32.0],
]) / 32.0

QUARTIC_TO_CUBIC_E = np.array([
    [672.0, 0.0, 0.0, 0.0, 0.0],
    [227.0, 436.0, 18.0, -12.0, 3.0],
    [101.0, 268.0, 270.0, 44.0, -11.0],
    [42.0, 168.0, 252.0, 168.0, 42.0],
]) / 672.0
QUARTIC_TO_CUBIC_F = np.array([
    [42.0, 168.0, 252.0, 168.0, 42.0],
    [-11.0, 44.0, 270.0, 268.0, 101.0],
    [3.0, -12.0, 18.0, 436.0, 227.0],
    [0.0, 0.0, 0.0, 0.0, 672.0],
]) / 672.0


def cubic_to_quadratics(P):
    """Two quadratics approximating the cubic with control points ``P``."""
    P = np.asarray(P, dtype=float).reshape(4, 2)
    return BezierCurve(CUBIC_TO_QUAD_E @ P), BezierCurve(CUBIC_TO_QUAD_F @ P)


def quartic_to_cubics(P):
    """Two cubics approximating the quartic with control points ``P``."""
    P = np.asarray(P, dtype=float).reshape(5, 2)
    return BezierCurve(QUARTIC_TO_CUBIC_E @ P), BezierCurve(QUARTIC_TO_CUBIC_F @ P)


def quad_kmax(Q):
    """Exact maximum |curvature| of quadratics, shape ``(..., 3, 2)``."""
    return kernels.quad_max_curvature(Q)


def cubic_kmax_proxy(P):
    """Cubic max curvature through its two quadratic approximants (batched)."""
    P = np.asarray(P, dtype=float)
    E = np.einsum("ij,...jk->...ik", CUBIC_TO_QUAD_E, P)
    F = np.einsum("ij,...jk->...ik", CUBIC_TO_QUAD_F, P)
    return np.maximum(quad_kmax(E), quad_kmax(F))


def quartic_kmax_proxy(P):
    """Quartic max curvature through two cubics and four quadratics (batched)."""
    P = np.asarray(P, dtype=float)
    E = np.einsum("ij,...jk->...ik", QUARTIC_TO_CUBIC_E, P)
    F = np.einsum("ij,...jk->...ik", QUARTIC_TO_CUBIC_F, P)
    return np.maximum(cubic_kmax_proxy(E), cubic_kmax_proxy(F))


def endpoint_curvatures(P):
    """Exact ``|curvature|`` at both ends (batched); ``inf`` where a leg vanishes.

    For degree ``n`` the end curvature is
    ``(n - 1) / n * |cross(p1 - p0, p2 - p1)| / |p1 - p0|^3``.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[-2] - 1
    if n < 2:
        return np.zeros(P.shape[:-2]), np.zeros(P.shape[:-2])

    def one(a, b, c):
        u = b - a
        w = c - b
        L = np.hypot(u[..., 0], u[..., 1])
        cr = np.abs(u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            k = (n - 1) / n * cr / L**3
        return np.where(L > TANGENT_EPS, k, np.inf)

    return one(P[..., 0, :], P[..., 1, :], P[..., 2, :]), one(P[..., -1, :], P[..., -2, :], P[..., -3, :])


def guarded_kmax(P):
    """Degree-reduction proxy, raised to the exact end curvatures.

    The approximants lose the end tangents, so on their own they reward
    control sets whose first or last leg collapses; the end terms rule
    those out.
    """
    k0, k1 = endpoint_curvatures(P)
    return np.maximum(kmax_proxy(P), np.maximum(k0, k1))


def kmax_proxy(P):
    """Degree-dispatched max curvature estimate for 3, 4 or 5 control points."""
    n = np.asarray(P).shape[-2]
    if n == 2:
        return np.zeros(np.asarray(P).shape[:-2])
    if n == 3:
        return quad_kmax(P)
    if n == 4:
        return cubic_kmax_proxy(P)
    if n == 5:
        return quartic_kmax_proxy(P)
    raise ValueError(f"no proxy for {n} control points")


# OptQuad1 ------------------------------------------------------------------

def opt_quad1_factor(cos_phi):
    return 0.5 * (-cos_phi + np.sqrt(cos_phi**2 + 8.0))


def opt_quad1(p0, p1, p2_end):
    """Third control point on ``p1 -> p2_end`` minimizing the quadratic's max curvature.

    The leg length is ``min(beta, factor(phi) * alpha)`` with ``alpha = |p0 p1|``,
    ``beta = |p1 p2_end|`` and ``phi`` the angle between the directions
    ``p1 - p0`` and ``p2_end - p1`` (0 when the path continues straight).
    """
    p0, p1, p2 = (np.asarray(x, dtype=float) for x in (p0, p1, p2_end))
    a = p1 - p0
    b = p2 - p1
    alpha = np.hypot(*a)
    beta = np.hypot(*b)
    if alpha <= 1e-12 or beta <= 1e-12:
        raise DegenerateInput("coincident control points")
    cos_phi = float(np.clip(a @ b / (alpha * beta), -1.0, 1.0))
    L = min(beta, opt_quad1_factor(cos_phi) * alpha)
    return p1 + (L / beta) * b


# generic locus search ------------------------------------------------------

@dataclass(frozen=True)
class Locus:
    """Segment ``a -> b`` of admissible positions (a point when ``a == b``)."""

    a: np.ndarray
    b: np.ndarray

    @staticmethod
    def of(x):
        if isinstance(x, Locus):
            return x
        x = np.asarray(x, dtype=float)
        if x.shape == (2,):
            return Locus(x, x)
        return Locus(x[0], x[1])

    @property
    def length(self):
        return float(np.hypot(*(self.b - self.a)))

    @property
    def free(self):
        return self.length > 1e-12

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return self.a + t[..., None] * (self.b - self.a)


@dataclass
class HullFilter:
    """Convex-hull clearance test against inflated discs.

    A control set passes when its hull clearance is at least ``floor``.
    """

    centers: np.ndarray
    radii: np.ndarray
    floor: float = 0.0

    @classmethod
    def none(cls):
        return cls(np.zeros((0, 2)), np.zeros(0), 0.0)

    def margin(self, P):
        if len(self.centers) == 0:
            return np.inf
        return float(kernels.hull_clearance(np.ascontiguousarray(P, dtype=float), self.centers, self.radii))

    def ok(self, P):
        return self.margin(P) >= self.floor

    def ok_batch(self, Pb):
        Pb = np.ascontiguousarray(Pb, dtype=float)
        if len(self.centers) == 0:
            return np.ones(Pb.shape[0], dtype=bool)
        return kernels.hull_clearance_batch(Pb, self.centers, self.radii) >= self.floor


_GRID = {1: 41, 2: 17, 3: 9, 4: 7}
_NEAR_ZERO = np.array([1e-4, 1e-3, 4e-3, 1.5e-2, 4e-2])


def optimize_loci(p0, loci, objective, hull=None, tol=1e-3):
    """Choose one point per locus minimizing ``objective`` over feasible hulls.

    Joint coarse grid over the free loci, then coordinate descent with
    golden-section line searches (to ``tol`` metres) from the best grid
    points.  Infeasible hulls score ``inf``.
    """
    hull = hull or HullFilter.none()
    loci = [Locus.of(x) for x in loci]
    p0 = np.asarray(p0, dtype=float)
    free = [i for i, L in enumerate(loci) if L.free]
    base_t = np.zeros(len(loci))
    if not free:
        return np.array([L.a for L in loci])

    def assemble(T):
        T = np.atleast_2d(T)
        pts = np.stack([loci[i].at(T[:, i]) for i in range(len(loci))], axis=1)
        return np.concatenate([np.broadcast_to(p0, (T.shape[0], 1, 2)), pts], axis=1)

    def score(T):
        P = assemble(T)
        f = np.asarray(objective(P), dtype=float).reshape(-1)
        ok = hull.ok_batch(P)
        return np.where(ok, f, np.inf)

    g = _GRID[min(len(free), 4)]
    # geometric points near 0 catch thin feasible slivers next to a tight leg
    axis = np.union1d(np.linspace(0.0, 1.0, g), _NEAR_ZERO)
    axes = [axis] * len(free)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(free))
    T = np.tile(base_t, (mesh.shape[0], 1))
    T[:, free] = mesh
    s = score(T)
    if not np.any(np.isfinite(s)):
        raise NoFeasiblePoint("every candidate hull collides")
    order = np.argsort(s, kind="stable")[:3]
    best_t, best_f = None, np.inf
    for k in order:
        if not np.isfinite(s[k]):
            continue
        t = T[k].copy()
        f = s[k]
        for _ in range(30):
            moved = 0.0
            for i in free:
                L = loci[i].length
                t_new, f_new = _line_search(lambda x: score(_with(t, i, x))[0], t[i], f, tol / L)
                moved = max(moved, abs(t_new - t[i]) * L)
                if f_new <= f:
                    t[i], f = t_new, f_new
            if moved < tol:
                break
        if f < best_f:
            best_t, best_f = t, f
    return assemble(best_t)[0, 1:]


def _with(t, i, x):
    u = t.copy()
    u[i] = x
    return u


def _line_search(f, t0, f0, tol):
    grid = np.linspace(0.0, 1.0, 21)
    vals = np.array([f(x) for x in grid])
    k = int(np.argmin(vals))
    if not np.isfinite(vals[k]):
        return t0, f0
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, 20)]
    x = golden_section(f, lo, hi, max(tol, 1e-9))
    fx = f(x)
    cands = [(fx, x), (vals[k], grid[k]), (f0, t0)]
    fbest, xbest = min(cands, key=lambda c: c[0])
    return xbest, fbest


def opt_cubic(p0, loci, hull=None):
    """Control points ``q1..q3`` minimizing the cubic's guarded max curvature."""
    if len(loci) != 3:
        raise ValueError("opt_cubic needs three loci")
    return optimize_loci(p0, loci, guarded_kmax, hull)


def opt_quar(p0, loci, hull=None):
    """Control points ``q1..q4`` minimizing the quartic's guarded max curvature."""
    if len(loci) != 4:
        raise ValueError("opt_quar needs four loci")
    return optimize_loci(p0, loci, guarded_kmax, hull)


# joins ---------------------------------------------------------------------

G1_TOL = 1e-6


def start_tangent(c):
    """First nonzero control leg of the curve (direction of P'(0))."""
    for d in np.diff(c.points, axis=0):
        if np.hypot(*d) > 1e-12:
            return d
    raise DegenerateTangent("curve collapses to a point")


def end_tangent(c):
    """Last nonzero control leg of the curve (direction of P'(1))."""
    for d in np.diff(c.points, axis=0)[::-1]:
        if np.hypot(*d) > 1e-12:
            return d
    raise DegenerateTangent("curve collapses to a point")


def angle_between(u, v):
    """Unsigned angle between two 2-D vectors, robust near 0 and pi."""
    return float(abs(np.arctan2(u[0] * v[1] - u[1] * v[0], u[0] * v[0] + u[1] * v[1])))


def join_is_g1(a, b, tol=G1_TOL):
    return angle_between(end_tangent(a), start_tangent(b)) <= tol
