"""Hot numeric kernels.

Each kernel has a pure-numpy implementation (``*_np``) and a numba
implementation (``*_nb``).  The public names pick one of them at import
time according to :data:`vessel_empc._jit.USE_NUMBA`.  Both paths are kept
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.

Model parameter vectors are ``p = [M1, M2, M3, D1, D2, D3]``; augmented
states are ``[x, y, psi, u, v, r, X, N]``; inputs are ``[Xdelta, Ndelta]``.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

NX = 8
NW = 2

_G = np.zeros((NX, NW))
_G[6, 0] = 1.0
_G[7, 1] = 1.0


# --------------------------------------------------------------------------
# vessel model: numpy
# --------------------------------------------------------------------------

def aug_rhs_np(X, W, p):
    M1, M2, M3, D1, D2, D3 = p
    psi, u, v, r = X[:, 2], X[:, 3], X[:, 4], X[:, 5]
    c, s = np.cos(psi), np.sin(psi)
    out = np.empty_like(X)
    out[:, 0] = u * c - v * s
    out[:, 1] = u * s + v * c
    out[:, 2] = r
    out[:, 3] = (M2 * v * r - D1 * u + X[:, 6]) / M1
    out[:, 4] = (-M1 * u * r - D2 * v) / M2
    out[:, 5] = ((M1 - M2) * u * v - D3 * r + X[:, 7]) / M3
    out[:, 6] = W[:, 0]
    out[:, 7] = W[:, 1]
    return out


def aug_jac_np(X, p):
    M1, M2, M3, D1, D2, D3 = p
    psi, u, v, r = X[:, 2], X[:, 3], X[:, 4], X[:, 5]
    c, s = np.cos(psi), np.sin(psi)
    J = np.zeros((X.shape[0], NX, NX))
    J[:, 0, 2] = -u * s - v * c
    J[:, 0, 3] = c
    J[:, 0, 4] = -s
    J[:, 1, 2] = u * c - v * s
    J[:, 1, 3] = s
    J[:, 1, 4] = c
    J[:, 2, 5] = 1.0
    J[:, 3, 3] = -D1 / M1
    J[:, 3, 4] = M2 * r / M1
    J[:, 3, 5] = M2 * v / M1
    J[:, 3, 6] = 1.0 / M1
    J[:, 4, 3] = -M1 * r / M2
    J[:, 4, 4] = -D2 / M2
    J[:, 4, 5] = -M1 * u / M2
    J[:, 5, 3] = (M1 - M2) * v / M3
    J[:, 5, 4] = (M1 - M2) * u / M3
    J[:, 5, 5] = -D3 / M3
    J[:, 5, 7] = 1.0 / M3
    return J


def rk4_np(X, W, h, p):
    k1 = aug_rhs_np(X, W, p)
    k2 = aug_rhs_np(X + 0.5 * h * k1, W, p)
    k3 = aug_rhs_np(X + 0.5 * h * k2, W, p)
    k4 = aug_rhs_np(X + h * k3, W, p)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_jac_np(X, W, h, p):
    """RK4 step and its Jacobians ``A = dX+/dX``, ``B = dX+/dW`` per row."""
    n = X.shape[0]
    eye = np.broadcast_to(np.eye(NX), (n, NX, NX))
    G = np.broadcast_to(_G, (n, NX, NW))

    k1 = aug_rhs_np(X, W, p)
    J = aug_jac_np(X, p)
    d1x, d1w = J, G

    X2 = X + 0.5 * h * k1
    k2 = aug_rhs_np(X2, W, p)
    J = aug_jac_np(X2, p)
    d2x = J @ (eye + 0.5 * h * d1x)
    d2w = 0.5 * h * (J @ d1w) + G

    X3 = X + 0.5 * h * k2
    k3 = aug_rhs_np(X3, W, p)
    J = aug_jac_np(X3, p)
    d3x = J @ (eye + 0.5 * h * d2x)
    d3w = 0.5 * h * (J @ d2w) + G

    X4 = X + h * k3
    k4 = aug_rhs_np(X4, W, p)
    J = aug_jac_np(X4, p)
    d4x = J @ (eye + h * d3x)
    d4w = h * (J @ d3w) + G

    Xn = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    A = eye + (h / 6.0) * (d1x + 2.0 * d2x + 2.0 * d3x + d4x)
    B = (h / 6.0) * (d1w + 2.0 * d2w + 2.0 * d3w + d4w)
    return Xn, A, B


# --------------------------------------------------------------------------
# vessel model: numba
# --------------------------------------------------------------------------

@njit
def _rhs1(x, w, p, out):
    M1, M2, M3, D1, D2, D3 = p[0], p[1], p[2], p[3], p[4], p[5]
    c = np.cos(x[2])
    s = np.sin(x[2])
    u, v, r = x[3], x[4], x[5]
    out[0] = u * c - v * s
    out[1] = u * s + v * c
    out[2] = r
    out[3] = (M2 * v * r - D1 * u + x[6]) / M1
    out[4] = (-M1 * u * r - D2 * v) / M2
    out[5] = ((M1 - M2) * u * v - D3 * r + x[7]) / M3
    out[6] = w[0]
    out[7] = w[1]


@njit
def _jac1(x, p, J):
    M1, M2, M3, D1, D2, D3 = p[0], p[1], p[2], p[3], p[4], p[5]
    c = np.cos(x[2])
    s = np.sin(x[2])
    u, v, r = x[3], x[4], x[5]
    for i in range(8):
        for j in range(8):
            J[i, j] = 0.0
    J[0, 2] = -u * s - v * c
    J[0, 3] = c
    J[0, 4] = -s
    J[1, 2] = u * c - v * s
    J[1, 3] = s
    J[1, 4] = c
    J[2, 5] = 1.0
    J[3, 3] = -D1 / M1
    J[3, 4] = M2 * r / M1
    J[3, 5] = M2 * v / M1
    J[3, 6] = 1.0 / M1
    J[4, 3] = -M1 * r / M2
    J[4, 4] = -D2 / M2
    J[4, 5] = -M1 * u / M2
    J[5, 3] = (M1 - M2) * v / M3
    J[5, 4] = (M1 - M2) * u / M3
    J[5, 5] = -D3 / M3
    J[5, 7] = 1.0 / M3


@njit
def _stage_sens(J, dprev_x, dprev_w, c, out_x, out_w):
    # out_x = J (I + c dprev_x);  out_w = c J dprev_w + G
    for i in range(8):
        for j in range(8):
            acc = J[i, j]
            for k in range(8):
                acc += c * J[i, k] * dprev_x[k, j]
            out_x[i, j] = acc
        for j in range(2):
            acc = 0.0
            for k in range(8):
                acc += c * J[i, k] * dprev_w[k, j]
            out_w[i, j] = acc
    out_w[6, 0] += 1.0
    out_w[7, 1] += 1.0


@njit
def rk4_nb(X, W, h, p):
    n = X.shape[0]
    out = np.empty((n, 8))
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    xs = np.empty(8)
    for i in range(n):
        x = X[i]
        w = W[i]
        _rhs1(x, w, p, k1)
        for j in range(8):
            xs[j] = x[j] + 0.5 * h * k1[j]
        _rhs1(xs, w, p, k2)
        for j in range(8):
            xs[j] = x[j] + 0.5 * h * k2[j]
        _rhs1(xs, w, p, k3)
        for j in range(8):
            xs[j] = x[j] + h * k3[j]
        _rhs1(xs, w, p, k4)
        for j in range(8):
            out[i, j] = x[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return out


@njit
def rk4_jac_nb(X, W, h, p):
    n = X.shape[0]
    Xn = np.empty((n, 8))
    A = np.empty((n, 8, 8))
    B = np.empty((n, 8, 2))
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    xs = np.empty(8)
    J = np.empty((8, 8))
    d1x = np.empty((8, 8))
    d2x = np.empty((8, 8))
    d3x = np.empty((8, 8))
    d4x = np.empty((8, 8))
    d1w = np.zeros((8, 2))
    d2w = np.empty((8, 2))
    d3w = np.empty((8, 2))
    d4w = np.empty((8, 2))
    d1w[6, 0] = 1.0
    d1w[7, 1] = 1.0
    for i in range(n):
        x = X[i]
        w = W[i]
        _rhs1(x, w, p, k1)
        _jac1(x, p, J)
        for a in range(8):
            for b in range(8):
                d1x[a, b] = J[a, b]
        for j in range(8):
            xs[j] = x[j] + 0.5 * h * k1[j]
        _rhs1(xs, w, p, k2)
        _jac1(xs, p, J)
        _stage_sens(J, d1x, d1w, 0.5 * h, d2x, d2w)
        for j in range(8):
            xs[j] = x[j] + 0.5 * h * k2[j]
        _rhs1(xs, w, p, k3)
        _jac1(xs, p, J)
        _stage_sens(J, d2x, d2w, 0.5 * h, d3x, d3w)
        for j in range(8):
            xs[j] = x[j] + h * k3[j]
        _rhs1(xs, w, p, k4)
        _jac1(xs, p, J)
        _stage_sens(J, d3x, d3w, h, d4x, d4w)
        c = h / 6.0
        for a in range(8):
            Xn[i, a] = x[a] + c * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            for b in range(8):
                A[i, a, b] = c * (d1x[a, b] + 2.0 * d2x[a, b] + 2.0 * d3x[a, b] + d4x[a, b])
            A[i, a, a] += 1.0
            for b in range(2):
                B[i, a, b] = c * (d1w[a, b] + 2.0 * d2w[a, b] + 2.0 * d3w[a, b] + d4w[a, b])
    return Xn, A, B


# --------------------------------------------------------------------------
# convex hull clearance
# --------------------------------------------------------------------------

def _hull_np(P):
    pts = sorted(set(map(tuple, np.asarray(P, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _seg_dist_np(C, a, b):
    d = b - a
    dd = d @ d
    if dd <= 0.0:
        return np.hypot(C[:, 0] - a[0], C[:, 1] - a[1])
    t = np.clip(((C - a) @ d) / dd, 0.0, 1.0)
    q = a + t[:, None] * d
    return np.hypot(C[:, 0] - q[:, 0], C[:, 1] - q[:, 1])


def hull_clearance_np(P, centers, radii):
    """min over discs of (distance from disc center to hull(P)) - radius."""
    if centers.shape[0] == 0:
        return np.inf
    H = _hull_np(P)
    m = H.shape[0]
    if m == 1:
        dist = np.hypot(centers[:, 0] - H[0, 0], centers[:, 1] - H[0, 1])
    elif m == 2:
        dist = _seg_dist_np(centers, H[0], H[1])
    else:
        dist = np.full(centers.shape[0], np.inf)
        inside = np.ones(centers.shape[0], dtype=bool)
        for i in range(m):
            a, b = H[i], H[(i + 1) % m]
            e = b - a
            cr = e[0] * (centers[:, 1] - a[1]) - e[1] * (centers[:, 0] - a[0])
            inside &= cr >= 0.0
            dist = np.minimum(dist, _seg_dist_np(centers, a, b))
        dist[inside] = 0.0
    return float(np.min(dist - radii))


def hull_clearance_batch_np(Pb, centers, radii):
    return np.array([hull_clearance_np(P, centers, radii) for P in Pb])


@njit
def _cross3(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@njit
def _hull_nb(P):
    k = P.shape[0]
    pts = P.copy()
    # insertion sort, lexicographic on (x, y)
    for i in range(1, k):
        x0, y0 = pts[i, 0], pts[i, 1]
        j = i - 1
        while j >= 0 and (pts[j, 0] > x0 or (pts[j, 0] == x0 and pts[j, 1] > y0)):
            pts[j + 1, 0] = pts[j, 0]
            pts[j + 1, 1] = pts[j, 1]
            j -= 1
        pts[j + 1, 0] = x0
        pts[j + 1, 1] = y0
    # drop exact duplicates
    u = np.empty((k, 2))
    m = 0
    for i in range(k):
        if m == 0 or pts[i, 0] != u[m - 1, 0] or pts[i, 1] != u[m - 1, 1]:
            u[m, 0] = pts[i, 0]
            u[m, 1] = pts[i, 1]
            m += 1
    if m <= 2:
        return u[:m].copy()
    H = np.empty((2 * m, 2))
    t = 0
    for i in range(m):
        while t >= 2 and _cross3(H[t - 2, 0], H[t - 2, 1], H[t - 1, 0], H[t - 1, 1], u[i, 0], u[i, 1]) <= 0.0:
            t -= 1
        H[t, 0] = u[i, 0]
        H[t, 1] = u[i, 1]
        t += 1
    lo = t + 1
    for i in range(m - 2, -1, -1):
        while t >= lo and _cross3(H[t - 2, 0], H[t - 2, 1], H[t - 1, 0], H[t - 1, 1], u[i, 0], u[i, 1]) <= 0.0:
            t -= 1
        H[t, 0] = u[i, 0]
        H[t, 1] = u[i, 1]
        t += 1
    return H[: t - 1].copy()


@njit
def _seg_dist1(cx, cy, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    dd = dx * dx + dy * dy
    t = 0.0
    if dd > 0.0:
        t = ((cx - ax) * dx + (cy - ay) * dy) / dd
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = ax + t * dx - cx
    qy = ay + t * dy - cy
    return np.sqrt(qx * qx + qy * qy)


@njit
def hull_clearance_nb(P, centers, radii):
    nc = centers.shape[0]
    if nc == 0:
        return np.inf
    H = _hull_nb(P)
    m = H.shape[0]
    best = np.inf
    for c in range(nc):
        cx = centers[c, 0]
        cy = centers[c, 1]
        if m == 1:
            d = np.sqrt((cx - H[0, 0]) ** 2 + (cy - H[0, 1]) ** 2)
        elif m == 2:
            d = _seg_dist1(cx, cy, H[0, 0], H[0, 1], H[1, 0], H[1, 1])
        else:
            inside = True
            d = np.inf
            for i in range(m):
                j = (i + 1) % m
                ax, ay, bx, by = H[i, 0], H[i, 1], H[j, 0], H[j, 1]
                if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) < 0.0:
                    inside = False
                di = _seg_dist1(cx, cy, ax, ay, bx, by)
                if di < d:
                    d = di
            if inside:
                d = 0.0
        v = d - radii[c]
        if v < best:
            best = v
    return best


@njit
def hull_clearance_batch_nb(Pb, centers, radii):
    n = Pb.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = hull_clearance_nb(Pb[i], centers, radii)
    return out


# --------------------------------------------------------------------------
# quadratic Bezier maximum curvature (closed form, vectorized)
# --------------------------------------------------------------------------

def quad_max_curvature(Q):
    """Exact max |curvature| of quadratic Beziers ``Q`` with shape (..., 3, 2).

    For a quadratic the hodograph cross product is constant, so the maximum
    sits where the hodograph is shortest.  Curves whose hodograph vanishes
    (cusps/reversals) return ``inf``; straight forward curves return 0.
    """
    Q = np.asarray(Q, dtype=float)
    a = Q[..., 1, :] - Q[..., 0, :]
    b = Q[..., 2, :] - Q[..., 1, :]
    d = b - a
    cr = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    dd = np.einsum("...i,...i->...", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(dd > 0.0, -np.einsum("...i,...i->...", a, d) / np.where(dd > 0.0, dd, 1.0), 0.0)
    th = np.clip(th, 0.0, 1.0)
    m = np.hypot(a[..., 0] + th * d[..., 0], a[..., 1] + th * d[..., 1])
    scale = np.maximum(np.hypot(a[..., 0], a[..., 1]), np.hypot(b[..., 0], b[..., 1]))
    degenerate = m <= 1e-12 * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = cr / (2.0 * m**3)
    k = np.where(degenerate, np.where(scale > 0.0, np.inf, 0.0), k)
    return k


if USE_NUMBA:
    rk4 = rk4_nb
    rk4_jac = rk4_jac_nb
    hull_clearance = hull_clearance_nb
    hull_clearance_batch = hull_clearance_batch_nb
else:
    rk4 = rk4_np
    rk4_jac = rk4_jac_np
    hull_clearance = hull_clearance_np
    hull_clearance_batch = hull_clearance_batch_np
