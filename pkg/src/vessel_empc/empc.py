"""Economic MPC: cost terms, multiple-shooting transcription and planning.

The stage cost combines propeller power ``k_ec (|F_l|^1.5 + |F_r|^1.5)``,
reference tracking, thrust-rate and thrust regularization.  Dynamics,
actuator boxes and disc clearance are hard constraints.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DimensionMismatch, SolveFailure
from .solver import SolverOptions, solve_ocp
from .vessel import VesselParams, thrust_split, wrap_angle

NX = 8
NW = 2

STATE_COLUMNS = ("x", "y", "psi", "u", "v", "r", "X", "N")


# --------------------------------------------------------------------------
# configuration and problem data
# --------------------------------------------------------------------------

def _diag(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 2:
        if a.shape != (n, n) or np.any(a != np.diag(np.diag(a))):
            raise ValueError(f"{name} must be a {n}x{n} diagonal matrix")
        a = np.diag(a).copy()
    a = a.reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must have {n} diagonal entries")
    if np.any(a < 0.0) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} entries must be finite and >= 0")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmpcConfig:
    """Weights, horizon, radii and solver settings of the planner.

    Weight matrices are diagonal and stored as their diagonals.
    """

    Q: tuple = (10.0, 10.0, 20.0, 1.0, 1.0, 1.0)
    P: tuple = (10.0, 10.0, 20.0, 1.0, 1.0, 1.0)
    R_delta: tuple = (500.0, 500.0)
    R_u: tuple = (0.1, 0.1)
    k_ec: float = 0.0
    T_p: float = 20.0
    dt: float = 0.2
    r_c: float = 0.0
    r_v: float = 0.77
    r_o_default: float = 0.15
    smoothing_eps: float = 1e-4
    max_iter: int = 150
    tol_kkt: float = 1e-4
    tol_defect: float = 1e-5
    tol_box: float = 1e-6
    tol_margin: float = 1e-5
    rate_bounds: bool = True

    def __post_init__(self):
        object.__setattr__(self, "Q", _diag(self.Q, 6, "Q"))
        object.__setattr__(self, "P", _diag(self.P, 6, "P"))
        object.__setattr__(self, "R_delta", _diag(self.R_delta, 2, "R_delta"))
        object.__setattr__(self, "R_u", _diag(self.R_u, 2, "R_u"))
        if not self.k_ec >= 0.0:
            raise ValueError("k_ec must be >= 0")
        if not (self.dt > 0.0 and self.T_p > 0.0):
            raise ValueError("T_p and dt must be positive")
        if abs(self.T_p / self.dt - round(self.T_p / self.dt)) > 1e-9:
            raise ValueError("T_p must be a multiple of dt")
        if self.smoothing_eps < 0.0:
            raise ValueError("smoothing_eps must be >= 0")
        for name in ("r_c", "r_v", "r_o_default"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def H(self):
        return int(round(self.T_p / self.dt))

    @property
    def inflation(self):
        return self.r_c + self.r_v

    def solver_options(self):
        return SolverOptions(max_iter=self.max_iter, tol_kkt=self.tol_kkt, tol_defect=self.tol_defect)


@dataclass
class PlanningProblem:
    """One planning instance.

    Parameters
    ----------
    a0 : ndarray (8,)
        Augmented state at ``t_start``.
    reference : ndarray (H + 1, 6) or ReferenceTrajectory
        Reference states at the knots ``t_start + k dt``; a trajectory is
        windowed from ``t_start`` when the problem is transcribed.
    centers, radii : ndarray
        Known obstacle discs.
    params : VesselParams
    t_start : float
    tau_ref : ndarray (H + 1, 2), optional
        Thrust reference for the ``R_u`` term (zero by default).
    """

    a0: np.ndarray
    reference: np.ndarray
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    params: VesselParams = field(default_factory=VesselParams)
    t_start: float = 0.0
    tau_ref: Optional[np.ndarray] = None

    def reference_rows(self, H):
        """Reference samples on the ``H + 1`` knots of the horizon."""
        if hasattr(self.reference, "window"):
            return np.asarray(self.reference.window(self.t_start, H + 1), dtype=float)
        if self.reference.shape[0] != H + 1:
            raise DimensionMismatch(f"reference has {self.reference.shape[0]} rows, horizon needs {H + 1}")
        return self.reference

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=float).reshape(NX)
        if not hasattr(self.reference, "window"):
            self.reference = np.asarray(self.reference, dtype=float)
            if self.reference.ndim != 2 or self.reference.shape[1] != 6:
                raise DimensionMismatch(f"reference must be (H+1, 6), got {self.reference.shape}")
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise DimensionMismatch("centers and radii differ in length")


# --------------------------------------------------------------------------
# cost terms
# --------------------------------------------------------------------------

def _phi(F, eps):
    return (F * F + eps) ** 0.75 - eps ** 0.75


def _phi_d(F, eps):
    return 1.5 * F * (F * F + eps) ** -0.25 if eps > 0 else 1.5 * np.sign(F) * np.sqrt(np.abs(F))


def _phi_dd(F, eps):
    q = F * F + eps
    with np.errstate(divide="ignore"):
        return 1.5 * (0.5 * F * F + eps) * q ** -1.25


def economic_cost(X, N, d, k_ec, smoothing_eps=1e-4):
    """``k_ec (phi(F_l) + phi(F_r))`` with ``phi(F) = (F^2+eps)^0.75 - eps^0.75``."""
    Fl, Fr = thrust_split(np.asarray(X, dtype=float), np.asarray(N, dtype=float), d)
    return k_ec * (_phi(Fl, smoothing_eps) + _phi(Fr, smoothing_eps))


def actuator_power(X, N, d, k_c=0.95):
    """Electrical power ``k_c (|F_l|^1.5 + |F_r|^1.5)`` in W."""
    Fl, Fr = thrust_split(np.asarray(X, dtype=float), np.asarray(N, dtype=float), d)
    return k_c * (np.abs(Fl) ** 1.5 + np.abs(Fr) ** 1.5)


def state_error(s, s_d):
    """``s - s_d`` with the heading component wrapped to (-pi, pi]."""
    e = np.asarray(s, dtype=float)[..., :6] - np.asarray(s_d, dtype=float)[..., :6]
    e[..., 2] = wrap_angle(e[..., 2])
    return e


def tracking_cost(s, s_d, Q):
    """``|s - s_d|^2_Q`` with wrapped heading error."""
    e = state_error(s, s_d)
    return np.sum(_diag(Q, 6, "Q") * e * e, axis=-1)


def terminal_cost(s, s_d, P):
    """Terminal penalty; same form as :func:`tracking_cost`."""
    return tracking_cost(s, s_d, P)


def collision_margin(pos, center, r_o, r_c=0.0, r_v=0.77):
    """``|pos - center|^2 - (r_c + r_v + r_o)^2``; feasible when >= 0."""
    d = np.asarray(pos, dtype=float) - np.asarray(center, dtype=float)
    return np.sum(d * d, axis=-1) - (r_c + r_v + r_o) ** 2


# --------------------------------------------------------------------------
# transcription
# --------------------------------------------------------------------------

@dataclass
class _Eval:
    f: float
    grad: np.ndarray = None
    hess: np.ndarray = None
    c: np.ndarray = None
    A: np.ndarray = None
    B: np.ndarray = None
    g: np.ndarray = None
    g_idx: np.ndarray = None
    g_coef: np.ndarray = None
    g_curv: np.ndarray = None


class OcpNlp:
    """Multiple-shooting transcription of one planning problem.

    The decision vector stacks blocks ``[w_k, x_{k+1}]`` for
    ``k = 0..H-1``: the thrust rate applied on ``[t_k, t_{k+1})`` and the
    state knot it leads to.  ``x_0`` is fixed to ``a0``.

    Inequality rows (all scaled to be dimensionless, feasible when >= 0):
    thrust-rate box (4 per step, optional), thrust box (4 per knot 1..H)
    and disc clearance ``(|p - c|^2 - R^2) / R^2`` (one per obstacle per
    knot 1..H).
    """

    nx = NX
    nw = NW

    def __init__(self, prob, cfg, rate_bounds=None, tau_ref=None, R_u=None, Q=None, P=None,
                 R_delta=None, k_ec=None):
        H = cfg.H
        self.ref = prob.reference_rows(H)
        self.H = H
        self.dt = cfg.dt
        self.cfg = cfg
        self.prob = prob
        self.a0 = prob.a0
        self.p = prob.params.as_array()
        self.d = prob.params.d
        self.eps = cfg.smoothing_eps
        self.k_ec = cfg.k_ec if k_ec is None else k_ec
        self.Q = cfg.Q if Q is None else _diag(Q, 6, "Q")
        self.P = cfg.P if P is None else _diag(P, 6, "P")
        self.Rd = cfg.R_delta if R_delta is None else _diag(R_delta, 2, "R_delta")
        self.Ru = cfg.R_u if R_u is None else _diag(R_u, 2, "R_u")
        tr = prob.tau_ref if tau_ref is None else tau_ref
        self.tau_ref = np.zeros((H + 1, 2)) if tr is None else np.asarray(tr, dtype=float).reshape(H + 1, 2)
        self.tau_lim = prob.params.tau_lim
        self.rate_lim = prob.params.rate_lim
        self.rate_bounds = cfg.rate_bounds if rate_bounds is None else rate_bounds
        self.centers = prob.centers
        self.R = prob.radii + cfg.inflation
        self.n = H * (NX + NW)
        self.n_defects = NX * H
        self._build_ineq_structure()

    # layout -------------------------------------------------------------
    def w_index(self, k):
        return k * (NX + NW) + np.arange(NW)

    def x_index(self, j):
        """Indices of state knot ``j >= 1``."""
        return (j - 1) * (NX + NW) + NW + np.arange(NX)

    def unpack(self, z):
        Z = np.asarray(z, dtype=float).reshape(self.H, NX + NW)
        W = Z[:, :NW]
        X = np.vstack([self.a0[None, :], Z[:, NW:]])
        return X, W

    def pack(self, X, W):
        Z = np.hstack([np.asarray(W, dtype=float).reshape(self.H, NW), np.asarray(X, dtype=float)[1:]])
        return Z.ravel().copy()

    # inequality structure ----------------------------------------------
    def _build_ineq_structure(self):
        H = self.H
        idx, coef, off = [], [], []
        if self.rate_bounds:
            for k in range(H):
                wi = self.w_index(k)
                for a in range(NW):
                    L = self.rate_lim[a]
                    idx += [(wi[a], wi[a]), (wi[a], wi[a])]
                    coef += [(-1.0 / L, 0.0), (1.0 / L, 0.0)]
                    off += [1.0, 1.0]
        self.n_rate = len(off)
        for j in range(1, H + 1):
            xi = self.x_index(j)
            for a in range(2):
                L = self.tau_lim[a]
                idx += [(xi[6 + a], xi[6 + a]), (xi[6 + a], xi[6 + a])]
                coef += [(-1.0 / L, 0.0), (1.0 / L, 0.0)]
                off += [1.0, 1.0]
        self.n_box = len(off)
        self.lin_idx = np.array(idx, dtype=np.int64).reshape(-1, 2)
        self.lin_coef = np.array(coef, dtype=float).reshape(-1, 2)
        self.lin_off = np.array(off, dtype=float)
        m = len(self.centers)
        self.n_obs = m
        if m:
            jj = np.repeat(np.arange(1, H + 1), m)
            base = (jj - 1) * (NX + NW) + NW
            self.col_idx = np.stack([base, base + 1], axis=1).astype(np.int64)
        else:
            self.col_idx = np.zeros((0, 2), dtype=np.int64)
        self.m_ineq = self.n_box + H * m

    def _ineq(self, z, X, derivs):
        g_lin = self.lin_off + self.lin_coef[:, 0] * z[self.lin_idx[:, 0]]
        if self.n_obs == 0:
            if not derivs:
                return g_lin, None, None, None
            return g_lin, self.lin_idx, self.lin_coef, np.zeros(len(g_lin))
        P = X[1:, :2]
        D = P[:, None, :] - self.centers[None, :, :]
        R2 = self.R ** 2
        g_col = ((D ** 2).sum(axis=-1) - R2[None, :]) / R2[None, :]
        g = np.concatenate([g_lin, g_col.ravel()])
        if not derivs:
            return g, None, None, None
        cc = (2.0 * D / R2[None, :, None]).reshape(-1, 2)
        curv = np.concatenate([np.zeros(len(g_lin)), np.tile(2.0 / R2, self.H)])
        return g, np.vstack([self.lin_idx, self.col_idx]), np.vstack([self.lin_coef, cc]), curv

    # objective -----------------------------------------------------------
    def stage_costs(self, X, W):
        """Per-step ``(economic, tracking)`` costs (without ``dt``), steps ``0..H-1``."""
        econ = economic_cost(X[:-1, 6], X[:-1, 7], self.d, self.k_ec, self.eps)
        e = state_error(X[:-1], self.ref[:-1])
        et = X[:-1, 6:8] - self.tau_ref[:-1]
        track = (self.Q * e * e).sum(axis=1) + (self.Ru * et * et).sum(axis=1)
        return econ, track

    def objective_value(self, X, W):
        econ, track = self.stage_costs(X, W)
        reg = (self.Rd * W * W).sum(axis=1)
        eH = state_error(X[-1], self.ref[-1])
        return self.dt * float((econ + track + reg).sum()) + float((self.P * eH * eH).sum())

    def _objective_derivs(self, X, W):
        H, dt = self.H, self.dt
        nb = NX + NW
        grad = np.zeros((H, nb))
        hess = np.zeros((H, nb, nb))
        grad[:, :NW] = 2.0 * dt * self.Rd * W
        hess[:, np.arange(NW), np.arange(NW)] = 2.0 * dt * self.Rd
        # knots 1..H-1 carry stage costs, knot H the terminal cost
        Xs = X[1:H]
        e = state_error(Xs, self.ref[1:H])
        gx = np.zeros((H, NX))
        hx = np.zeros((H, NX, NX))
        gx[:-1, :6] = 2.0 * dt * self.Q * e
        hx[:-1, np.arange(6), np.arange(6)] = 2.0 * dt * self.Q
        et = Xs[:, 6:8] - self.tau_ref[1:H]
        gx[:-1, 6:8] += 2.0 * dt * self.Ru * et
        hx[:-1, [6, 7], [6, 7]] += 2.0 * dt * self.Ru
        if self.k_ec > 0.0:
            Fl, Fr = thrust_split(Xs[:, 6], Xs[:, 7], self.d)
            tl = np.array([0.5, 0.5 / self.d])
            tr = np.array([0.5, -0.5 / self.d])
            dl, dr = _phi_d(Fl, self.eps), _phi_d(Fr, self.eps)
            ddl, ddr = _phi_dd(Fl, self.eps), _phi_dd(Fr, self.eps)
            c = dt * self.k_ec
            gx[:-1, 6:8] += c * (dl[:, None] * tl + dr[:, None] * tr)
            hx[:-1, 6:8, 6:8] += c * (ddl[:, None, None] * np.outer(tl, tl) + ddr[:, None, None] * np.outer(tr, tr))
        eH = state_error(X[-1], self.ref[-1])
        gx[-1, :6] = 2.0 * self.P * eH
        hx[-1, np.arange(6), np.arange(6)] = 2.0 * self.P
        grad[:, NW:] = gx
        hess[:, NW:, NW:] = hx
        return grad.ravel(), hess

    # public evaluators ---------------------------------------------------
    def _step(self, X, W, jac):
        if jac:
            return kernels.rk4_jac(np.ascontiguousarray(X[:-1]), np.ascontiguousarray(W), self.dt, self.p)
        return kernels.rk4(np.ascontiguousarray(X[:-1]), np.ascontiguousarray(W), self.dt, self.p), None, None

    def evaluate(self, z, derivs=True):
        X, W = self.unpack(z)
        Xn, A, B = self._step(X, W, derivs)
        c = (Xn - X[1:]).ravel()
        f = self.objective_value(X, W)
        g, gi, gc, gk = self._ineq(np.asarray(z, dtype=float), X, derivs)
        if not derivs:
            return _Eval(f, c=c, g=g)
        grad, hess = self._objective_derivs(X, W)
        return _Eval(f, grad, hess, c, A, B, g, gi, gc, gk)

    def merit_parts(self, z):
        ev = self.evaluate(z, False)
        return ev.f, ev.c, ev.g

    def objective(self, z):
        return self.evaluate(z, False).f

    def gradient(self, z):
        X, W = self.unpack(z)
        return self._objective_derivs(X, W)[0]

    def eq_constraints(self, z):
        return self.evaluate(z, False).c

    def eq_jacobian(self, z):
        """Dense defect Jacobian ``(8H, n)``."""
        X, W = self.unpack(z)
        _, A, B = self._step(X, W, True)
        J = np.zeros((self.n_defects, self.n))
        for k in range(self.H):
            r = slice(NX * k, NX * (k + 1))
            J[r, self.w_index(k)] = B[k]
            J[r, self.x_index(k + 1)] = -np.eye(NX)
            if k > 0:
                J[r, self.x_index(k)] = A[k]
        return J

    def ineq_constraints(self, z):
        X, _ = self.unpack(z)
        return self._ineq(np.asarray(z, dtype=float), X, False)[0]

    def ineq_jacobian(self, z):
        """Dense inequality Jacobian ``(m, n)``."""
        X, _ = self.unpack(z)
        _, gi, gc, _ = self._ineq(np.asarray(z, dtype=float), X, True)
        J = np.zeros((self.m_ineq, self.n))
        rows = np.arange(self.m_ineq)
        np.add.at(J, (rows, gi[:, 0]), gc[:, 0])
        np.add.at(J, (rows, gi[:, 1]), gc[:, 1])
        return J

    # dual bookkeeping -----------------------------------------------------
    def split_duals(self, mu):
        """Multipliers per knot: rate ``(H, 4)``, box ``(H, 4)``, clearance ``(H, m)``."""
        mu = np.asarray(mu, dtype=float)
        H = self.H
        rate = mu[:self.n_rate].reshape(H, -1) if self.n_rate else np.zeros((H, 0))
        box = mu[self.n_rate:self.n_box].reshape(H, 4)
        col = mu[self.n_box:].reshape(H, self.n_obs)
        return rate, box, col

    def join_duals(self, rate, box, col):
        return np.concatenate([np.asarray(rate).ravel(), np.asarray(box).ravel(), np.asarray(col).ravel()])


def transcribe(prob, cfg):
    """Multiple-shooting NLP for ``prob`` (see :class:`OcpNlp`)."""
    return OcpNlp(prob, cfg)


# --------------------------------------------------------------------------
# planned motions
# --------------------------------------------------------------------------

@dataclass
class PlannedMotion:
    """States on ``t_start + k dt`` (``H + 1`` knots) and the rates between them."""

    t_start: float
    dt: float
    states: np.ndarray
    rates: np.ndarray
    econ: np.ndarray = None
    track: np.ndarray = None
    iterations: int = 0
    converged: bool = True
    residuals: dict = field(default_factory=dict)
    duals: Optional[tuple] = None
    obstacle_ids: Optional[tuple] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, NX)
        self.rates = np.asarray(self.rates, dtype=float).reshape(-1, NW)
        if len(self.rates) != len(self.states) - 1:
            raise DimensionMismatch("rates must have one row fewer than states")
        H = len(self.rates)
        self.econ = np.zeros(H) if self.econ is None else np.asarray(self.econ, dtype=float)
        self.track = np.zeros(H) if self.track is None else np.asarray(self.track, dtype=float)

    @property
    def H(self):
        return len(self.rates)

    @property
    def t_end(self):
        return self.t_start + self.dt * self.H

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.H + 1)

    def index_of(self, t):
        k = (t - self.t_start) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-6:
            raise ValueError(f"t={t} is not on the knot grid of this motion")
        return kr

    def covers(self, t):
        return self.t_start - 1e-9 <= t <= self.t_end + 1e-9

    def state_at(self, t):
        """Knot state at grid time ``t`` (must be covered)."""
        from .errors import ReferenceExpired

        k = self.index_of(t)
        if not 0 <= k <= self.H:
            raise ReferenceExpired(f"t={t} outside motion [{self.t_start}, {self.t_end}]")
        return self.states[k].copy()

    def rate_at(self, t):
        k = self.index_of(t)
        return self.rates[min(max(k, 0), self.H - 1)].copy()

    def segment(self, t0, t1):
        """Sub-motion on the knot range ``[t0, t1]``."""
        i, j = self.index_of(t0), self.index_of(t1)
        if not 0 <= i <= j <= self.H:
            raise ValueError(f"[{t0}, {t1}] not inside [{self.t_start}, {self.t_end}]")
        return PlannedMotion(self.t_start + i * self.dt, self.dt, self.states[i:j + 1], self.rates[i:j],
                             self.econ[i:j], self.track[i:j], self.iterations, self.converged, dict(self.residuals))

    def shifted(self, t_new, H, params):
        """Motion restarted at ``t_new`` over ``H`` steps; the tail holds zero rates."""
        k = self.index_of(t_new)
        if not 0 <= k <= self.H:
            raise ValueError(f"t={t_new} outside motion")
        S = list(self.states[k:k + H + 1])
        Wr = list(self.rates[k:k + H])
        p = params.as_array()
        while len(S) < H + 1:
            nxt = kernels.rk4(np.ascontiguousarray(S[-1][None, :]), np.zeros((1, NW)), self.dt, p)[0]
            S.append(nxt)
            Wr.append(np.zeros(NW))
        return PlannedMotion(t_new, self.dt, np.array(S), np.array(Wr[:H]), converged=False)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + STATE_COLUMNS + ("Xdelta", "Ndelta", "econ", "track"))
            for k, t in enumerate(self.times):
                if k < self.H:
                    tail = [*self.rates[k], self.econ[k], self.track[k]]
                else:
                    tail = [0.0, 0.0, 0.0, 0.0]
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.states[k]] +
                           [repr(float(v)) for v in tail])


def dynamics_defects(motion, params):
    """Per-step RK4 defects of a motion, shape ``(H, 8)``."""
    S = motion.states
    Xn = kernels.rk4(np.ascontiguousarray(S[:-1]), np.ascontiguousarray(motion.rates), motion.dt, params.as_array())
    return Xn - S[1:]


def motion_margins(motion, centers, radii, cfg):
    """Smallest :func:`collision_margin` over knots ``1..H`` (``inf`` without obstacles)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        return np.inf
    m = collision_margin(motion.states[1:, None, :2], centers[None, :, :], np.asarray(radii)[None, :],
                         cfg.r_c, cfg.r_v)
    return float(m.min())


# --------------------------------------------------------------------------
# solve / plan
# --------------------------------------------------------------------------

def _rollout(a0, W, dt, params, rate_lim, tau_lim):
    # exact re-simulation with rates clipped to both boxes: zero defects by construction
    H = len(W)
    p = params.as_array()
    S = np.empty((H + 1, NX))
    S[0] = a0
    Wc = np.array(W, dtype=float)
    for k in range(H):
        lo = np.maximum(-rate_lim, (-tau_lim - S[k, 6:8]) / dt) if rate_lim is not None else (-tau_lim - S[k, 6:8]) / dt
        hi = np.minimum(rate_lim, (tau_lim - S[k, 6:8]) / dt) if rate_lim is not None else (tau_lim - S[k, 6:8]) / dt
        Wc[k] = np.minimum(np.maximum(Wc[k], np.minimum(lo, hi)), np.maximum(lo, hi))
        S[k + 1] = kernels.rk4(np.ascontiguousarray(S[k][None, :]), np.ascontiguousarray(Wc[k][None, :]), dt, p)[0]
    return S, Wc


def motion_from_solution(nlp, z, result):
    X, W = nlp.unpack(z)
    rl = nlp.rate_lim if nlp.rate_bounds else None
    S, Wc = _rollout(nlp.a0, W, nlp.dt, nlp.prob.params, rl, nlp.tau_lim)
    econ, track = nlp.stage_costs(S, Wc)
    duals = nlp.split_duals(result.mu) if result is not None else None
    return PlannedMotion(nlp.prob.t_start, nlp.dt, S, Wc, econ, track,
                         result.iterations if result else 0, result.converged if result else False,
                         dict(result.residuals) if result else {}, duals)


def _check(motion, nlp, cfg):
    S = motion.states
    defect = float(np.abs(dynamics_defects(motion, nlp.prob.params)).max())
    box = float(max(np.max(np.abs(S[1:, 6:8]) - nlp.tau_lim), 0.0))
    if nlp.rate_bounds:
        box = max(box, float(max(np.max(np.abs(motion.rates) - nlp.rate_lim), 0.0)))
    margin = motion_margins(motion, nlp.prob.centers, nlp.prob.radii, cfg)
    return {"max_defect": defect, "max_box": box, "min_margin": margin}


def solve(nlp, initial_guess, cfg, mu0=None):
    """Run the SQP solver and return a verified :class:`PlannedMotion`.

    Raises
    ------
    SolveFailure
        ``MaxIterations`` when the cap is hit on an infeasible iterate,
        ``Infeasible`` when the penalty saturates, ``NumericError`` on
        non-finite values.
    """
    opts = cfg.solver_options()
    res = solve_ocp(nlp, initial_guess, mu0, opts)
    motion = motion_from_solution(nlp, res.z, res)
    chk = _check(motion, nlp, cfg)
    motion.residuals.update(chk)
    feasible = chk["max_defect"] <= cfg.tol_defect and chk["max_box"] <= cfg.tol_box and \
        chk["min_margin"] >= -cfg.tol_margin
    if not feasible:
        reason = "MaxIterations" if not res.converged else "Infeasible"
        if res.residuals.get("rho", 0.0) >= opts.rho_max:
            reason = "Infeasible"
        raise SolveFailure(reason, motion, motion.residuals)
    return motion


def _unwrap_from(psi0, psi):
    out = np.empty_like(psi)
    prev = psi0
    for i, a in enumerate(psi):
        prev = prev + wrap_angle(a - prev)
        out[i] = prev
    return out


def initial_guess_from_reference(prob, H, params):
    """States on the reference with steady-state thrust, zero rates."""
    ref = prob.reference_rows(H)
    X = np.zeros((H + 1, NX))
    X[0] = prob.a0
    X[1:, :6] = ref[1:]
    X[1:, 2] = _unwrap_from(prob.a0[2], ref[1:, 2])
    X[1:, 6] = np.clip(params.D1 * ref[1:, 3], -params.X_lim, params.X_lim)
    X[1:, 7] = np.clip(params.D3 * ref[1:, 5], -params.N_lim, params.N_lim)
    W = np.zeros((H, NW))
    return X, W


def _shift_duals(duals, k, H, n_obs):
    rate, box, col = duals
    def sh(a, width):
        out = np.zeros((H, width))
        if a is None or a.shape[1] != width:
            return out
        src = a[k:k + H]
        out[:len(src)] = src
        return out
    return sh(rate, rate.shape[1] if rate is not None else 4), sh(box, 4), sh(col, n_obs)


def plan(prob, cfg, warm_start=None):
    """Solve the planning problem, warm-started from a previous motion if given."""
    nlp = transcribe(prob, cfg)
    H = nlp.H
    mu0 = None
    if warm_start is not None and warm_start.covers(prob.t_start):
        ws = warm_start.shifted(prob.t_start, H, prob.params)
        X, W = ws.states.copy(), ws.rates.copy()
        X[0] = prob.a0
        if warm_start.duals is not None:
            k = warm_start.index_of(prob.t_start)
            rate, box, col = _shift_duals(warm_start.duals, k, H, nlp.n_obs)
            if nlp.n_rate == 0:
                rate = np.zeros((H, 0))
            mu0 = nlp.join_duals(rate, box, col)
    else:
        X, W = initial_guess_from_reference(prob, H, prob.params)
    return solve(nlp, nlp.pack(X, W), cfg, mu0)
