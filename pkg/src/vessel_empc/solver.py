"""SQP with augmented-Lagrangian inequalities for multiple-shooting problems.

The solver works on problems whose decision vector is a sequence of
``H`` blocks ``z_k = [w_k, x_{k+1}]`` (control rate, next state), with

* objective ``f(z)`` whose Hessian approximation is block diagonal,
* equality constraints ``x_{k+1} = F(x_k, w_k)`` with ``x_0`` fixed,
* inequality constraints ``g(z) >= 0`` where every row touches at most
  two variables of one block.

Each iteration solves the Newton-KKT system of the augmented Lagrangian
subject to the linearized dynamics with a sparse LU factorization and
takes an Armijo step on an l1 merit function.  Multipliers are updated
when the subproblem is solved to the current accuracy.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolveFailure


@dataclass
class SolverOptions:
    """Tolerances and limits.

    ``tol_kkt`` is relative to ``max(1, |grad f|_inf)``; ``tol_box`` and
    ``tol_margin`` are checked by the problem on the final iterate.
    """

    max_iter: int = 150
    tol_kkt: float = 1e-4
    tol_defect: float = 1e-5
    tol_ineq: float = 1e-6
    rho0: float = 1e4
    rho_max: float = 1e10
    reg: float = 1e-6
    armijo: float = 1e-4
    max_backtrack: int = 30


@dataclass
class SolveResult:
    z: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    iterations: int
    converged: bool
    residuals: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


class _Pattern:
    # sparsity of the KKT matrix [[H, J^T], [J, 0]] for a given horizon
    def __init__(self, H, nx, nw):
        nb = nx + nw
        n = H * nb
        m = H * nx
        rows, cols = [], []
        bi, bj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
        for k in range(H):
            rows.append((k * nb + bi).ravel())
            cols.append((k * nb + bj).ravel())
        self.n_hess = H * nb * nb
        jr, jc = [], []
        for k in range(H):
            r0 = k * nx
            ri, ci = np.meshgrid(np.arange(nx), np.arange(nw), indexing="ij")
            jr.append((r0 + ri).ravel())
            jc.append((k * nb + ci).ravel())                      # B_k
            jr.append(r0 + np.arange(nx))
            jc.append(k * nb + nw + np.arange(nx))                # -I
            if k > 0:
                ri, ci = np.meshgrid(np.arange(nx), np.arange(nx), indexing="ij")
                jr.append((r0 + ri).ravel())
                jc.append(((k - 1) * nb + nw + ci).ravel())       # A_k
        jr = np.concatenate(jr)
        jc = np.concatenate(jc)
        self.n_jac = len(jr)
        R = np.concatenate(rows + [n + jr, jc])
        C = np.concatenate(cols + [jc, n + jr])
        nnz = len(R)
        M = sp.coo_matrix((np.arange(1, nnz + 1, dtype=float), (R, C)), shape=(n + m, n + m)).tocsc()
        self.order = M.data.astype(np.int64) - 1
        self.indices = M.indices
        self.indptr = M.indptr
        self.shape = M.shape
        self.jr, self.jc = jr, jc
        self.n, self.m = n, m

    def jac_values(self, A, B, nx):
        H = B.shape[0]
        parts = []
        negI = -np.ones(nx)
        for k in range(H):
            parts.append(B[k].ravel())
            parts.append(negI)
            if k > 0:
                parts.append(A[k].ravel())
        return np.concatenate(parts)

    def kkt(self, hess_blocks, jac_vals):
        data = np.concatenate([hess_blocks.ravel(), jac_vals, jac_vals])
        return sp.csc_matrix((data[self.order], self.indices, self.indptr), shape=self.shape)

    def jac(self, jac_vals):
        return sp.csr_matrix((jac_vals, (self.jr, self.jc)), shape=(self.m, self.n))


_PATTERNS = {}


def _pattern(H, nx, nw):
    key = (H, nx, nw)
    if key not in _PATTERNS:
        _PATTERNS[key] = _Pattern(H, nx, nw)
    return _PATTERNS[key]


def _al_terms(g, mu, rho):
    # psi(g) = -mu g + rho/2 g^2 while mu - rho g > 0, else -mu^2 / (2 rho)
    t = mu - rho * g
    act = t > 0.0
    val = np.where(act, -mu * g + 0.5 * rho * g * g, -0.5 * mu * mu / rho)
    return val.sum(), np.where(act, t, 0.0), act


def _g_grad(ev, muhat, n):
    # J_g^T muhat with rows touching (idx0, idx1)
    out = np.zeros(n)
    np.add.at(out, ev.g_idx[:, 0], ev.g_coef[:, 0] * muhat)
    np.add.at(out, ev.g_idx[:, 1], ev.g_coef[:, 1] * muhat)
    return out


def _add_al_hessian(blocks, ev, act, rho, nb):
    idx = ev.g_idx[act]
    coef = ev.g_coef[act]
    if len(idx) == 0:
        return
    blk = idx[:, 0] // nb
    la = idx[:, 0] % nb
    lb = idx[:, 1] % nb
    ca, cb = coef[:, 0], coef[:, 1]
    np.add.at(blocks, (blk, la, la), rho * ca * ca)
    np.add.at(blocks, (blk, lb, lb), rho * cb * cb)
    np.add.at(blocks, (blk, la, lb), rho * ca * cb)
    np.add.at(blocks, (blk, lb, la), rho * ca * cb)


def _convexify(blocks, reg):
    # shift every block so its smallest eigenvalue is at least reg
    lo = np.linalg.eigvalsh(blocks)[:, 0]
    shift = np.maximum(reg - lo, 0.0)
    blocks[:, np.arange(blocks.shape[1]), np.arange(blocks.shape[1])] += shift[:, None]


def solve_ocp(nlp, z0, mu0=None, opts=None):
    """Minimize ``nlp`` from ``z0``.

    Parameters
    ----------
    nlp : object
        Provides ``H``, ``nx``, ``nw``, ``m_ineq``, ``evaluate(z, derivs)``
        and ``merit_parts(z)``; see :class:`vessel_empc.empc.OcpNlp`.
    z0 : ndarray
    mu0 : ndarray, optional
        Initial inequality multipliers.

    Returns
    -------
    SolveResult
        ``converged`` is False when the iteration cap was hit.

    Raises
    ------
    SolveFailure
        ``NumericError`` on non-finite values or a singular KKT matrix.
    """
    o = opts or SolverOptions()
    H, nx, nw = nlp.H, nlp.nx, nlp.nw
    nb = nx + nw
    pat = _pattern(H, nx, nw)
    n = pat.n
    z = np.array(z0, dtype=float)
    mu = np.zeros(nlp.m_ineq) if mu0 is None else np.maximum(np.array(mu0, dtype=float), 0.0)
    rho = o.rho0
    nu = 1.0
    omega = 1e-2
    lam = np.zeros(pat.m)
    prev_viol = np.inf
    log = []
    res = {}

    def merit(zz, mu_, rho_, nu_):
        f, c, g = nlp.merit_parts(zz)
        al, _, _ = _al_terms(g, mu_, rho_)
        return f + al + nu_ * np.abs(c).sum()

    it = 0
    while True:
        ev = nlp.evaluate(z, True)
        if not (np.isfinite(ev.f) and np.all(np.isfinite(ev.grad)) and np.all(np.isfinite(ev.c))):
            raise SolveFailure("NumericError", z, {"iteration": it})
        scale = max(1.0, float(np.abs(ev.grad).max()))
        jv = pat.jac_values(ev.A, ev.B, nx)
        J = pat.jac(jv)

        # inner solve / multiplier update loop at the current point
        for _ in range(20):
            _, muhat, act = _al_terms(ev.g, mu, rho)
            grad_al = ev.grad - _g_grad(ev, muhat, n)
            blocks = ev.hess.copy()
            _add_al_hessian(blocks, ev, act, rho, nb)
            _convexify(blocks, o.reg)
            K = pat.kkt(blocks, jv)
            try:
                lu = spla.splu(K)
                sol = lu.solve(np.concatenate([-grad_al, -ev.c]))
            except RuntimeError as exc:
                raise SolveFailure("NumericError", z, {"iteration": it, "error": str(exc)}) from exc
            if not np.all(np.isfinite(sol)):
                raise SolveFailure("NumericError", z, {"iteration": it})
            dz, lam_new = sol[:n], sol[n:]
            stat = float(np.abs(grad_al + J.T @ lam_new).max())
            defect = float(np.abs(ev.c).max()) if len(ev.c) else 0.0
            viol = float(np.maximum(-ev.g, 0.0).max()) if len(ev.g) else 0.0
            compl = float(np.abs(np.minimum(np.maximum(ev.g, 0.0), muhat)).max()) if len(ev.g) else 0.0
            res = {"kkt": stat / scale, "defect": defect, "ineq": viol, "compl": compl / scale,
                   "rho": rho, "step": float(np.abs(dz).max())}
            done = (stat <= o.tol_kkt * scale and defect <= o.tol_defect and viol <= o.tol_ineq
                    and compl <= o.tol_kkt * scale)
            if done:
                return SolveResult(z, muhat, lam_new, it, True, res, log)
            if stat <= omega * scale and defect <= max(o.tol_defect, 1e-3 * omega):
                mu = muhat.copy()
                if viol > 0.25 * prev_viol and viol > o.tol_ineq:
                    rho = min(rho * 10.0, o.rho_max)
                prev_viol = viol
                omega = max(0.1 * omega, 0.1 * o.tol_kkt)
                continue
            break

        if it >= o.max_iter:
            return SolveResult(z, muhat, lam_new, it, False, res, log)

        lam = lam_new
        nu = max(nu, 1.1 * float(np.abs(lam).max(initial=0.0)) + 1e-3)
        m0 = merit(z, mu, rho, nu)
        slope = float(grad_al @ dz) - nu * float(np.abs(ev.c).sum())
        accept = lambda mt, a: np.isfinite(mt) and mt <= m0 + o.armijo * a * min(slope, 0.0)
        alpha = 1.0
        step = dz
        if not accept(merit(z + dz, mu, rho, nu), 1.0):
            # second-order correction against curvature of the dynamics
            c_trial = nlp.merit_parts(z + dz)[1]
            if np.all(np.isfinite(c_trial)):
                corr = lu.solve(np.concatenate([np.zeros(n), -c_trial]))[:n]
                if accept(merit(z + dz + corr, mu, rho, nu), 1.0):
                    step = dz + corr
                    alpha = None
            if alpha is not None:
                alpha = 0.5
                for _ in range(o.max_backtrack - 1):
                    if accept(merit(z + alpha * dz, mu, rho, nu), alpha):
                        break
                    alpha *= 0.5
                step = alpha * dz
        z = z + step
        alpha = 1.0 if alpha is None else alpha
        it += 1
        log.append((it, res["kkt"], res["defect"], res["ineq"], rho, alpha))
