"""
Proximal oracle for convex quadratic scenario costs.

Solves

    minimize    1/2 y'Qy + c'y + 1/(2 mu) ||y - v||^2
    subject to  A_eq y = b_eq,  A_in y <= b_in,  lower <= y <= upper

The prox term makes the Hessian ``Q + I/mu`` positive definite.  An ADMM
iteration on the stacked form ``l <= C y <= u`` identifies the active set,
which is then polished by solving the equality-constrained KKT system and
refined with primal-dual active-set steps.  The returned point is therefore
the exact KKT solution of its active set, up to one dense solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 20000

SOLVED = "solved"
MAX_ITERATIONS = "max-iterations"
INFEASIBLE = "infeasible"

_SIGMA = 1e-6
_ALPHA = 1.6
_RHO0 = 0.1
_RHO_EQ_SCALE = 1e3
_CHECK_EVERY = 10
_PDAS_STEPS = 12
_RHO_UPDATES = 8
_CERT_TOL = 1e-9
_CERT_CHECKS = 5


class ProxError(RuntimeError):
    """A scenario subproblem could not be solved."""

    def __init__(self, message, scenario=None, status=None):
        super().__init__(message)
        self.scenario = scenario
        self.status = status


def _as_matrix(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.array(a, dtype=np.float64, ndmin=2)
    if a.size == 0:
        return np.zeros((0, n))
    return a


def _as_vector(b, m, fill=0.0):
    if b is None:
        return np.full(m, fill)
    return np.array(b, dtype=np.float64).reshape(-1)


@dataclass(frozen=True, eq=False)
class QpScenarioProblem:
    """Convex quadratic cost over a polyhedron, for one scenario."""

    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def create(
        cls,
        n,
        Q=None,
        c=None,
        A_eq=None,
        b_eq=None,
        A_in=None,
        b_in=None,
        lower=None,
        upper=None,
    ) -> "QpScenarioProblem":
        Q = np.zeros((n, n)) if Q is None else np.array(Q, dtype=np.float64)
        A_eq = _as_matrix(A_eq, n)
        A_in = _as_matrix(A_in, n)
        return cls(
            Q=Q,
            c=_as_vector(c, n),
            A_eq=A_eq,
            b_eq=_as_vector(b_eq, A_eq.shape[0]),
            A_in=A_in,
            b_in=_as_vector(b_in, A_in.shape[0]),
            lower=_as_vector(lower, n, -np.inf),
            upper=_as_vector(upper, n, np.inf),
        )

    def __post_init__(self):
        n = self.c.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        for name, A, b in (("eq", self.A_eq, self.b_eq), ("in", self.A_in, self.b_in)):
            if A.ndim != 2 or A.shape[1] != n or b.shape != (A.shape[0],):
                raise ValueError(f"inconsistent A_{name}/b_{name} dimensions")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have length n")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        scale = max(1.0, float(np.abs(self.Q).max(initial=0.0)))
        if np.abs(self.Q - self.Q.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("Q is not symmetric")
        if 0 < n <= 500 and np.any(self.Q):
            if np.linalg.eigvalsh(self.Q)[0] < -1e-10 * np.linalg.norm(self.Q, 2):
                raise ValueError("Q is not positive semidefinite")
        for arr in (self.Q, self.c, self.A_eq, self.b_eq, self.A_in, self.b_in):
            arr.setflags(write=False)
            if not np.all(np.isfinite(arr)):
                raise ValueError("problem data must be finite")
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def objective(self, y) -> float:
        """Smooth part 1/2 y'Qy + c'y, constraints ignored."""
        y = np.asarray(y, dtype=np.float64)
        return float(0.5 * y @ self.Q @ y + self.c @ y)

    def violation(self, y) -> float:
        """Largest constraint violation of ``y`` (0 when feasible)."""
        r = self._stacked
        cy = r.C @ np.asarray(y, dtype=np.float64)
        return float(max(np.max(cy - r.u, initial=0.0), np.max(r.l - cy, initial=0.0)))

    @cached_property
    def _stacked(self) -> "_Stacked":
        n = self.n
        fin = np.isfinite(self.lower) | np.isfinite(self.upper)
        cols = np.flatnonzero(fin)
        B = np.zeros((cols.size, n))
        B[np.arange(cols.size), cols] = 1.0
        C = np.vstack([self.A_eq, self.A_in, B])
        l = np.concatenate(
            [self.b_eq, np.full(self.A_in.shape[0], -np.inf), self.lower[cols]]
        )
        u = np.concatenate([self.b_eq, self.b_in, self.upper[cols]])
        return _Stacked(C=C, l=l, u=u, is_eq=(l == u), bound_cols=cols)


@dataclass
class _Stacked:
    C: np.ndarray
    l: np.ndarray
    u: np.ndarray
    is_eq: np.ndarray
    bound_cols: np.ndarray


@dataclass
class ProxResult:
    """Outcome of one proximal solve."""

    y: np.ndarray
    primal_residual: float
    dual_residual: float
    inner_iterations: int
    status: str
    # multipliers of A_eq rows, A_in rows (>= 0) and bounds (signed: + upper, - lower)
    lam_eq: np.ndarray = field(repr=False, default=None)
    lam_in: np.ndarray = field(repr=False, default=None)
    lam_bound: np.ndarray = field(repr=False, default=None)

    @property
    def ok(self) -> bool:
        return self.status == SOLVED


class ProxWorkspace:
    """Warm-start state for repeated solves of one problem."""

    def __init__(self):
        self.y = None
        self.lam = None
        self.upper_set = None
        self.lower_set = None
        self._factor_key = None
        self._Kinv = None

    def factor(self, H, C, rho_vec):
        key = (H.tobytes(), rho_vec.tobytes())
        if key != self._factor_key:
            K = H + _SIGMA * np.eye(H.shape[0]) + C.T @ (rho_vec[:, None] * C)
            self._Kinv = np.linalg.inv(K)
            self._factor_key = key
        return self._Kinv


def kkt_residuals(problem: QpScenarioProblem, v, mu, y, lam):
    """
    Scaled primal and dual KKT residuals of a prox solution.

    ``lam`` holds multipliers of the stacked rows (eq, in, bounds), positive
    at upper-active rows and negative at lower-active rows.
    """
    r = problem._stacked
    H = problem.Q + np.eye(problem.n) / mu
    g = problem.c - np.asarray(v) / mu
    cy = r.C @ y
    primal = max(np.max(cy - r.u, initial=0.0), np.max(r.l - cy, initial=0.0))
    stat = np.abs(H @ y + g + r.C.T @ lam).max(initial=0.0)
    pos = np.maximum(lam, 0.0)
    neg = np.maximum(-lam, 0.0)
    # sign: no positive multiplier on rows without a finite upper bound, etc.
    sign = max(
        np.max(pos[~np.isfinite(r.u)], initial=0.0),
        np.max(neg[~np.isfinite(r.l)], initial=0.0),
    )
    fu, fl = np.isfinite(r.u), np.isfinite(r.l)
    up_slack = np.where(fu, r.u, 0.0) - cy
    lo_slack = cy - np.where(fl, r.l, 0.0)
    up_slack[~fu] = 0.0
    lo_slack[~fl] = 0.0
    comp = max(
        np.max(np.abs(pos * up_slack), initial=0.0),
        np.max(np.abs(neg * lo_slack), initial=0.0),
    )
    fin_l = np.abs(r.l[np.isfinite(r.l)])
    fin_u = np.abs(r.u[np.isfinite(r.u)])
    scale_p = 1.0 + max(fin_l.max(initial=0.0), fin_u.max(initial=0.0), np.abs(cy).max(initial=0.0))
    scale_d = 1.0 + np.abs(g).max(initial=0.0)
    return float(primal / scale_p), float(max(stat, sign, comp) / scale_d)


def _split(problem, lam):
    r = problem._stacked
    m_eq = problem.A_eq.shape[0]
    m_in = problem.A_in.shape[0]
    lam_bound = np.zeros(problem.n)
    lam_bound[r.bound_cols] = lam[m_eq + m_in :]
    return lam[:m_eq].copy(), lam[m_eq : m_eq + m_in].copy(), lam_bound


def _solve_active(H, g, r, upper_set, lower_set):
    """KKT solve with rows in ``upper_set`` at u and ``lower_set`` at l."""
    act = np.flatnonzero(upper_set | lower_set)
    n = H.shape[0]
    if act.size == 0:
        return np.linalg.solve(H, -g), np.zeros(r.C.shape[0])
    A = r.C[act]
    b = np.where(upper_set[act], r.u[act], r.l[act])
    k = act.size
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-g, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        return None, None
    # one step of iterative refinement
    res = rhs - K @ sol
    try:
        sol = sol + np.linalg.solve(K, res)
    except np.linalg.LinAlgError:
        pass
    # an overdetermined active set has no exact KKT point
    res = np.abs(rhs - K @ sol).max()
    if res > 1e-9 * (1.0 + np.abs(rhs).max() + np.abs(K).max() * np.abs(sol).max()):
        return None, None
    lam = np.zeros(r.C.shape[0])
    lam[act] = sol[n:]
    return sol[:n], lam


def _pdas(H, g, r, upper_set, lower_set, feas_tol, sign_tol, steps):
    """Primal-dual active-set refinement; returns (y, lam, U, L, iters) or None."""
    seen = set()
    for it in range(1, steps + 1):
        key = (upper_set.tobytes(), lower_set.tobytes())
        if key in seen:
            return None
        seen.add(key)
        y, lam = _solve_active(H, g, r, upper_set, lower_set)
        if y is None:
            return None
        cy = r.C @ y
        free = ~r.is_eq
        inactive = free & ~upper_set & ~lower_set
        over = np.where(inactive, cy - r.u - feas_tol, 0.0)
        under = np.where(inactive, r.l - cy - feas_tol, 0.0)
        drop_u = free & upper_set & (lam < -sign_tol)
        drop_l = free & lower_set & (lam > sign_tol)
        # add only the most violated row: adding several at once can make
        # the active set overdetermined
        add_u = np.zeros_like(upper_set)
        add_l = np.zeros_like(lower_set)
        if max(over.max(), under.max()) > 0:
            if over.max() >= under.max():
                add_u[np.argmax(over)] = True
            else:
                add_l[np.argmax(under)] = True
        if not (add_u.any() or add_l.any() or drop_u.any() or drop_l.any()):
            return y, lam, upper_set, lower_set, it
        upper_set = (upper_set & ~drop_u) | add_u
        lower_set = (lower_set & ~drop_l) | add_l
        # rows that are equalities stay active on both sides
        upper_set = upper_set | r.is_eq
    return None


def _certifies_infeasible(r, dlam) -> bool:
    """
    ``dlam`` proves ``l <= C y <= u`` empty: ``C^T dlam = 0`` and
    ``u^T dlam+ + l^T dlam- < 0`` (with zero weight on infinite bounds).
    """
    size = np.abs(dlam).max(initial=0.0)
    if size == 0.0:
        return False
    pos, neg = np.maximum(dlam, 0.0), np.minimum(dlam, 0.0)
    if np.any((pos > _CERT_TOL * size) & ~np.isfinite(r.u)) or np.any((neg < -_CERT_TOL * size) & ~np.isfinite(r.l)):
        return False
    if np.abs(r.C.T @ dlam).max() > _CERT_TOL * size:
        return False
    support = np.dot(np.where(np.isfinite(r.u), r.u, 0.0), pos) + np.dot(np.where(np.isfinite(r.l), r.l, 0.0), neg)
    return support < -_CERT_TOL * size


def prox(
    problem: QpScenarioProblem,
    v,
    mu: float,
    tol: float = DEFAULT_TOL,
    workspace: ProxWorkspace | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ProxResult:
    """
    Proximal point of the scenario cost at ``v`` with parameter ``mu``.

    Parameters
    ----------
    problem : QpScenarioProblem
        Scenario cost and constraints.
    v : array_like
        Anchor point, length ``n``.
    mu : float
        Prox parameter, positive.
    tol : float
        Target for the scaled KKT residuals.
    workspace : ProxWorkspace, optional
        Warm-start state; updated in place on success.
    max_iter : int
        ADMM iteration budget.

    Returns
    -------
    ProxResult
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = np.asarray(v, dtype=np.float64)
    n = problem.n
    if v.shape != (n,):
        raise ValueError(f"anchor has shape {v.shape}, expected {(n,)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("anchor must be finite")
    ws = workspace if workspace is not None else ProxWorkspace()
    r = problem._stacked
    m = r.C.shape[0]
    H = problem.Q + np.eye(n) / mu
    g = problem.c - v / mu

    def finish(y, lam, iters, status, U=None, L=None):
        pr, dr = kkt_residuals(problem, v, mu, y, lam)
        if status == SOLVED and (pr > tol or dr > tol):
            status = None
        if status is None:
            return None
        if status == SOLVED:
            ws.y, ws.lam = y.copy(), lam.copy()
            ws.upper_set, ws.lower_set = U, L
        le, li, lb = _split(problem, lam)
        return ProxResult(y, pr, dr, iters, status, le, li, lb)

    if m == 0:
        y = np.linalg.solve(H, -g)
        pr, dr = kkt_residuals(problem, v, mu, y, np.zeros(0))
        status = SOLVED if pr <= tol and dr <= tol else MAX_ITERATIONS
        return ProxResult(y, pr, dr, 0, status, np.zeros(0), np.zeros(0), np.zeros(n))

    scale_p = 1.0 + max(
        np.abs(r.l[np.isfinite(r.l)]).max(initial=0.0),
        np.abs(r.u[np.isfinite(r.u)]).max(initial=0.0),
    )
    feas_tol = 0.1 * tol * max(scale_p, 1.0 + np.abs(v).max())
    sign_tol = 0.1 * tol * (1.0 + np.abs(g).max())

    # warm start from the previous active set
    if ws.upper_set is not None and ws.upper_set.shape == (m,):
        out = _pdas(H, g, r, ws.upper_set.copy(), ws.lower_set.copy(), feas_tol, sign_tol, max(_PDAS_STEPS, 2 * m))
        if out is not None:
            res = finish(out[0], out[1], out[4], SOLVED, out[2], out[3])
            if res is not None:
                return res

    # ADMM
    x = ws.y.copy() if ws.y is not None and ws.y.shape == (n,) else np.zeros(n)
    lam = ws.lam.copy() if ws.lam is not None and ws.lam.shape == (m,) else np.zeros(m)
    z = np.clip(r.C @ x, r.l, r.u)
    rho = _RHO0
    rho_vec = np.where(r.is_eq, rho * _RHO_EQ_SCALE, rho)
    Kinv = ws.factor(H, r.C, rho_vec)
    lam_prev = lam.copy()
    cert_hits = 0
    rho_updates = 0
    tried = set()
    it = 0
    while it < max_iter:
        it += 1
        rhs = _SIGMA * x - g + r.C.T @ (rho_vec * z - lam)
        xt = Kinv @ rhs
        zt = r.C @ xt
        x = _ALPHA * xt + (1.0 - _ALPHA) * x
        zr = _ALPHA * zt + (1.0 - _ALPHA) * z
        z_new = np.clip(zr + lam / rho_vec, r.l, r.u)
        lam = lam + rho_vec * (zr - z_new)
        z = z_new
        if it % _CHECK_EVERY:
            continue

        cx = r.C @ x
        prim = np.abs(cx - z).max()
        dual_vec = H @ x + g + r.C.T @ lam
        dual = np.abs(dual_vec).max()

        # polish with the active set suggested by the iterate
        U = r.is_eq | ((r.u - z) < lam)
        L = ~r.is_eq & ((z - r.l) < -lam)
        key = (U.tobytes(), L.tobytes())
        if key not in tried:
            tried.add(key)
            out = _pdas(H, g, r, U, L, feas_tol, sign_tol, max(_PDAS_STEPS, 2 * m))
            if out is not None:
                res = finish(out[0], out[1], it + out[4], SOLVED, out[2], out[3])
                if res is not None:
                    return res

        # plain ADMM convergence (polish failed, e.g. degenerate active set)
        res = finish(x.copy(), lam.copy(), it, SOLVED, U, L)
        if res is not None:
            return res

        # primal infeasibility certificate on the multiplier increment
        dlam = lam - lam_prev
        lam_prev = lam.copy()
        if _certifies_infeasible(r, dlam):
            cert_hits += 1
            if cert_hits >= _CERT_CHECKS:
                le, li, lb = _split(problem, lam)
                pr, dr = kkt_residuals(problem, v, mu, x, lam)
                return ProxResult(x, pr, dr, it, INFEASIBLE, le, li, lb)
        else:
            cert_hits = 0

        if it % (5 * _CHECK_EVERY) == 0:
            prim_n = prim / max(np.abs(cx).max(), np.abs(z).max(), 1e-30)
            dual_n = dual / max(
                np.abs(H @ x).max(), np.abs(r.C.T @ lam).max(), np.abs(g).max(), 1e-30
            )
            ratio = np.sqrt(prim_n / max(dual_n, 1e-30))
            if (ratio > 5.0 or ratio < 0.2) and rho_updates < _RHO_UPDATES:
                # bounded and finitely many changes, so rho cannot oscillate forever
                rho_updates += 1
                rho = float(np.clip(rho * np.clip(ratio, 1e-2, 1e2), 1e-6, 1e6))
                rho_vec = np.where(r.is_eq, rho * _RHO_EQ_SCALE, rho)
                Kinv = ws.factor(H, r.C, rho_vec)

    le, li, lb = _split(problem, lam)
    pr, dr = kkt_residuals(problem, v, mu, x, lam)
    logger.warning("prox hit %d iterations (residuals %.2e, %.2e)", it, pr, dr)
    return ProxResult(x, pr, dr, it, MAX_ITERATIONS, le, li, lb)


def prox_batch(problems, points, mu, tol=DEFAULT_TOL, workspaces=None):
    """Elementwise :func:`prox`; a failing element raises with its index."""
    if len(problems) != len(points):
        raise ValueError("problems and points differ in length")
    out = []
    for i, (pb, v) in enumerate(zip(problems, points)):
        ws = workspaces[i] if workspaces is not None else None
        try:
            out.append(prox(pb, v, mu, tol, ws))
        except Exception as exc:  # noqa: BLE001 - re-raised with the index
            raise ProxError(f"scenario {i}: {exc}", scenario=i) from exc
    return out
