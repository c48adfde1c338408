"""Small dense convex QPs: ``min 1/2 u'Hu + g'u  s.t.  A u <= b``.

Problems here have a few dozen variables, so a primal active-set method with
dense KKT solves is both fast and exact about which bounds are active.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

CURVATURE_TOL = 1e-10
KKT_TOL = 1e-8


class InfeasibleConstraintsError(ValueError):
    pass


class MaxIterationsError(RuntimeError):
    pass


@dataclass(frozen=True)
class QPResult:
    u: np.ndarray
    active: tuple
    multipliers: np.ndarray
    iterations: int
    kkt_residual: float


def box_rows(lo, hi, n: int, F: Optional[np.ndarray] = None, f0=None):
    """Inequalities ``A u <= b`` for ``lo <= F u + f0 <= hi``; identity ``F`` by default."""
    F = np.eye(n) if F is None else np.asarray(F, dtype=float)
    f0 = np.zeros(F.shape[0]) if f0 is None else np.asarray(f0, dtype=float)
    lo = np.broadcast_to(-np.inf if lo is None else np.asarray(lo, dtype=float), F.shape[:1])
    hi = np.broadcast_to(np.inf if hi is None else np.asarray(hi, dtype=float), F.shape[:1])
    if np.any(lo > hi):
        raise InfeasibleConstraintsError("empty box: lower bound above upper bound")
    rows, rhs = [], []
    up = np.isfinite(hi)
    dn = np.isfinite(lo)
    if up.any():
        rows.append(F[up])
        rhs.append(hi[up] - f0[up])
    if dn.any():
        rows.append(-F[dn])
        rhs.append(f0[dn] - lo[dn])
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def unconstrained_minimizer(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``-H^{-1} g``; minimum-norm solution when ``H`` is near singular."""
    try:
        L = np.linalg.cholesky(H)
        d = np.diag(L)
        if d.min() ** 2 > CURVATURE_TOL * max(1.0, d.max() ** 2):
            y = np.linalg.solve(L, -g)
            return np.linalg.solve(L.T, y)
    except np.linalg.LinAlgError:
        pass
    return -np.linalg.pinv(H, rcond=CURVATURE_TOL, hermitian=True) @ g


def _feasible_start(A, b, n, hint):
    if np.all(A @ hint <= b + 1e-12):
        return hint
    res = linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    if res.status == 2:
        raise InfeasibleConstraintsError("constraint set is empty")
    if not res.success:
        raise InfeasibleConstraintsError(f"phase-1 failed: {res.message}")
    return res.x


def _eqp(H, grad, Aw):
    """Step ``p`` and multipliers for ``min 1/2 p'Hp + grad'p, Aw p = 0``."""
    n = H.shape[0]
    k = Aw.shape[0]
    if k == 0:
        return unconstrained_minimizer(H, grad), np.zeros(0)
    K = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
    rhs = np.concatenate([-grad, np.zeros(k)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def active_set_qp(H, g, A, b, x0=None, max_iter: Optional[int] = None) -> QPResult:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, len(g))
    b = np.asarray(b, dtype=float)
    n = len(g)
    if max_iter is None:
        max_iter = 100 * n
    A_in, b_in = A, b
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    A, b = A / norms[:, None], b / norms
    hint = unconstrained_minimizer(H, g) if x0 is None else np.asarray(x0, dtype=float)
    x = _feasible_start(A, b, n, hint)
    scale = 1.0 + np.abs(b)
    slack = b - A @ x
    work = []
    for i in np.flatnonzero(slack <= 1e-10 * scale):
        cand = A[work + [int(i)]]
        if np.linalg.matrix_rank(cand) == len(work) + 1:
            work.append(int(i))
    lam = np.zeros(0)
    settled = False  # x already minimizes over the current working set
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        step, lam = _eqp(H, grad, A[work])
        if settled or np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            settled = False
            if len(work) == 0 or lam.min() >= -1e-12 * (1.0 + np.abs(lam).max()):
                return _finish(H, g, A_in, b_in, x, work, lam / norms[work], it)
            work.pop(int(np.argmin(lam)))
            continue
        Ap = A @ step
        alpha, block = 1.0, None
        for i in range(len(b)):
            if i in work or Ap[i] <= 1e-14:
                continue
            a_i = (b[i] - A[i] @ x) / Ap[i]
            if a_i < alpha:
                alpha, block = max(a_i, 0.0), i
        x = x + alpha * step
        if block is not None:
            work.append(block)
        else:
            settled = True
    raise MaxIterationsError(f"active-set QP did not converge in {max_iter} iterations")


def _finish(H, g, A, b, x, work, lam, it):
    mult = np.zeros(len(b))
    mult[work] = lam
    stat = H @ x + g + A.T @ mult
    infeas = np.maximum(A @ x - b, 0.0)
    comp = mult * (b - A @ x)
    res = float(max(np.abs(stat).max(initial=0.0), infeas.max(initial=0.0),
                    np.abs(comp).max(initial=0.0)))
    return QPResult(x, tuple(sorted(work)), mult, it, res)


def kkt_residual(H, g, A, b, x, mult) -> float:
    stat = H @ x + g + A.T @ mult
    return float(max(np.abs(stat).max(initial=0.0),
                     np.maximum(A @ x - b, 0.0).max(initial=0.0),
                     np.maximum(-mult, 0.0).max(initial=0.0),
                     np.abs(mult * (b - A @ x)).max(initial=0.0)))
