import numpy as np
import pytest

from fce_ddpc.qp import (InfeasibleConstraintsError, MaxIterationsError, active_set_qp,
                         box_rows, kkt_residual, unconstrained_minimizer)


def projected_gradient(H, g, lo, hi, tol=1e-10, max_iter=500_000):
    """Reference box-QP solver, stopping on the projected-gradient KKT measure."""
    L = np.linalg.eigvalsh(H).max()
    x = np.clip(np.zeros(len(g)), lo, hi)
    for _ in range(max_iter):
        grad = H @ x + g
        x_new = np.clip(x - grad / L, lo, hi)
        if np.abs(np.clip(x - grad, lo, hi) - x).max() < tol:
            return x
        x = x_new
    raise RuntimeError("reference solver did not converge")


def test_vertex():
    np.testing.assert_allclose(unconstrained_minimizer(2 * np.eye(4), -2 * np.ones(4)), 1.0)


def test_clipped_vertex():
    A, b = box_rows(None, 0.5, 4)
    res = active_set_qp(2 * np.eye(4), -2 * np.ones(4), A, b)
    np.testing.assert_allclose(res.u, 0.5)
    assert res.active == (0, 1, 2, 3)
    np.testing.assert_allclose(res.multipliers, 1.0)


def test_random_boxes_match_projected_gradient():
    rng = np.random.default_rng(0)
    n = 20
    for _ in range(10):
        M = rng.standard_normal((n, n))
        H = M @ M.T / n + 0.1 * np.eye(n)
        g = rng.standard_normal(n) * 3
        lo = -rng.uniform(0.1, 1.0, n)
        hi = rng.uniform(0.1, 1.0, n)
        A, b = box_rows(lo, hi, n)
        res = active_set_qp(H, g, A, b)
        ref = projected_gradient(H, g, lo, hi)
        np.testing.assert_allclose(res.u, ref, atol=1e-7)
        assert res.kkt_residual < 1e-8
        assert kkt_residual(H, g, A, b, res.u, res.multipliers) < 1e-8


def test_general_inequalities_kkt():
    rng = np.random.default_rng(1)
    n = 8
    M = rng.standard_normal((n, n))
    H = M @ M.T + np.eye(n)
    g = rng.standard_normal(n) * 5
    A = rng.standard_normal((12, n))
    b = rng.uniform(0.1, 1.0, 12)
    res = active_set_qp(H, g, A, b)
    assert kkt_residual(H, g, A, b, res.u, res.multipliers) < 1e-8
    assert np.all(res.multipliers >= 0)


def test_infeasible_start_uses_phase_one():
    A, b = box_rows(2.0, 3.0, 3)
    res = active_set_qp(np.eye(3), np.zeros(3), A, b)
    np.testing.assert_allclose(res.u, 2.0)


def test_infeasible_constraints():
    with pytest.raises(InfeasibleConstraintsError):
        box_rows(1.0, 0.0, 2)
    A = np.array([[1.0], [-1.0]])
    with pytest.raises(InfeasibleConstraintsError):
        active_set_qp(np.eye(1), np.zeros(1), A, np.array([-1.0, -1.0]))


def test_iteration_cap():
    A, b = box_rows(-0.1, 0.1, 6)
    with pytest.raises(MaxIterationsError):
        active_set_qp(np.eye(6), np.full(6, -5.0), A, b, x0=np.zeros(6), max_iter=1)


def test_singular_curvature_gives_min_norm():
    H = np.diag([1.0, 0.0])
    u = unconstrained_minimizer(H, np.array([-1.0, 0.0]))
    np.testing.assert_allclose(u, [1.0, 0.0])


def test_output_box_rows():
    F = np.array([[1.0, 1.0]])
    A, b = box_rows(-1.0, 2.0, 2, F, np.array([0.5]))
    np.testing.assert_allclose(A, [[1, 1], [-1, -1]])
    np.testing.assert_allclose(b, [1.5, 1.5])
