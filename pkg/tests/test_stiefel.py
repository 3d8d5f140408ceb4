"""Orthonormality-preserving Cayley steps and curvilinear minimization."""

import numpy as np
import pytest

from conformalreg.stiefel import (
    StiefelOptions,
    StiefelProblem,
    StiefelResult,
    cayley_step,
    minimize,
)


def random_frame(rng, n, k):
    Q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    return Q


class TestCayleyStep:
    def test_zero_dt_is_identity(self):
        rng = np.random.default_rng(0)
        X = random_frame(rng, 8, 3)
        Y = rng.normal(size=(8, 3))
        assert cayley_step(X, Y, 0.0) is X

    def test_negative_dt_rejected(self):
        rng = np.random.default_rng(0)
        X = random_frame(rng, 8, 3)
        with pytest.raises(ValueError):
            cayley_step(X, X, -1.0)

    def test_feasibility_preserved(self):
        rng = np.random.default_rng(1)
        X = random_frame(rng, 30, 5)
        for _ in range(50):
            Y = rng.normal(size=(30, 5))
            X = cayley_step(X, Y, 10 ** rng.uniform(-3, 0))
            assert np.abs(X.T @ X - np.eye(5)).max() < 1e-12

    def test_matches_dense_cayley_transform(self):
        rng = np.random.default_rng(2)
        n, k, dt = 10, 3, 0.37
        X = random_frame(rng, n, k)
        Y = rng.normal(size=(n, k))
        D = Y @ X.T - X @ Y.T
        Q = np.linalg.solve(np.eye(n) + dt / 2 * D, np.eye(n) - dt / 2 * D)
        assert np.allclose(cayley_step(X, Y, dt), Q @ X)

    def test_square_case_is_rotation(self):
        rng = np.random.default_rng(3)
        X = random_frame(rng, 4, 4)
        Y = rng.normal(size=(4, 4))
        X2 = cayley_step(X, Y, 0.5)
        assert np.allclose(X2 @ X2.T, np.eye(4))


class TestMinimize:
    def quad_problem(self, n, k, seed=0):
        """min tr(X^T A X): optimum is the span of A's lowest eigenvectors."""
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(n, n))
        A = B @ B.T
        return (
            StiefelProblem(
                n=n, k=k,
                objective=lambda X: float(np.sum(X * (A @ X))),
                gradient=lambda X: 2.0 * A @ X,
            ),
            A,
        )

    def test_reaches_eigenspace_sum(self):
        problem, A = self.quad_problem(25, 4)
        rng = np.random.default_rng(5)
        res = minimize(problem, random_frame(rng, 25, 4), StiefelOptions(max_iter=2000, grad_tol=1e-10))
        target = np.sort(np.linalg.eigvalsh(A))[:4].sum()
        assert res.objective_trace[-1] == pytest.approx(target, rel=1e-8)

    def test_never_worse_than_start(self):
        for seed in range(5):
            problem, _ = self.quad_problem(15, 3, seed)
            rng = np.random.default_rng(seed + 100)
            res = minimize(problem, random_frame(rng, 15, 3), StiefelOptions(max_iter=50))
            assert res.objective_trace[-1] <= res.objective_trace[0]

    def test_final_frame_feasible(self):
        problem, _ = self.quad_problem(20, 5)
        rng = np.random.default_rng(9)
        res = minimize(problem, random_frame(rng, 20, 5))
        assert np.abs(res.X.T @ res.X - np.eye(5)).max() < 1e-8

    def test_stationary_start_converges_immediately(self):
        problem, A = self.quad_problem(12, 2)
        evals, evecs = np.linalg.eigh(A)
        res = minimize(problem, evecs[:, :2])
        assert res.converged
        assert res.iterations <= 2

    def test_infeasible_start_rejected(self):
        problem, _ = self.quad_problem(10, 2)
        with pytest.raises(ValueError):
            minimize(problem, np.ones((10, 2)))

    def test_shape_mismatch_rejected(self):
        problem, _ = self.quad_problem(10, 2)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            minimize(problem, random_frame(rng, 10, 3))

    def test_result_type(self):
        problem, _ = self.quad_problem(10, 2)
        rng = np.random.default_rng(0)
        res = minimize(problem, random_frame(rng, 10, 2), StiefelOptions(max_iter=5))
        assert isinstance(res, StiefelResult)
        assert len(res.objective_trace) == res.iterations + 1


class TestOptions:
    def test_bad_dt_bounds(self):
        with pytest.raises(ValueError):
            StiefelOptions(dt_min=1.0, dt_max=0.1)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            StiefelOptions(window=0)
