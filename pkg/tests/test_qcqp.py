import numpy as np
import pytest

from kinospline import qcqp

import oracles


def ball(point, center, radius):
    return qcqp.BallConstraint(point, np.asarray(center, dtype=float), radius)


def random_instance(rng, n_points=10, pd_shift=0.2):
    n = 3 * n_points
    B = rng.normal(size=(n, n))
    H = B.T @ B / n + pd_shift * np.eye(n)
    g = rng.normal(size=n)
    balls = tuple(ball(i, rng.normal(size=3) * 0.3, 0.4 + 0.3 * rng.random())
                  for i in range(n_points))
    return qcqp.QcqpProblem(H=H, g=g, balls=balls)


class TestSolve:
    def test_single_point_ball_clamp(self):
        p = qcqp.QcqpProblem(H=np.diag([2.0, 2.0, 2.0]),
                             g=np.array([-4.0, 0.0, 0.0]),
                             balls=(ball(0, [0, 0, 0], 1.0),))
        s = qcqp.solve(p, tol=1e-9)
        assert s.status == "optimal"
        assert s.x[0] == pytest.approx(1.0, abs=1e-7)
        assert s.max_violation <= 1e-6

    def test_huge_balls_reach_unconstrained_minimum(self):
        rng = np.random.default_rng(2)
        n = 30
        B = rng.normal(size=(n, n))
        H = B.T @ B + 0.5 * np.eye(n)
        g = rng.normal(size=n)
        balls = tuple(ball(i, rng.normal(size=3), 1e6) for i in range(n // 3))
        s = qcqp.solve(qcqp.QcqpProblem(H=H, g=g, balls=balls), tol=1e-10)
        xref = np.linalg.solve(H, -g)
        assert np.abs(s.x - xref).max() < 1e-5

    def test_no_constraints_least_squares(self):
        H = np.diag([2.0, 4.0, 8.0])
        g = np.array([-2.0, -4.0, -8.0])
        s = qcqp.solve(qcqp.QcqpProblem(H=H, g=g, balls=()))
        assert np.allclose(s.x, [1.0, 1.0, 1.0], atol=1e-10)

    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = random_instance(rng)
            s = qcqp.solve(p, tol=1e-9)
            assert s.status == "optimal"
            xo = oracles.projected_gradient(p)
            fo = p.objective(xo)
            assert s.objective <= fo + 1e-5 * (1 + abs(fo))
            assert abs(s.objective - fo) <= 1e-5 * (1 + abs(fo))

    def test_linear_rows_respected(self):
        # objective pulls x positive, a row caps the first coordinate
        H = np.eye(3) * 2
        g = np.array([-10.0, 0.0, 0.0])
        A = np.array([[1.0, 0.0, 0.0]])
        p = qcqp.QcqpProblem(H=H, g=g, balls=(ball(0, [0, 0, 0], 100.0),),
                             A=A, lo=np.array([-1.0]), hi=np.array([2.0]))
        s = qcqp.solve(p, tol=1e-9)
        assert s.x[0] == pytest.approx(2.0, abs=1e-6)

    def test_infeasible_detected(self):
        p = qcqp.QcqpProblem(H=np.eye(3) * 2, g=np.zeros(3),
                             balls=(ball(0, [2, 0, 0], 0.5),
                                    ball(0, [-2, 0, 0], 0.5)))
        s = qcqp.solve(p, tol=1e-8, max_iter=20000)
        assert s.status == "infeasible-detected"

    def test_lens_constraint_pair(self):
        # two overlapping balls on one point: optimum lands in the lens
        p = qcqp.QcqpProblem(H=np.eye(3) * 2, g=np.array([-8.0, 0, 0]),
                             balls=(ball(0, [0, 0, 0], 1.0),
                                    ball(0, [1.5, 0, 0], 1.0)))
        s = qcqp.solve(p, tol=1e-9)
        assert s.status == "optimal"
        assert s.x[0] == pytest.approx(1.0, abs=1e-6)
        assert s.max_violation <= 1e-6

    def test_warm_start_agrees(self):
        rng = np.random.default_rng(6)
        p = random_instance(rng, n_points=6)
        cold = qcqp.solve(p, tol=1e-9)
        warm = qcqp.solve(p, tol=1e-9, x0=cold.x)
        assert warm.objective == pytest.approx(cold.objective, rel=1e-8)

    def test_psd_guard(self):
        H = np.diag([1.0, -1.0, 1.0])
        p = qcqp.QcqpProblem(H=H, g=np.zeros(3), balls=(ball(0, [0, 0, 0], 1.0),))
        with pytest.raises(ValueError):
            qcqp.solve(p)

    def test_const_offsets_objective(self):
        p = qcqp.QcqpProblem(H=np.eye(3), g=np.zeros(3), balls=(), const=5.0)
        s = qcqp.solve(p)
        assert s.objective == pytest.approx(5.0)


class TestKktResidual:
    def test_zero_at_analytic_optimum(self):
        p = qcqp.QcqpProblem(H=np.diag([2.0, 2.0, 2.0]),
                             g=np.array([-4.0, 0.0, 0.0]),
                             balls=(ball(0, [0, 0, 0], 1.0),))
        assert qcqp.kkt_residual(p, np.array([1.0, 0.0, 0.0])) < 1e-9

    def test_primal_violation_passes_through(self):
        p = qcqp.QcqpProblem(H=np.diag([2.0, 2.0, 2.0]),
                             g=np.array([-4.0, 0.0, 0.0]),
                             balls=(ball(0, [0, 0, 0], 1.0),))
        assert qcqp.kkt_residual(p, np.array([1.5, 0.0, 0.0])) >= 0.5

    def test_solver_output_consistent(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            p = random_instance(rng, n_points=5)
            s = qcqp.solve(p, tol=1e-9)
            assert qcqp.kkt_residual(p, s.x) < 1e-5

    def test_dimension_check(self):
        p = qcqp.QcqpProblem(H=np.eye(3), g=np.zeros(3), balls=())
        with pytest.raises(ValueError):
            qcqp.kkt_residual(p, np.zeros(4))
