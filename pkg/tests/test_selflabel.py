#!/usr/bin/env python

import unittest

import numpy as np

from ncdwf.errors import SinkhornError
from ncdwf.selflabel import (SelfLabelProblem, SinkhornConfig, TransportPlan,
                             harden_labels, self_label, soft_targets,
                             solve_sinkhorn, transport_objective)


def random_columns(rng, n, b):
    P = rng.random((n, b)) + 1e-3
    return P / P.sum(axis=0, keepdims=True)


def fixed_point_oracle(P, epsilon, iterations=20000):
    n, b = P.shape
    K = np.exp(P / epsilon)
    a = np.ones(n)
    for _ in range(iterations):
        c = (1.0 / b) / (K.T @ a)
        a = (1.0 / n) / (K @ c)
    return a[:, None] * K * c[None, :]


class TestSinkhorn(unittest.TestCase):
    def test_uniform(self):
        P = np.full((2, 4), 0.5)
        plan = solve_sinkhorn(SelfLabelProblem(P))
        self.assertTrue(plan.converged)
        np.testing.assert_allclose(plan.Q, np.full((2, 4), 1 / 8),
                                   atol=1e-15)

    def test_single_class(self):
        P = np.ones((1, 5))
        plan = solve_sinkhorn(SelfLabelProblem(P))
        np.testing.assert_allclose(plan.Q, np.full((1, 5), 0.2), atol=1e-15)
        np.testing.assert_array_equal(harden_labels(plan), np.zeros(5))

    def test_marginals_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, b = rng.integers(1, 65, size=2)
            plan = solve_sinkhorn(SelfLabelProblem(random_columns(rng, n, b)))
            self.assertTrue(plan.converged)
            rows, cols = plan.marginal_residuals()
            self.assertLess(rows, 1e-8)
            self.assertLess(cols, 1e-8)
            self.assertTrue(np.all(plan.Q >= 0))

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n, b = rng.integers(1, 5, size=2)
            P = random_columns(rng, n, b)
            plan = solve_sinkhorn(SelfLabelProblem(P, epsilon=0.5, tol=1e-14,
                                                   max_iters=20000))
            np.testing.assert_allclose(plan.Q, fixed_point_oracle(P, 0.5),
                                       rtol=0, atol=1e-8)

    def test_history_non_increasing(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            P = random_columns(rng, 6, 9)
            plan = solve_sinkhorn(SelfLabelProblem(P, epsilon=0.1))
            h = np.array(plan.history)
            self.assertTrue(np.all(np.diff(h) <= 1e-15), h)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        P = random_columns(rng, 5, 7)
        rows = rng.permutation(5)
        cols = rng.permutation(7)
        a = solve_sinkhorn(SelfLabelProblem(P, tol=1e-14, max_iters=5000))
        b = solve_sinkhorn(SelfLabelProblem(P[rows][:, cols], tol=1e-14,
                                            max_iters=5000))
        np.testing.assert_allclose(b.Q, a.Q[rows][:, cols], rtol=1e-10,
                                   atol=1e-15)

    def test_objective_beats_feasible_points(self):
        rng = np.random.default_rng(4)
        P = random_columns(rng, 3, 6)
        plan = solve_sinkhorn(SelfLabelProblem(P, tol=1e-13))
        best = transport_objective(plan.Q, P)
        uniform = np.full((3, 6), 1 / 18)
        # random points of the polytope via Sinkhorn scaling of noise
        R = rng.random((10000, 3, 6)) + 0.01
        for _ in range(500):
            R *= (1 / 3) / R.sum(axis=2, keepdims=True)
            R *= (1 / 6) / R.sum(axis=1, keepdims=True)
        for point in R:
            self.assertGreaterEqual(best + 1e-9,
                                    transport_objective(point, P))
        self.assertGreaterEqual(best + 1e-9, transport_objective(uniform, P))

    def test_half_split(self):
        # every sample prefers class 0, equipartition splits them 50/50
        P = np.array([[0.9] * 8, [0.1] * 8])
        P[0, :4] += 0.01
        P[1, :4] -= 0.01
        plan = solve_sinkhorn(SelfLabelProblem(P, epsilon=0.1))
        labels = harden_labels(plan)
        self.assertEqual(np.sum(labels == 0), 4)
        self.assertEqual(np.sum(labels == 1), 4)
        np.testing.assert_array_equal(labels[:4], [0] * 4)

    def test_harden_ties_lowest_index(self):
        plan = TransportPlan(np.full((3, 2), 1 / 6), 1, True, [])
        np.testing.assert_array_equal(harden_labels(plan), [0, 0])

    def test_harden_unconverged(self):
        plan = TransportPlan(np.full((2, 2), 0.25), 3, False, [])
        with self.assertRaises(SinkhornError):
            harden_labels(plan)
        np.testing.assert_array_equal(
            harden_labels(plan, allow_unconverged=True), [0, 0])

    def test_max_iters_reported(self):
        rng = np.random.default_rng(5)
        P = random_columns(rng, 10, 12)
        plan = solve_sinkhorn(SelfLabelProblem(P, epsilon=0.01, max_iters=1))
        self.assertFalse(plan.converged)
        self.assertEqual(plan.iterations_used, 1)

    def test_errors(self):
        with self.assertRaises(SinkhornError):
            solve_sinkhorn(SelfLabelProblem(np.array([[0.5, np.nan],
                                                      [0.5, 0.5]])))
        with self.assertRaises(SinkhornError):
            solve_sinkhorn(SelfLabelProblem(np.full((2, 2), 0.5),
                                            epsilon=0.0))
        with self.assertRaises(SinkhornError):
            solve_sinkhorn(SelfLabelProblem(np.full((2, 2), 0.7)))


class TestSelfLabel(unittest.TestCase):
    def test_hard_and_soft_targets(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(12, 3)) * 3
        plan, labels = self_label(logits)
        self.assertEqual(labels.shape, (12,))
        self.assertEqual(plan.Q.shape, (3, 12))
        plan2, soft = self_label(logits, SinkhornConfig(soft_targets=True))
        self.assertEqual(soft.shape, (12, 3))
        np.testing.assert_allclose(soft.sum(axis=1), np.ones(12))
        np.testing.assert_array_equal(np.argmax(soft, axis=1), labels)
        np.testing.assert_array_equal(soft_targets(plan2), soft)

    def test_balanced_assignment(self):
        # 3 obvious clusters of 4 samples each
        logits = np.repeat(np.eye(3) * 10, 4, axis=0)
        _, labels = self_label(logits)
        np.testing.assert_array_equal(labels, np.repeat(np.arange(3), 4))


if __name__ == '__main__':
    unittest.main()
