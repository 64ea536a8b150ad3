import math
import unittest

import numpy as np

from subco_tracker.core.assignment import (
    score_matrix,
    score_matrix_backward,
    soft_assign,
    soft_assign_backward,
)
from subco_tracker.core.config import AssignmentConfig
from subco_tracker.core.exceptions import DimensionError
from subco_tracker.core.schemas import EmbeddingMatrix
from subco_tracker.utils.gradcheck import numerical_gradient, relative_error


class TestScoreMatrix(unittest.TestCase):

    def test_identity_basis(self):
        np.testing.assert_array_equal(score_matrix(np.eye(2), np.eye(2)), np.eye(2))
        np.testing.assert_array_equal(score_matrix(np.ones((3, 2)), np.zeros((4, 2))), np.zeros((3, 4)))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        Y, X = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        expected = [[sum(Y[i, k] * X[j, k] for k in range(4)) for j in range(5)] for i in range(3)]
        np.testing.assert_allclose(score_matrix(EmbeddingMatrix(Y), EmbeddingMatrix(X)), expected)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            score_matrix(np.zeros((2, 3)), np.zeros((2, 4)))
        with self.assertRaises(DimensionError):
            score_matrix_backward(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((4, 2)))

    def test_backward(self):
        rng = np.random.default_rng(1)
        Y, X, G = rng.normal(size=(2, 3)), rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
        g_y, g_x = score_matrix_backward(Y, X, G)
        numeric = numerical_gradient(lambda a: float(np.sum(G * score_matrix(a["Y"], a["X"]))), {"Y": Y, "X": X}, h=1e-6)
        self.assertLess(relative_error({"Y": g_y, "X": g_x}, numeric), 1e-8)


class TestSoftAssign(unittest.TestCase):

    def test_single_pair_at_the_slot_score(self):
        for tau in (0.1, 1.0, 37.0):
            res = soft_assign(np.array([[0.3]]), AssignmentConfig(delta_match=0.3, tau=tau))
            self.assertAlmostEqual(res.R[0, 0], 0.5, places=12)
            self.assertAlmostEqual(res.d[0], 0.5, places=12)
            self.assertAlmostEqual(res.A[0, 0], 0.5, places=12)

    def test_single_pair_scalar_value(self):
        # exp(ln 2) / (exp(0) + exp(ln 2)) = 2/3
        res = soft_assign(np.array([[math.log(2.0)]]), AssignmentConfig(delta_match=0.0, tau=1.0))
        self.assertAlmostEqual(res.R[0, 0], 2.0 / 3.0, places=12)
        self.assertAlmostEqual(res.d[0], 1.0 / 3.0, places=12)
        self.assertAlmostEqual(res.i[0], 1.0 / 3.0, places=12)

    def test_clear_two_by_two(self):
        res = soft_assign(np.array([[10.0, -10.0], [-10.0, 10.0]]), AssignmentConfig(delta_match=0.0, tau=1.0))
        np.testing.assert_allclose(res.A, np.eye(2), atol=1e-3)
        np.testing.assert_allclose(res.d, 0.0, atol=1e-3)

    def test_simplex_and_min_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            m, k = rng.integers(1, 7, size=2)
            cfg = AssignmentConfig(delta_match=float(rng.uniform(-1, 1)), tau=float(rng.uniform(0.5, 20)))
            res = soft_assign(rng.normal(scale=2.0, size=(m, k)), cfg)
            np.testing.assert_allclose(res.R.sum(axis=1) + res.d, 1.0, rtol=0, atol=1e-9)
            np.testing.assert_allclose(res.C.sum(axis=0) + res.i, 1.0, rtol=0, atol=1e-9)
            self.assertTrue(np.all(res.A <= res.R) and np.all(res.A <= res.C))
            self.assertTrue(np.all(res.A >= 0.0))

    def test_empty_sides(self):
        cfg = AssignmentConfig()
        no_tracks = soft_assign(np.zeros((0, 3)), cfg)
        self.assertEqual(no_tracks.A.shape, (0, 3))
        np.testing.assert_allclose(no_tracks.i, 1.0)
        no_dets = soft_assign(np.zeros((2, 0)), cfg)
        self.assertEqual(no_dets.A.shape, (2, 0))
        np.testing.assert_allclose(no_dets.d, 1.0)

    def test_non_finite_scores(self):
        with self.assertRaises(ValueError):
            soft_assign(np.array([[np.nan, 0.0]]), AssignmentConfig())
        with self.assertRaises(ValueError):
            soft_assign(np.array([[np.inf]]), AssignmentConfig())

    def test_large_scores_stay_finite(self):
        res = soft_assign(np.array([[1e3, -1e3], [0.0, 1e3]]), AssignmentConfig(tau=10.0))
        self.assertTrue(np.all(np.isfinite(res.A)))

    def test_raising_a_score_raises_both_directions(self):
        rng = np.random.default_rng(4)
        cfg = AssignmentConfig(delta_match=0.1, tau=3.0)
        S = rng.normal(size=(3, 3))
        base = soft_assign(S, cfg)
        bumped = S.copy()
        bumped[1, 2] += 0.5
        after = soft_assign(bumped, cfg)
        self.assertGreater(after.R[1, 2], base.R[1, 2])
        self.assertGreater(after.C[1, 2], base.C[1, 2])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        cfg = AssignmentConfig(delta_match=0.0, tau=2.0)
        S = rng.normal(size=(3, 4))
        rows, cols = np.array([2, 0, 1]), np.array([3, 1, 0, 2])
        res = soft_assign(S, cfg)
        permuted = soft_assign(S[rows][:, cols], cfg)
        np.testing.assert_allclose(permuted.A, res.A[rows][:, cols])
        np.testing.assert_allclose(permuted.d, res.d[rows])
        np.testing.assert_allclose(permuted.i, res.i[cols])

    def test_high_temperature_limit(self):
        S = np.array([[0.9, 0.1], [0.2, 0.3]])
        res = soft_assign(S, AssignmentConfig(delta_match=0.5, tau=200.0))
        self.assertGreater(res.A[0, 0], 1.0 - 1e-6)


class TestSoftAssignBackward(unittest.TestCase):

    def _check(self, S, cfg, seed):
        rng = np.random.default_rng(seed)
        m, k = S.shape
        gA, gd, gi = rng.normal(size=(m, k)), rng.normal(size=m), rng.normal(size=k)

        def objective(arrays):
            res = soft_assign(arrays["S"], cfg)
            return float(np.sum(gA * res.A) + gd @ res.d + gi @ res.i)

        analytic = soft_assign_backward(S, cfg, gA, grad_d=gd, grad_i=gi)
        numeric = numerical_gradient(objective, {"S": S}, h=1e-6)
        return relative_error({"S": analytic}, numeric)

    def test_zero_upstream(self):
        S = np.random.default_rng(0).normal(size=(2, 3))
        np.testing.assert_array_equal(soft_assign_backward(S, AssignmentConfig(), np.zeros((2, 3))), 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        cfg = AssignmentConfig(delta_match=0.1, tau=2.0)
        for seed in range(5):
            for shape in ((1, 1), (2, 2)):
                S = rng.normal(size=shape)
                res = soft_assign(S, cfg)
                if shape != (1, 1) and np.min(np.abs(res.R - res.C)) < 1e-4:
                    continue
                self.assertLess(self._check(S, cfg, seed), 1e-5)

    def test_row_mass_has_no_gradient(self):
        """R rows plus d always sum to one."""
        rng = np.random.default_rng(7)
        S = rng.normal(size=(3, 4))
        cfg = AssignmentConfig(delta_match=0.3, tau=5.0)
        grad = soft_assign_backward(S, cfg, np.zeros((3, 4)), grad_d=np.ones(3), grad_R=np.ones((3, 4)))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            soft_assign_backward(np.zeros((2, 2)), AssignmentConfig(), np.zeros((2, 3)))
        with self.assertRaises(DimensionError):
            soft_assign_backward(np.zeros((2, 2)), AssignmentConfig(), np.zeros((2, 2)), grad_d=np.zeros(3))


if __name__ == '__main__':
    unittest.main()
