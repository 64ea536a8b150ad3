import itertools
import math
import unittest

import numpy as np

from subco_tracker.core.assignment import soft_assign
from subco_tracker.core.config import AssignmentConfig, LossConfig
from subco_tracker.core.embedder import EmbedderParams, init_params
from subco_tracker.core.exceptions import DimensionError
from subco_tracker.core.loss import (
    inter_frame_loss,
    intra_frame_loss,
    loss_and_gradient_from_crops,
    propagate_assignments,
    sample_crops,
    subco_loss,
    subco_loss_gradient,
)
from subco_tracker.core.schemas import AssignmentResult, SequenceSample
from subco_tracker.utils.gradcheck import (
    LOSS_TOLERANCE,
    TINY_EMBEDDER,
    TINY_LOSS,
    check_loss_gradient,
    tiny_sample,
)


def exact(A, d):
    A = np.asarray(A, dtype=np.float64)
    return AssignmentResult(A=A, R=A, C=A, d=np.asarray(d, dtype=np.float64), i=np.zeros(A.shape[1]))


class TestPropagation(unittest.TestCase):

    def test_single_step(self):
        res = soft_assign(np.random.default_rng(0).normal(size=(2, 3)), AssignmentConfig())
        A_tilde, d_bar = propagate_assignments([res])
        np.testing.assert_allclose(A_tilde, res.A)
        np.testing.assert_allclose(d_bar, res.d)

    def test_permutation_chain(self):
        p1, p2 = np.eye(3)[[2, 0, 1]], np.eye(3)[[1, 2, 0]]
        A_tilde, d_bar = propagate_assignments([exact(p1, np.zeros(3)), exact(p2, np.zeros(3))])
        np.testing.assert_array_equal(A_tilde, p1 @ p2)
        np.testing.assert_array_equal(d_bar, 0.0)

    def test_matches_path_sum(self):
        """Every entry is the sum over index paths of the per-step products."""
        rng = np.random.default_rng(1)
        cfg = AssignmentConfig(delta_match=0.2, tau=3.0)
        sizes = [2, 3, 1, 3]
        steps = [soft_assign(rng.normal(size=(sizes[t], sizes[t + 1])), cfg) for t in range(3)]
        A_tilde, d_bar = propagate_assignments(steps)

        expected = np.zeros((2, 3))
        expected_d = np.zeros(2)
        for i in range(2):
            expected_d[i] += steps[0].d[i]
            for a in range(sizes[1]):
                expected_d[i] += steps[0].A[i, a] * steps[1].d[a]
                for b in range(sizes[2]):
                    expected_d[i] += steps[0].A[i, a] * steps[1].A[a, b] * steps[2].d[b]
            for a, b, j in itertools.product(range(sizes[1]), range(sizes[2]), range(3)):
                expected[i, j] += steps[0].A[i, a] * steps[1].A[a, b] * steps[2].A[b, j]
        np.testing.assert_allclose(A_tilde, expected)
        np.testing.assert_allclose(d_bar, expected_d)

    def test_random_chains_match_path_sum(self):
        cfg = AssignmentConfig(delta_match=0.0, tau=2.0)
        for seed in range(100):
            rng = np.random.default_rng(100 + seed)
            sizes = list(rng.integers(1, 5, size=int(rng.integers(2, 6))))
            steps = [soft_assign(rng.normal(size=(sizes[t], sizes[t + 1])), cfg) for t in range(len(sizes) - 1)]
            A_tilde, _ = propagate_assignments(steps)
            expected = np.zeros((sizes[0], sizes[-1]))
            for path in itertools.product(*(range(s) for s in sizes)):
                expected[path[0], path[-1]] += math.prod(steps[t].A[path[t], path[t + 1]] for t in range(len(steps)))
            np.testing.assert_allclose(A_tilde, expected, rtol=0, atol=1e-9)

    def test_split_chains_compose(self):
        """Propagating two halves and composing them equals propagating the whole chain."""
        cfg = AssignmentConfig(delta_match=0.1, tau=4.0)
        for seed in range(50):
            rng = np.random.default_rng(300 + seed)
            sizes = list(rng.integers(1, 6, size=int(rng.integers(3, 8))))
            steps = [soft_assign(rng.normal(size=(sizes[t], sizes[t + 1])), cfg) for t in range(len(sizes) - 1)]
            cut = int(rng.integers(1, len(steps)))
            A_all, d_all = propagate_assignments(steps)
            A_left, d_left = propagate_assignments(steps[:cut])
            A_right, d_right = propagate_assignments(steps[cut:])
            np.testing.assert_allclose(A_all, A_left @ A_right, rtol=0, atol=1e-9)
            np.testing.assert_allclose(d_all, d_left + A_left @ d_right, rtol=0, atol=1e-9)

    def test_propagated_mass_stays_bounded(self):
        for seed in range(100):
            rng = np.random.default_rng(500 + seed)
            cfg = AssignmentConfig(delta_match=float(rng.uniform(-1, 1)), tau=float(rng.uniform(0.5, 20)))
            sizes = list(rng.integers(1, 6, size=int(rng.integers(2, 9))))
            steps = [soft_assign(rng.normal(size=(sizes[t], sizes[t + 1])), cfg) for t in range(len(sizes) - 1)]
            A_tilde, d_bar = propagate_assignments(steps)
            self.assertTrue(np.all(A_tilde.sum(axis=1) + d_bar <= 1.0 + 1e-6), f"seed {seed}")
            self.assertTrue(np.all(A_tilde >= 0.0) and np.all(d_bar >= 0.0))

    def test_chain_break(self):
        with self.assertRaises(DimensionError):
            propagate_assignments([exact(np.eye(2), np.zeros(2)), exact(np.eye(3), np.zeros(3))])
        with self.assertRaises(ValueError):
            propagate_assignments([])


class TestInterFrameLoss(unittest.TestCase):

    def test_perfect_consistency(self):
        cfg = LossConfig()
        value, alive = inter_frame_loss(np.array([[1.0]]), np.array([0.0]), np.array([[1.0]]), cfg)
        self.assertAlmostEqual(value, -math.log(1.0 + cfg.epsilon_log))
        self.assertEqual(alive.tolist(), [True])

    def test_half_overlap_without_epsilon(self):
        cfg = LossConfig(epsilon_log=0.0)
        value, _ = inter_frame_loss(np.array([[0.5]]), np.array([0.0]), np.array([[0.5]]), cfg)
        self.assertAlmostEqual(value, 2.0 * math.log(2.0))

    def test_dead_tracks_are_left_out(self):
        cfg = LossConfig(deletion_threshold=0.5, epsilon_log=0.0)
        A = np.array([[0.5, 0.0], [0.0, 0.1]])
        value, alive = inter_frame_loss(A, np.array([0.2, 0.9]), A, cfg)
        self.assertEqual(alive.tolist(), [True, False])
        self.assertAlmostEqual(value, -math.log(0.25))
        none, _ = inter_frame_loss(A, np.array([0.5, 0.9]), A, cfg)
        self.assertIsNone(none)


class TestIntraFrameLoss(unittest.TestCase):

    def test_single_detection_formula(self):
        cfg = LossConfig(delta_match=0.5, tau=10.0)
        x = np.array([[0.6, 0.0, 0.0]])
        s = 0.36
        a11 = math.exp(cfg.tau * s) / (math.exp(cfg.tau * cfg.delta_match) + math.exp(cfg.tau * s))
        self.assertAlmostEqual(intra_frame_loss([x], cfg), 1.0 - a11)

    def test_empty_frames(self):
        self.assertEqual(intra_frame_loss([np.zeros((0, 3)), np.zeros((0, 3))], LossConfig()), 0.0)

    def test_orthogonal_embeddings(self):
        cfg = LossConfig(delta_match=0.5, tau=50.0)
        self.assertLess(intra_frame_loss([np.eye(2)], cfg), 1e-6)


class TestSubcoLoss(unittest.TestCase):

    def setUp(self):
        self.params = init_params(TINY_EMBEDDER, seed=0)
        self.sample = tiny_sample(0, num_frames=3)

    def test_lambda_zero_total_is_inter(self):
        cfg = LossConfig(sequence_length=3, delta_match=0.0, tau=5.0, intra_weight=0.0)
        breakdown = subco_loss(self.sample, self.params, cfg)
        self.assertFalse(breakdown.skipped)
        self.assertEqual(breakdown.total, breakdown.inter)
        self.assertGreaterEqual(breakdown.inter, -1e-8)

    def test_total_combines_terms(self):
        cfg = LossConfig(sequence_length=3, delta_match=0.0, tau=5.0, intra_weight=0.7)
        breakdown = subco_loss(self.sample, self.params, cfg)
        self.assertAlmostEqual(breakdown.total, breakdown.inter + 0.7 * breakdown.intra)

    def test_constant_embedder_is_consistent(self):
        """An embedder that maps every crop to one unit vector has a near-zero inter-frame loss."""
        params = EmbedderParams(np.zeros((4, 12)), np.zeros(4), np.zeros((3, 4)), np.array([1.0, 0.0, 0.0]),
                                patch_size=(2, 2))
        sample = tiny_sample(3, num_frames=3, max_dets=1)
        breakdown = subco_loss(sample, params, LossConfig(sequence_length=3, delta_match=0.5, tau=10.0))
        self.assertLess(breakdown.inter, 0.05)

    def test_empty_first_frame_is_skipped(self):
        crops = [np.zeros((0, 12)), np.random.default_rng(0).random((2, 12)), np.random.default_rng(1).random((1, 12))]
        breakdown, grads = loss_and_gradient_from_crops(crops, self.params, TINY_LOSS)
        self.assertTrue(breakdown.skipped)
        self.assertEqual(breakdown.total, 0.0)
        for grad in grads.values():
            np.testing.assert_array_equal(grad, 0.0)

    def test_all_tracks_deleted_is_skipped(self):
        # unit embeddings score at most 1, far below the slot score
        cfg = LossConfig(sequence_length=3, delta_match=5.0, tau=10.0)
        breakdown = subco_loss(self.sample, self.params, cfg)
        self.assertTrue(breakdown.skipped)
        self.assertEqual(breakdown.alive_count, 0)

    def test_intra_only(self):
        cfg = LossConfig(sequence_length=2, delta_match=0.0, tau=5.0, intra_weight=1.0, use_inter=False)
        breakdown = subco_loss(self.sample, self.params, cfg)
        self.assertEqual(breakdown.inter, 0.0)
        self.assertAlmostEqual(breakdown.total, breakdown.intra)

    def test_needs_images(self):
        with self.assertRaises(ValueError):
            sample_crops(SequenceSample(frames=self.sample.frames), (2, 2))

    def test_gradient_matches_finite_differences(self):
        checked = 0
        for seed in range(8):
            error, _ = check_loss_gradient(seed)
            if error is None:
                continue
            checked += 1
            self.assertLess(error, LOSS_TOLERANCE, f"seed {seed}")
        self.assertGreater(checked, 0)

    def test_small_step_against_gradient_lowers_loss(self):
        cfg = LossConfig(sequence_length=3, delta_match=0.0, tau=5.0, intra_weight=1.0)
        for seed in range(8):
            if check_loss_gradient(seed)[0] is None:
                continue
            params = init_params(TINY_EMBEDDER, seed=seed)
            sample = tiny_sample(seed, num_frames=3)
            before = subco_loss(sample, params, cfg).total
            grads = subco_loss_gradient(sample, params, cfg)
            stepped = params.with_arrays({n: a - 1e-4 * grads[n] for n, a in params.arrays().items()})
            self.assertLess(subco_loss(sample, stepped, cfg).total, before)
            return
        self.skipTest("no smooth instance among the first seeds")


if __name__ == '__main__':
    unittest.main()
