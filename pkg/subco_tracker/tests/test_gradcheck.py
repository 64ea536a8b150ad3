import unittest
from dataclasses import replace

import numpy as np

from subco_tracker.core.config import LossConfig
from subco_tracker.core.embedder import init_params
from subco_tracker.core.loss import sample_crops
from subco_tracker.utils.gradcheck import (
    TINY_EMBEDDER,
    TINY_LOSS,
    GradCheckResult,
    GradSuiteReport,
    gradient_check_loss,
    kink_margin,
    numerical_gradient,
    relative_error,
    run_gradient_suite,
    tiny_sample,
)


class TestGradCheck(unittest.TestCase):

    def test_numerical_gradient_of_quadratic(self):
        arrays = {"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])}
        grads = numerical_gradient(lambda x: float(np.sum(x["a"] ** 2) + 2.0 * x["b"][0, 0]), arrays)
        np.testing.assert_allclose(grads["a"], [2.0, -4.0], atol=1e-8)
        np.testing.assert_allclose(grads["b"], [[2.0]], atol=1e-8)

    def test_relative_error(self):
        a = {"w": np.array([1.0, 0.0])}
        self.assertEqual(relative_error(a, a), 0.0)
        self.assertAlmostEqual(relative_error(a, {"w": np.array([-1.0, 0.0])}), 1.0)
        self.assertEqual(relative_error({"w": np.zeros(2)}, {"w": np.zeros(2)}), 0.0)

    def test_tiny_sample_layout(self):
        sample = tiny_sample(4, num_frames=3, max_dets=2)
        self.assertEqual(sample.length, 3)
        self.assertEqual(len(sample.frames[0]), 2)
        self.assertTrue(all(1 <= len(f) <= 2 for f in sample.frames))

    def test_kink_margin_is_non_negative(self):
        params = init_params(TINY_EMBEDDER, seed=1)
        crops = sample_crops(tiny_sample(1), params.patch_size)
        self.assertGreaterEqual(kink_margin(crops, params, TINY_LOSS), 0.0)

    def test_suite_passes(self):
        report = run_gradient_suite(num_seeds=3)
        self.assertEqual(len(report.checked), 3)
        self.assertTrue(report.ok)
        self.assertTrue(report.summary().startswith("PASS 3/3"))
        self.assertLess(report.max_rel_error, 1e-4)

    def test_suite_uses_the_given_loss_and_seeds(self):
        # every score sits below a slot score of 5, so no track survives
        report = run_gradient_suite(num_seeds=2, max_attempts=3, loss_cfg=replace(TINY_LOSS, delta_match=5.0),
                                    first_seed=10)
        self.assertEqual([r.seed for r in report.results], [10, 11, 12])
        self.assertTrue(all(r.excluded for r in report.results))
        self.assertFalse(report.ok)

    def test_gradient_check_loss_keeps_the_loss_settings(self):
        cfg = gradient_check_loss(LossConfig(tau=20.0, delta_match=0.3, intra_weight=0.5, deletion_threshold=0.6))
        self.assertEqual(cfg, LossConfig(sequence_length=3, tau=20.0, delta_match=0.3, intra_weight=0.5,
                                         deletion_threshold=0.6))

    def test_report_without_checked_instances_fails(self):
        report = GradSuiteReport([GradCheckResult(0, 0.0, None, passed=False, excluded=True, reason="tie")])
        self.assertFalse(report.ok)
        self.assertTrue(report.summary().startswith("FAIL 0/0"))


if __name__ == '__main__':
    unittest.main()
