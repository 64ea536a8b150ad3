import json
import os
import tempfile
import unittest

import numpy as np

from subco_tracker.core.config import LossConfig, OptimizerConfig, RunConfig
from subco_tracker.core.embedder import init_params
from subco_tracker.core.schemas import BBox, Detection, FrameDetections, SequenceSample
from subco_tracker.core.training import AdamW, train
from subco_tracker.data.dataset import synthetic_split, training_windows
from subco_tracker.utils.gradcheck import TINY_EMBEDDER, TINY_LOSS, tiny_sample


class TestAdamW(unittest.TestCase):

    def test_first_step(self):
        """The first bias-corrected step moves each entry by about lr against its gradient sign."""
        opt = AdamW(lr=0.1, weight_decay=0.01)
        out = opt.step({"w": np.array([1.0, -1.0])}, {"w": np.array([2.0, -0.5])})
        # decay: 1 - 0.1 * 0.01 * 1 = 0.999
        np.testing.assert_allclose(out["w"], [0.999 - 0.1, -0.999 + 0.1], atol=1e-6)

    def test_inputs_untouched_and_state_kept(self):
        opt = AdamW(lr=0.01)
        arrays = {"w": np.ones(3)}
        opt.step(arrays, {"w": np.ones(3)})
        np.testing.assert_array_equal(arrays["w"], 1.0)
        self.assertEqual(opt.t, 1)
        self.assertIn("w", opt.m)

    def test_zero_lr_is_a_no_op(self):
        opt = AdamW(lr=0.0, weight_decay=0.5)
        out = opt.step({"w": np.array([3.0])}, {"w": np.array([1.0])})
        np.testing.assert_array_equal(out["w"], [3.0])


class TestTrain(unittest.TestCase):

    def setUp(self):
        self.dataset = [tiny_sample(seed, num_frames=3) for seed in range(4)]
        self.params = init_params(TINY_EMBEDDER, seed=0)

    def test_zero_epochs(self):
        params, history = train(self.dataset, self.params, TINY_LOSS, OptimizerConfig(epochs=0))
        for name, array in self.params.arrays().items():
            np.testing.assert_array_equal(params.arrays()[name], array)
        self.assertEqual(history.records, [])

    def test_zero_lr_history_is_flat(self):
        _, history = train(self.dataset, self.params, TINY_LOSS, OptimizerConfig(lr=0.0, epochs=3))
        for loss in history.losses[1:]:
            self.assertAlmostEqual(loss, history.losses[0], places=12)

    def test_same_seed_same_result(self):
        opt = OptimizerConfig(lr=1e-2, epochs=2, batch_size=3, seed=4)
        a, history_a = train(self.dataset, self.params, TINY_LOSS, opt)
        b, history_b = train(self.dataset, self.params, TINY_LOSS, opt)
        self.assertEqual(history_a.losses, history_b.losses)
        for name in a.arrays():
            np.testing.assert_array_equal(a.arrays()[name], b.arrays()[name])

    def test_loss_goes_down(self):
        opt = OptimizerConfig(lr=5e-3, weight_decay=0.0, epochs=15, lr_decay_epoch=0)
        _, history = train(self.dataset, self.params, TINY_LOSS, opt)
        self.assertLess(history.losses[-1], history.losses[0])

    def test_epoch_log_lines(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "logs", "train_log.jsonl")
            train(self.dataset, self.params, TINY_LOSS, OptimizerConfig(epochs=2, lr_decay_epoch=2, lr=1e-3), log_path=path)
            with open(path, encoding="utf-8") as f:
                rows = [json.loads(line) for line in f]
        self.assertEqual([r["epoch"] for r in rows], [1, 2])
        self.assertAlmostEqual(rows[1]["lr"], 1e-4)
        self.assertEqual(rows[0]["samples"], 4)

    def test_all_skipped_records_warning(self):
        image = np.zeros((8, 8, 3), dtype=np.uint8)
        box = BBox(0, 0, 4, 4)
        sample = SequenceSample(
            frames=[FrameDetections(1), FrameDetections(2, [Detection(2, box, 0.9)]), FrameDetections(3)],
            images=[image, image, image])
        cfg = LossConfig(sequence_length=3, delta_match=0.0, tau=5.0)
        params, history = train([sample], self.params, cfg, OptimizerConfig(epochs=2))
        self.assertEqual(len(history.warnings), 2)
        self.assertIsNone(history.losses[0])
        self.assertEqual(history.records[0].skipped, 1)
        np.testing.assert_array_equal(params.w1, self.params.w1)

    def test_empty_dataset(self):
        with self.assertRaises(ValueError):
            train([], self.params, TINY_LOSS, OptimizerConfig())


class TestDefaultTraining(unittest.TestCase):
    """A full default run on the synthetic train split."""

    def test_inter_loss_drops_below_a_quarter(self):
        run = RunConfig()
        windows = training_windows((sample for sample, _ in synthetic_split(run, "train")), run)
        self.assertEqual(run.dataset.num_train_sequences, 30)
        self.assertEqual(run.optimizer.epochs, 20)
        params = init_params(run.embedder, seed=run.seed)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "train_log.jsonl")
            train(windows, params, run.loss, run.optimizer, log_path=path)
            with open(path, encoding="utf-8") as f:
                rows = [json.loads(line) for line in f]
        self.assertEqual(len(rows), 20)
        first, last = rows[0]["mean_inter"], rows[-1]["mean_inter"]
        self.assertLess(last, 0.25 * first, f"epoch 1 {first:.4f}, epoch 20 {last:.4f}")


if __name__ == '__main__':
    unittest.main()
