import unittest

import numpy as np

from subco_tracker.core.config import SyntheticConfig
from subco_tracker.core.exceptions import ConfigError
from subco_tracker.data.synthetic import crossing_scene, generate_synthetic


class TestSyntheticGenerator(unittest.TestCase):

    def setUp(self):
        self.cfg = SyntheticConfig(num_objects=3, num_frames=12, image_size=(96, 72),
                                   object_size_range=(8, 16), seed=5)

    def test_same_seed_same_output(self):
        """Generation is a pure function of the config."""
        a_sample, a_gt = generate_synthetic(self.cfg)
        b_sample, b_gt = generate_synthetic(self.cfg)
        for x, y in zip(a_sample.images, b_sample.images):
            np.testing.assert_array_equal(x, y)
        self.assertEqual(a_sample.frames, b_sample.frames)
        self.assertEqual(a_gt, b_gt)

    def test_shapes_and_frame_indices(self):
        sample, gt = generate_synthetic(self.cfg)
        self.assertEqual(sample.length, 12)
        self.assertEqual([f.frame for f in gt], list(range(1, 13)))
        self.assertEqual(sample.images[0].shape, (72, 96, 3))
        self.assertEqual(sample.images[0].dtype, np.uint8)

    def test_boxes_stay_inside_the_image(self):
        sample, gt = generate_synthetic(self.cfg)
        for frame in list(sample.frames) + list(gt):
            for det in frame:
                self.assertGreaterEqual(det.box.x_left, 0.0)
                self.assertGreaterEqual(det.box.y_top, 0.0)
                self.assertLessEqual(det.box.x_right, 96 + 1e-9)
                self.assertLessEqual(det.box.y_bottom, 72 + 1e-9)

    def test_clean_detector_keeps_identities(self):
        """Without dropout, clutter and occluders every frame holds every gt id."""
        cfg = SyntheticConfig(num_objects=3, num_frames=10, image_size=(96, 72), object_size_range=(8, 16),
                              detector_dropout=0.0, clutter_rate=0.0, occluder_count=0, seed=2)
        sample, gt = generate_synthetic(cfg)
        for det_frame, gt_frame in zip(sample.frames, gt):
            self.assertEqual(set(gt_frame.ids()), {1, 2, 3})
            self.assertEqual(set(det_frame.ids()), {1, 2, 3})

    def test_dropout_rate(self):
        """With nothing else removing boxes, the detected share of gt boxes is one minus the dropout."""
        cfg = SyntheticConfig(num_objects=10, num_frames=200, object_size_range=(8, 16), detector_dropout=0.5,
                              occluder_count=0, clutter_rate=0.0, box_noise=0.0, seed=11)
        sample, gt = generate_synthetic(cfg)
        total = sum(len(frame) for frame in gt)
        detected = sum(len(frame) for frame in sample.frames)
        self.assertEqual(total, 2000)
        std = np.sqrt(0.25 / total)
        self.assertLess(abs(detected / total - 0.5), 4 * std)

    def test_brightness_flicker(self):
        base = dict(num_objects=1, num_frames=20, object_size_range=(10, 12), occluder_count=0,
                    appearance_noise=0.0, seed=8)

        def center_colors(cfg):
            sample, gt = generate_synthetic(cfg)
            colors = []
            for image, frame in zip(sample.images, gt):
                box = frame.detections[0].box
                colors.append(image[int(box.y_top + box.height / 2), int(box.x_left + box.width / 2)])
            return np.array(colors, dtype=float)

        steady = center_colors(SyntheticConfig(**base))
        np.testing.assert_array_equal(steady, np.broadcast_to(steady[0], steady.shape))
        flickering = center_colors(SyntheticConfig(brightness_flicker=0.3, **base))
        self.assertGreater(len({tuple(c) for c in flickering}), 10)

    def test_occlusion_heavy_preset_misses_more(self):
        def missed_share(cfg):
            sample, gt = generate_synthetic(cfg)
            found = sum(sum(1 for det in frame if det.gt_track_id is not None) for frame in sample.frames)
            return 1.0 - found / sum(len(frame) for frame in gt)

        heavy = np.mean([missed_share(SyntheticConfig.preset("occlusion_heavy", seed=s)) for s in range(8)])
        default = np.mean([missed_share(SyntheticConfig(seed=s)) for s in range(8)])
        self.assertGreater(heavy, default)

    def test_objects_must_fit(self):
        with self.assertRaises(ConfigError):
            generate_synthetic(SyntheticConfig(image_size=(30, 30), object_size_range=(10, 40)))

    def test_crossing_scene(self):
        sample, gt = crossing_scene(num_frames=10, speed=5.0)
        meet = gt[5]
        boxes = [det.box for det in meet]
        self.assertAlmostEqual(boxes[0].x_left, boxes[1].x_left)
        self.assertEqual(sample.frames[0].ids(), [1, 2])
        self.assertLess(gt[0].detections[0].box.x_left, gt[0].detections[1].box.x_left)
        self.assertLess(gt[-1].detections[0].box.x_left, gt[-1].detections[1].box.x_left)


if __name__ == '__main__':
    unittest.main()
