"""Synthetic sequences of moving colored rectangles with a simulated detector.

Randomness comes from a single ``numpy.random.Generator`` on the PCG64 bit
generator seeded with ``SyntheticConfig.seed``; draws happen in a fixed order,
so a config always produces the same frames and detections.
"""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from subco_tracker.core.config import SyntheticConfig
from subco_tracker.core.exceptions import ConfigError
from subco_tracker.core.schemas import BBox, Detection, FrameDetections, SequenceSample
from subco_tracker.utils.box_utils import covered_fraction

logger = logging.getLogger(__name__)

BACKGROUND = 40
OCCLUDER_GRAY = 128


@dataclass
class _Mover:
    x: float
    y: float
    w: float
    h: float
    vx: float
    vy: float
    color: np.ndarray

    def box(self) -> BBox:
        return BBox(self.x, self.y, self.w, self.h)

    def advance(self, rng: np.random.Generator, jitter: float, width: int, height: int) -> None:
        self.x += self.vx + (rng.normal(0.0, jitter) if jitter else 0.0)
        self.y += self.vy + (rng.normal(0.0, jitter) if jitter else 0.0)
        # Bounce off walls
        if self.x < 0:
            self.x, self.vx = -self.x, -self.vx
        if self.x + self.w > width:
            self.x, self.vx = 2 * (width - self.w) - self.x, -self.vx
        if self.y < 0:
            self.y, self.vy = -self.y, -self.vy
        if self.y + self.h > height:
            self.y, self.vy = 2 * (height - self.h) - self.y, -self.vy
        self.x = min(max(self.x, 0.0), width - self.w)
        self.y = min(max(self.y, 0.0), height - self.h)


def _base_colors(num: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Evenly spaced hues from a random offset, so every object gets a distinct color."""
    offset = rng.random()
    colors = []
    for k in range(num):
        hue = (offset + k / num) % 1.0
        value = 0.65 + 0.3 * ((k * 7) % num) / max(num - 1, 1)
        colors.append(np.array(colorsys.hsv_to_rgb(hue, 0.85, value)) * 255.0)
    return colors


def _spawn_objects(cfg: SyntheticConfig, rng: np.random.Generator) -> List[_Mover]:
    width, height = cfg.image_size
    low, high = cfg.object_size_range
    colors = _base_colors(cfg.num_objects, rng)
    movers = []
    for k in range(cfg.num_objects):
        w, h = (float(v) for v in rng.integers(low, high + 1, size=2))
        x = rng.uniform(0, width - w)
        y = rng.uniform(0, height - h)
        speed = rng.uniform(*cfg.speed_range)
        angle = rng.uniform(0, 2 * np.pi)
        movers.append(_Mover(x, y, w, h, speed * np.cos(angle), speed * np.sin(angle), colors[k]))
    return movers


def _spawn_occluders(cfg: SyntheticConfig, rng: np.random.Generator) -> List[_Mover]:
    width, height = cfg.image_size
    big = cfg.object_size_range[1]
    occluders = []
    for _ in range(cfg.occluder_count):
        w = float(min(width - 1, rng.uniform(1.5, 2.5) * big))
        h = float(min(height - 1, rng.uniform(1.5, 2.5) * big))
        x = rng.uniform(0, width - w)
        y = rng.uniform(0, height - h)
        vx = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
        occluders.append(_Mover(x, y, w, h, vx, 0.0, np.full(3, float(OCCLUDER_GRAY))))
    return occluders


def _fill(image: np.ndarray, box: BBox, color) -> None:
    x0, y0 = int(round(box.x_left)), int(round(box.y_top))
    x1, y1 = int(round(box.x_right)), int(round(box.y_bottom))
    image[max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = color


def _simulate_detector(cfg: SyntheticConfig, rng: np.random.Generator, frame: int,
                       gt: List[Detection], occlusion: List[float]) -> List[Detection]:
    width, height = cfg.image_size
    dets = []
    for det, occluded in zip(gt, occlusion):
        dropped = rng.random() < cfg.detector_dropout
        noise = rng.normal(0.0, cfg.box_noise, size=4) if cfg.box_noise else np.zeros(4)
        conf_noise = rng.normal(0.0, 0.03)
        if dropped or occluded > cfg.occlusion_drop_threshold:
            continue
        x0, y0 = det.box.x_left + noise[0], det.box.y_top + noise[1]
        x1 = max(det.box.x_right + noise[2], x0 + 2.0)
        y1 = max(det.box.y_bottom + noise[3], y0 + 2.0)
        box = BBox(x0, y0, x1 - x0, y1 - y0).clip(width, height)
        if box is None:
            continue
        conf = float(np.clip(0.95 - 0.6 * occluded + conf_noise, 0.05, 1.0))
        dets.append(Detection(frame=frame, box=box, confidence=conf, gt_track_id=det.gt_track_id))

    low, high = cfg.object_size_range
    for _ in range(rng.poisson(cfg.clutter_rate)):
        w, h = (float(v) for v in rng.integers(low, high + 1, size=2))
        box = BBox(rng.uniform(0, width - w), rng.uniform(0, height - h), w, h)
        dets.append(Detection(frame=frame, box=box, confidence=float(rng.uniform(0.1, 0.5))))

    order = rng.permutation(len(dets))
    return [dets[k] for k in order]


def generate_synthetic(cfg: SyntheticConfig) -> Tuple[SequenceSample, List[FrameDetections]]:
    """Renders a sequence and returns (detector output with images, ground truth).

    Detector boxes keep the identity of the object they came from in
    gt_track_id (clutter boxes have none); confidence drops with occlusion and
    boxes more than ``occlusion_drop_threshold`` covered are never detected.
    With ``brightness_flicker`` set, each object's color is scaled by a fresh
    log-normal factor every frame.
    """
    width, height = cfg.image_size
    biggest = cfg.object_size_range[1]
    if biggest >= width or biggest >= height:
        raise ConfigError(f"objects of up to {biggest}px cannot fit a {width}x{height} image")

    rng = np.random.default_rng(cfg.seed)
    objects = _spawn_objects(cfg, rng)
    occluders = _spawn_occluders(cfg, rng)

    images, gt_frames, det_frames = [], [], []
    for t in range(cfg.num_frames):
        frame = t + 1
        if t > 0:
            for obj in objects:
                obj.advance(rng, cfg.jitter, width, height)
            for occ in occluders:
                occ.advance(rng, 0.0, width, height)

        image = np.full((height, width, 3), BACKGROUND, dtype=np.uint8)
        brightness = 1.0 + cfg.brightness_ramp * t / max(cfg.num_frames - 1, 1)
        flicker = np.ones(len(objects))
        if cfg.brightness_flicker > 0:
            flicker = np.exp(rng.normal(0.0, cfg.brightness_flicker, size=len(objects)))
        for obj, factor in zip(objects, flicker):
            color = obj.color * brightness * factor + rng.normal(0.0, cfg.appearance_noise, size=3)
            _fill(image, obj.box(), np.clip(np.round(color), 0, 255).astype(np.uint8))
        occluder_mask = np.zeros((height, width), dtype=bool)
        for occ in occluders:
            _fill(image, occ.box(), OCCLUDER_GRAY)
            _fill(occluder_mask, occ.box(), True)

        gt = [Detection(frame=frame, box=obj.box(), confidence=1.0, gt_track_id=k + 1)
              for k, obj in enumerate(objects)]
        occlusion = [covered_fraction(det.box, occluder_mask) for det in gt]
        images.append(image)
        gt_frames.append(FrameDetections(frame, gt))
        det_frames.append(FrameDetections(frame, _simulate_detector(cfg, rng, frame, gt, occlusion)))

    logger.debug(f"Generated {cfg.num_frames} frames with {cfg.num_objects} objects (seed {cfg.seed})")
    return SequenceSample(frames=det_frames, images=images), gt_frames


def crossing_scene(num_frames: int = 24, speed: float = 6.0, image_size: Tuple[int, int] = (320, 240),
                   object_size: Tuple[int, int] = (24, 40), vertical_offset: float = 8.0,
                   confidence: float = 0.9) -> Tuple[SequenceSample, List[FrameDetections]]:
    """Two objects approach each other, meet at the middle frame and both reverse direction.

    A constant-velocity motion model predicts each track onto the other
    object right after the crossing, while appearance stays distinctive.
    Detections are the exact ground-truth boxes; the second object is drawn
    on top, and the first one's confidence drops by 0.6 times its covered share.
    """
    width, height = image_size
    obj_w, obj_h = object_size
    meet = num_frames // 2
    center_x = (width - obj_w) / 2.0
    top = (height - obj_h) / 2.0
    colors = (np.array([220, 40, 40], dtype=np.uint8), np.array([40, 80, 220], dtype=np.uint8))

    images, gt_frames, det_frames = [], [], []
    for t in range(num_frames):
        frame = t + 1
        offset = speed * abs(meet - t)
        boxes = (BBox(center_x - offset, top, obj_w, obj_h),
                 BBox(center_x + offset, top + vertical_offset, obj_w, obj_h))
        image = np.full((height, width, 3), BACKGROUND, dtype=np.uint8)
        for box, color in zip(boxes, colors):
            _fill(image, box, color)
        on_top = np.zeros((height, width), dtype=bool)
        _fill(on_top, boxes[1], True)
        confs = (max(confidence - 0.6 * covered_fraction(boxes[0], on_top), 0.05), confidence)
        images.append(image)
        gt_frames.append(FrameDetections(frame, [
            Detection(frame=frame, box=box, confidence=1.0, gt_track_id=k + 1) for k, box in enumerate(boxes)]))
        det_frames.append(FrameDetections(frame, [
            Detection(frame=frame, box=box, confidence=conf, gt_track_id=k + 1)
            for k, (box, conf) in enumerate(zip(boxes, confs))]))
    return SequenceSample(frames=det_frames, images=images), gt_frames
