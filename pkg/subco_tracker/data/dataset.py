"""Synthetic dataset directories, training windows and sequence statistics.

A sequence directory holds ``manifest.json``, ``frames/%06d.ppm`` (binary
P6), ``gt.txt`` and ``det.txt``. A dataset directory holds ``train/seq_XXX``
and ``val/seq_XXX`` sequence directories.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from subco_tracker.core.config import RunConfig, SyntheticConfig
from subco_tracker.core.schemas import FrameDetections, SequenceSample
from subco_tracker.data.mot_io import filter_by_confidence, parse_mot_file, write_detections_file
from subco_tracker.data.synthetic import generate_synthetic

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SPLITS = ("train", "val")


def save_dataset(sample: SequenceSample, gt_frames: Sequence[FrameDetections], out_dir,
                 cfg: Optional[SyntheticConfig] = None) -> Path:
    """Writes one sequence directory."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    frame_files = []
    for frame, image in zip(sample.frames, sample.images or ()):
        name = f"frames/{frame.frame:06d}.ppm"
        Image.fromarray(image).save(out_dir / name, format="PPM")
        frame_files.append(name)
    height, width = sample.images[0].shape[:2] if sample.images else (0, 0)
    manifest = {
        "num_frames": sample.length,
        "image_size": [width, height],
        "frames": frame_files,
        "synthetic": asdict(cfg) if cfg is not None else None,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    write_detections_file(gt_frames, out_dir / "gt.txt")
    write_detections_file(sample.frames, out_dir / "det.txt")
    logger.debug(f"Wrote sequence with {sample.length} frames to {out_dir}")
    return out_dir


def _contiguous(frames: List[FrameDetections], num_frames: int) -> List[FrameDetections]:
    by_index = {f.frame: f for f in frames}
    return [by_index.get(k, FrameDetections(k, ())) for k in range(1, num_frames + 1)]


def load_dataset(seq_dir, with_images: bool = True) -> Tuple[SequenceSample, List[FrameDetections]]:
    """Reads one sequence directory; frames without detections come back empty."""
    seq_dir = Path(seq_dir)
    manifest_path = seq_dir / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"No {MANIFEST} in {seq_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    num_frames = int(manifest["num_frames"])
    dets = _contiguous(parse_mot_file(seq_dir / "det.txt"), num_frames)
    gt = _contiguous(parse_mot_file(seq_dir / "gt.txt"), num_frames)
    images = None
    if with_images:
        images = [np.asarray(Image.open(seq_dir / name).convert("RGB"), dtype=np.uint8)
                  for name in manifest["frames"]]
    return SequenceSample(frames=dets, images=images), gt


def list_sequences(split_dir) -> List[Path]:
    """Sequence directories under a split directory, or the directory itself if it is one."""
    split_dir = Path(split_dir)
    if (split_dir / MANIFEST).exists():
        return [split_dir]
    if not split_dir.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {split_dir}")
    return sorted(p for p in split_dir.iterdir() if (p / MANIFEST).exists())


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def split_configs(run_cfg: RunConfig, split: str) -> List[SyntheticConfig]:
    """Generator configs of one split, one derived seed per sequence."""
    split_index = SPLITS.index(split)
    count = run_cfg.dataset.num_train_sequences if split == "train" else run_cfg.dataset.num_val_sequences
    return [replace(run_cfg.synthetic, seed=derive_seed(run_cfg.seed, split_index, k)) for k in range(count)]


def synthetic_split(run_cfg: RunConfig, split: str) -> List[Tuple[SequenceSample, List[FrameDetections]]]:
    """The sequences ``generate_dataset`` would write for a split, kept in memory."""
    return [generate_synthetic(cfg) for cfg in split_configs(run_cfg, split)]


def generate_dataset(run_cfg: RunConfig, out_dir) -> Dict[str, List[Path]]:
    """Generates the train and val splits, one derived seed per sequence."""
    out_dir = Path(out_dir)
    written: Dict[str, List[Path]] = {}
    for split in SPLITS:
        configs = split_configs(run_cfg, split)
        written[split] = []
        for k, cfg in enumerate(configs):
            sample, gt = generate_synthetic(cfg)
            written[split].append(save_dataset(sample, gt, out_dir / split / f"seq_{k:03d}", cfg))
        logger.info(f"Generated {len(configs)} {split} sequences in {out_dir / split}")
    return written


def make_training_samples(sample: SequenceSample, length: int, window_stride: Optional[int] = None,
                          frame_stride: int = 1) -> List[SequenceSample]:
    """Cuts a sequence into windows of ``length`` frames.

    ``frame_stride`` subsamples the sequence in time first; windows then start
    every ``window_stride`` subsampled frames (default: back to back).
    """
    if length < 2:
        raise ValueError(f"Training windows need at least 2 frames, got {length}")
    window_stride = window_stride or length
    keep = list(range(0, sample.length, frame_stride))
    windows = []
    for start in range(0, len(keep) - length + 1, window_stride):
        picked = keep[start:start + length]
        windows.append(SequenceSample(
            frames=[sample.frames[k] for k in picked],
            images=[sample.images[k] for k in picked] if sample.images is not None else None,
        ))
    return windows


def training_windows(samples: Iterable[SequenceSample], run_cfg: RunConfig) -> List[SequenceSample]:
    """Confidence-filtered training windows of ``loss.sequence_length`` frames from whole sequences."""
    windows = []
    for sample in samples:
        sample = replace(sample, frames=tuple(filter_by_confidence(sample.frames, run_cfg.dataset.min_confidence)))
        windows += make_training_samples(sample, run_cfg.loss.sequence_length,
                                         run_cfg.dataset.window_stride, run_cfg.dataset.frame_stride)
    return windows


@dataclass
class SequenceStats:
    """Track-length distribution and identity overlap of windows of several lengths."""
    track_lengths: Dict[int, int]
    length_histogram: List[int]
    histogram_edges: List[float]
    nonempty_overlap: Dict[int, float]  # window length -> share of windows with a common id in all frames
    mean_id_iou: Dict[int, float]  # window length -> mean |ids in all frames| / |ids in any frame|


def sequence_statistics(gt_frames: Sequence[FrameDetections], lengths: Sequence[int] = (2, 4, 8, 16),
                        bins: int = 10) -> SequenceStats:
    """Windows with an empty identity intersection are the degenerate training samples."""
    id_sets = [{i for i in frame.ids() if i is not None} for frame in gt_frames]
    track_lengths: Dict[int, int] = {}
    for ids in id_sets:
        for track_id in ids:
            track_lengths[track_id] = track_lengths.get(track_id, 0) + 1
    counts, edges = np.histogram(list(track_lengths.values()) or [0], bins=bins)

    nonempty, mean_iou = {}, {}
    for length in lengths:
        windows = [id_sets[s:s + length] for s in range(0, len(id_sets) - length + 1)]
        if not windows:
            continue
        inter = [set.intersection(*w) for w in windows]
        union = [set.union(*w) for w in windows]
        nonempty[length] = float(np.mean([len(i) > 0 for i in inter]))
        mean_iou[length] = float(np.mean([len(i) / len(u) if u else 0.0 for i, u in zip(inter, union)]))
    return SequenceStats(
        track_lengths=track_lengths,
        length_histogram=[int(c) for c in counts],
        histogram_edges=[float(e) for e in edges],
        nonempty_overlap=nonempty,
        mean_id_iou=mean_iou,
    )
