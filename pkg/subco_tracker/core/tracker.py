"""Online tracking-by-detection with BYTE two-stage association.

Every frame, detections are split by confidence into a high and a low set.
All open tracks are predicted with the Kalman filter and matched to the
high set first; non-tentative tracks left over are matched to the low set.
Each stage has its own cost: IoU, ReID cosine similarity, or
``IoU + omega * cosine``. Unmatched high detections confident enough start
new tracks.
"""

import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics.pairwise import cosine_similarity

from subco_tracker.core.config import CostMode, TrackerConfig
from subco_tracker.core.embedder import EmbedderParams, embed_frame
from subco_tracker.core.exceptions import DimensionError
from subco_tracker.core.kalman import KalmanFilter
from subco_tracker.core.schemas import (
    BBox,
    EmbeddingMatrix,
    FrameDetections,
    Track,
    TrackResult,
    TrackStatus,
)
from subco_tracker.utils.box_utils import iou, iou_matrix

logger = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12


def hungarian(cost) -> List[Tuple[int, int]]:
    """Minimum-cost one-to-one matching; ``inf`` entries are forbidden pairs.

    The matching uses as many allowed pairs as possible, then minimizes
    their total cost. Pairs come back sorted by row. Among equal optima the
    sorted pair list is the lexicographically smallest: the lowest row is
    matched whenever some optimum matches it, to its lowest possible column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        return []
    forbidden = ~np.isfinite(cost)
    if forbidden.all():
        return []
    # Larger than any total over allowed pairs, so a forbidden pair is only used when nothing else is left.
    big = (np.abs(cost[~forbidden]).max() + 1.0) * (min(cost.shape) + 1) * 2.0

    def solve(rows: List[int], cols: List[int]) -> Tuple[int, float, Dict[int, int]]:
        if not rows or not cols:
            return 0, 0.0, {}
        sub_forbidden = forbidden[np.ix_(rows, cols)]
        if sub_forbidden.all():
            return 0, 0.0, {}
        r, c = linear_sum_assignment(np.where(sub_forbidden, big, cost[np.ix_(rows, cols)]))
        pairs = {rows[a]: cols[b] for a, b in zip(r, c) if not sub_forbidden[a, b]}
        return len(pairs), float(sum(cost[i, j] for i, j in pairs.items())), pairs

    num_rows, num_cols = cost.shape
    best_count, best_total, current = solve(list(range(num_rows)), list(range(num_cols)))
    tolerance = 1e-9 * (1.0 + abs(best_total))

    matched: List[Tuple[int, int]] = []
    used_cols = set()
    fixed_total = 0.0
    for i in range(num_rows):
        rest = list(range(i + 1, num_rows))
        # current is an optimum that agrees with every row decided so far
        for j in range(current.get(i, num_cols)):
            if forbidden[i, j] or j in used_cols:
                continue
            count, total, pairs = solve(rest, [c for c in range(num_cols) if c not in used_cols and c != j])
            if len(matched) + 1 + count == best_count and \
                    abs(fixed_total + cost[i, j] + total - best_total) <= tolerance:
                current = {**pairs, i: j}
                break
        if i in current:
            matched.append((i, current[i]))
            used_cols.add(current[i])
            fixed_total += cost[i, current[i]]
    return matched


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > _NORM_FLOOR else v


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return cosine_similarity(a, b)


def _mean_to_tlwh(mean: np.ndarray) -> np.ndarray:
    cx, cy, aspect, height = mean[:4]
    width = max(aspect * height, _NORM_FLOOR)
    return np.array([cx - width / 2.0, cy - height / 2.0, width, height])


def combined_cost(track: Track, det_box: BBox, det_embedding: np.ndarray, omega: float) -> float:
    """IoU of the predicted box with the detection plus omega times the ReID cosine similarity.

    A higher value is a better match; hungarian gets the negation.
    """
    cos = _cosine(track.reid_feature[None, :], np.asarray(det_embedding, dtype=np.float64)[None, :])[0, 0]
    return iou(track.predicted_box, det_box) + omega * float(cos)


def stage_similarity(ious: np.ndarray, cos: np.ndarray, mode: CostMode,
                     cfg: TrackerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(similarity, allowed) matrices for one association stage."""
    if mode is CostMode.IOU:
        return ious, ious >= cfg.match_iou_min
    if mode is CostMode.REID:
        return cos, cos >= cfg.reid_min_similarity
    return ious + cfg.omega_reid * cos, ious >= cfg.match_iou_min


class SubcoTracker:
    """Stateful tracker for one sequence; feed frames in order through ``step``."""

    def __init__(self, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self.kf = KalmanFilter(std_weight_position=self.cfg.std_weight_position,
                               std_weight_velocity=self.cfg.std_weight_velocity)
        self.tracks: List[Track] = []
        self.removed: List[Track] = []
        self.frame_count = 0
        self._next_id = 1

    def _features(self, frame_dets: FrameDetections, embeddings) -> np.ndarray:
        if embeddings is None:
            # IoU-only tracking: every cosine term is 0.
            dim = self.tracks[0].reid_feature.shape[0] if self.tracks else 1
            return np.zeros((len(frame_dets), dim))
        rows = np.asarray(getattr(embeddings, "rows", embeddings), dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != len(frame_dets):
            raise DimensionError(f"Frame {frame_dets.frame} has {len(frame_dets)} detections "
                                 f"but embeddings of shape {rows.shape}")
        if self.tracks and rows.shape[1] != self.tracks[0].reid_feature.shape[0]:
            raise DimensionError(f"Embedding dimension {rows.shape[1]} does not match the tracks' "
                                 f"{self.tracks[0].reid_feature.shape[0]}")
        return rows

    def _associate(self, tracks: List[Track], frame_dets: FrameDetections, feats: np.ndarray,
                   det_indices: List[int], mode: CostMode):
        if not tracks or not det_indices:
            return [], list(tracks), list(det_indices)
        track_boxes = np.stack([_mean_to_tlwh(t.state.mean) for t in tracks])
        ious = iou_matrix(track_boxes, frame_dets.boxes()[det_indices])
        cos = _cosine(np.stack([t.reid_feature for t in tracks]), feats[det_indices])
        similarity, allowed = stage_similarity(ious, cos, mode, self.cfg)
        pairs = hungarian(np.where(allowed, -similarity, np.inf))
        matched_rows = {i for i, _ in pairs}
        matched_cols = {j for _, j in pairs}
        matches = [(tracks[i], det_indices[j]) for i, j in pairs]
        unmatched_tracks = [t for k, t in enumerate(tracks) if k not in matched_rows]
        unmatched_dets = [d for k, d in enumerate(det_indices) if k not in matched_cols]
        return matches, unmatched_tracks, unmatched_dets

    def _apply_match(self, track: Track, frame: int, det, feature: np.ndarray) -> None:
        track.state = self.kf.update(track.state, det.box)
        alpha = self.cfg.ema_alpha
        track.reid_feature = _normalize((1.0 - alpha) * track.reid_feature + alpha * feature)
        track.confidence = det.confidence
        track.age = 0
        track.hits += 1
        track.box_history.append((frame, det.box))
        if track.status is TrackStatus.LOST:
            track.status = TrackStatus.CONFIRMED
        elif track.status is TrackStatus.TENTATIVE and track.hits >= self.cfg.min_hits:
            track.status = TrackStatus.CONFIRMED

    def _mark_missed(self, track: Track) -> None:
        track.age += 1
        if track.status is TrackStatus.TENTATIVE or track.age > self.cfg.max_age:
            track.status = TrackStatus.REMOVED
        else:
            track.status = TrackStatus.LOST

    def _birth(self, frame: int, det, feature: np.ndarray) -> Track:
        track = Track(
            id=self._next_id,
            state=self.kf.initiate(det.box),
            reid_feature=_normalize(np.array(feature, dtype=np.float64)),
            confidence=det.confidence,
            status=TrackStatus.CONFIRMED if self.frame_count == 1 else TrackStatus.TENTATIVE,
            box_history=[(frame, det.box)],
        )
        self._next_id += 1
        return track

    def step(self, frame_dets: FrameDetections, embeddings=None) -> List[TrackResult]:
        """Processes one frame and returns the rows of confirmed tracks matched in it."""
        cfg = self.cfg
        self.frame_count += 1
        frame = frame_dets.frame
        feats = self._features(frame_dets, embeddings)
        dets = frame_dets.detections
        conf = frame_dets.confidences()
        high = [j for j in range(len(dets)) if conf[j] >= cfg.high_thresh]
        low = [j for j in range(len(dets)) if cfg.low_thresh < conf[j] < cfg.high_thresh]

        for track in self.tracks:
            track.state = self.kf.predict(track.state)

        matches, unmatched_tracks, unmatched_high = self._associate(
            self.tracks, frame_dets, feats, high, cfg.stage_costs[0])
        remaining = [t for t in unmatched_tracks if t.status is not TrackStatus.TENTATIVE]
        second, _, _ = self._associate(remaining, frame_dets, feats, low, cfg.stage_costs[1])
        matches = matches + second

        matched = set()
        for track, j in matches:
            self._apply_match(track, frame, dets[j], feats[j])
            matched.add(track.id)
        for track in self.tracks:
            if track.id not in matched:
                self._mark_missed(track)

        births = [self._birth(frame, dets[j], feats[j]) for j in unmatched_high
                  if dets[j].confidence >= cfg.new_track_thresh]

        self.removed.extend(t for t in self.tracks if not t.is_open)
        self.tracks = [t for t in self.tracks if t.is_open] + births

        rows = [TrackResult(frame, track.id, track.state.to_box(), dets[j].confidence)
                for track, j in matches if track.status is TrackStatus.CONFIRMED]
        rows += [TrackResult(frame, track.id, track.state.to_box(), track.confidence)
                 for track in births if track.status is TrackStatus.CONFIRMED]
        logger.debug(f"Frame {frame}: {len(matches)} matched, {len(births)} born, {len(self.tracks)} open tracks")
        return sorted(rows, key=lambda r: r.track_id)


def byte_step(tracker: SubcoTracker, frame_dets: FrameDetections,
              embeddings: Optional[EmbeddingMatrix] = None) -> Tuple[List[Track], List[TrackResult]]:
    rows = tracker.step(frame_dets, embeddings)
    return tracker.tracks, rows


def track_with_embeddings(frames: Sequence[FrameDetections], embeddings: Iterable,
                          cfg: Optional[TrackerConfig] = None) -> List[TrackResult]:
    """Runs a fresh tracker over frames with precomputed per-frame embeddings (or None entries)."""
    tracker = SubcoTracker(cfg)
    results: List[TrackResult] = []
    for frame_dets, emb in zip(frames, embeddings):
        results.extend(tracker.step(frame_dets, emb))
    return results


def _inside(frame_dets: FrameDetections, image: np.ndarray) -> FrameDetections:
    height, width = image.shape[:2]
    kept = [det for det in frame_dets if det.box.clip(width, height) is not None]
    if len(kept) != len(frame_dets):
        logger.warning(f"Frame {frame_dets.frame}: dropped {len(frame_dets) - len(kept)} detections outside the image")
    return FrameDetections(frame_dets.frame, kept)


def track_sequence(frames: Sequence[FrameDetections], images: Sequence[np.ndarray], params: EmbedderParams,
                   cfg: Optional[TrackerConfig] = None) -> List[TrackResult]:
    """Embeds every frame's detections and folds the tracker over the sequence."""
    if len(frames) != len(images):
        raise DimensionError(f"Got {len(images)} images for {len(frames)} frames")
    kept = [_inside(frame_dets, image) for frame_dets, image in zip(frames, images)]
    embeddings = (embed_frame(params, image, frame_dets) for frame_dets, image in zip(kept, images))
    return track_with_embeddings(kept, embeddings, cfg)
