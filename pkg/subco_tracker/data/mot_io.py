"""MOTChallenge text format read/write helpers.

Each line is ``frame,id,bb_left,bb_top,bb_width,bb_height,conf[,x,y,z]`` with
1-based frames and ids; an id of -1 means the row carries no identity.
Result rows are written with 2 decimals for coordinates and 4 for confidence.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from subco_tracker.core.exceptions import MotFormatError
from subco_tracker.core.schemas import BBox, Detection, FrameDetections, TrackResult

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
NO_ID = -1


def _parse_int(value: str, name: str, line_no: int) -> int:
    try:
        number = float(value)
    except ValueError:
        raise MotFormatError(f"{name} is not a number: {value!r}", line_no) from None
    if not number.is_integer():
        raise MotFormatError(f"{name} must be an integer, got {value!r}", line_no)
    return int(number)


def _parse_float(value: str, name: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise MotFormatError(f"{name} is not a number: {value!r}", line_no) from None


def parse_line(line: str, line_no: int) -> Detection:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 7:
        raise MotFormatError(f"expected at least 7 comma-separated fields, got {len(parts)}", line_no)
    frame = _parse_int(parts[0], "frame", line_no)
    track_id = _parse_int(parts[1], "id", line_no)
    left, top, width, height = (_parse_float(v, name, line_no)
                                for v, name in zip(parts[2:6], ("bb_left", "bb_top", "bb_width", "bb_height")))
    conf = _parse_float(parts[6], "conf", line_no)
    if width <= 0 or height <= 0:
        raise MotFormatError(f"box width and height must be positive, got {width}x{height}", line_no)
    class_id = 1
    if len(parts) > 7 and parts[7]:
        value = _parse_float(parts[7], "class", line_no)
        if value >= 1 and value.is_integer():
            class_id = int(value)
    try:
        return Detection(
            frame=frame,
            box=BBox(left, top, width, height),
            confidence=conf,
            class_id=class_id,
            gt_track_id=None if track_id == NO_ID else track_id,
        )
    except ValueError as e:
        raise MotFormatError(str(e), line_no) from e


def parse_mot_file(path: PathLike) -> List[FrameDetections]:
    """Reads a det/gt/result file into per-frame detections sorted by frame.

    Within a frame the file order is kept.
    """
    path = Path(path)
    grouped: Dict[int, List[Detection]] = OrderedDict()
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            det = parse_line(line, line_no)
            grouped.setdefault(det.frame, []).append(det)
    logger.debug(f"Parsed {sum(len(v) for v in grouped.values())} rows over {len(grouped)} frames from {path}")
    return [FrameDetections(frame, dets) for frame, dets in sorted(grouped.items())]


def format_row(frame: int, track_id: int, box: BBox, confidence: float) -> str:
    return (
        f"{frame},{track_id},"
        f"{box.x_left:.2f},{box.y_top:.2f},{box.width:.2f},{box.height:.2f},"
        f"{confidence:.4f},-1,-1,-1"
    )


def _write_lines(lines: Sequence[str], path: PathLike) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_mot_file(results: Iterable[Union[TrackResult, Tuple[int, int, BBox, float]]], path: PathLike) -> None:
    """Writes tracking results; ids and frames must be >= 1."""
    lines = []
    for frame, track_id, box, confidence in results:
        if frame < 1 or track_id < 1:
            raise ValueError(f"Result rows need frame >= 1 and track_id >= 1, got frame={frame}, id={track_id}")
        lines.append(format_row(frame, track_id, box, confidence))
    _write_lines(lines, path)


def write_detections_file(frames: Iterable[FrameDetections], path: PathLike) -> None:
    """Writes det/gt rows; detections without an identity get id -1."""
    lines = []
    for frame in frames:
        for det in frame:
            track_id = NO_ID if det.gt_track_id is None else det.gt_track_id
            lines.append(format_row(det.frame, track_id, det.box, det.confidence))
    _write_lines(lines, path)


def filter_by_confidence(frames: Iterable[FrameDetections], threshold: float) -> List[FrameDetections]:
    """Keeps detections with confidence >= threshold, preserving order and empty frames."""
    return [FrameDetections(frame.frame, [det for det in frame if det.confidence >= threshold])
            for frame in frames]


def results_to_frames(results: Iterable[TrackResult]) -> List[FrameDetections]:
    """Groups result rows per frame; the track id lands in the identity field."""
    grouped: Dict[int, List[Detection]] = {}
    for frame, track_id, box, confidence in results:
        grouped.setdefault(frame, []).append(
            Detection(frame=frame, box=box, confidence=confidence, gt_track_id=track_id))
    return [FrameDetections(frame, dets) for frame, dets in sorted(grouped.items())]
