"""Tracking metrics: CLEAR (MOTA, MOTP, FP, FN, IDSw, MT, ML), IDF1 and HOTA.

Inputs are per-frame ground truth and results, both as FrameDetections whose
``gt_track_id`` carries the identity (result rows can be passed directly).
Detections without an identity are ignored. Reports keep their raw counts
so several sequences can be merged by summing counts before taking ratios.
"""

import logging
from collections import defaultdict
from dataclasses import asdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from subco_tracker.core.schemas import (
    ClearReport,
    FrameDetections,
    FrameMatchLog,
    HotaReport,
    IdentityReport,
    TrackResult,
)
from subco_tracker.core.tracker import hungarian
from subco_tracker.data.mot_io import results_to_frames
from subco_tracker.utils.box_utils import iou_matrix

logger = logging.getLogger(__name__)

HOTA_ALPHAS = [round(0.05 * k, 2) for k in range(1, 20)]
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2
_EPS = 1e-10


def _as_frames(data) -> List[FrameDetections]:
    data = list(data)
    if data and isinstance(data[0], TrackResult):
        return results_to_frames(data)
    return data


def _aligned(gt, results) -> List[Tuple[int, List[int], np.ndarray, List[int], np.ndarray]]:
    """(frame, gt ids, gt boxes, hyp ids, hyp boxes) over the union of frames."""
    def by_frame(frames):
        table = {}
        for frame in _as_frames(frames):
            keep = [det for det in frame if det.gt_track_id is not None]
            ids = [det.gt_track_id for det in keep]
            boxes = np.stack([det.box.to_tlwh() for det in keep]) if keep else np.zeros((0, 4))
            table[frame.frame] = (ids, boxes)
        return table

    gt_table, hyp_table = by_frame(gt), by_frame(results)
    empty = ([], np.zeros((0, 4)))
    return [(frame, *gt_table.get(frame, empty), *hyp_table.get(frame, empty))
            for frame in sorted(set(gt_table) | set(hyp_table))]


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _clear_scores(report: ClearReport) -> ClearReport:
    report.mota = 1.0 - (report.fp + report.fn + report.idsw) / report.gt_total if report.gt_total > 0 else 0.0
    report.motp = _ratio(report.iou_sum, report.num_matches)
    return report


def evaluate_clear(gt, results, iou_thresh: float = 0.5) -> ClearReport:
    """CLEAR-MOT counts.

    Correspondences of the previous frame are kept while their IoU stays at
    or above ``iou_thresh``; the rest is matched with the Hungarian method on
    IoU. An identity switch is counted when a gt trajectory is matched to a
    different hypothesis than at its last match, gaps included.
    """
    fp = fn = idsw = num_matches = gt_total = 0
    iou_sum = 0.0
    previous: Dict[int, int] = {}
    last_hyp: Dict[int, int] = {}
    present: Dict[int, int] = defaultdict(int)
    covered: Dict[int, int] = defaultdict(int)
    frame_log: List[FrameMatchLog] = []

    for frame, gt_ids, gt_boxes, hyp_ids, hyp_boxes in _aligned(gt, results):
        ious = iou_matrix(gt_boxes, hyp_boxes)
        hyp_index = {h: j for j, h in enumerate(hyp_ids)}
        pairs: List[Tuple[int, int]] = []
        for g, gid in enumerate(gt_ids):
            j = hyp_index.get(previous.get(gid))
            if j is not None and ious[g, j] >= iou_thresh:
                pairs.append((g, j))
        used_g = {g for g, _ in pairs}
        used_h = {j for _, j in pairs}
        free_g = [g for g in range(len(gt_ids)) if g not in used_g]
        free_h = [j for j in range(len(hyp_ids)) if j not in used_h]
        if free_g and free_h:
            sub = ious[np.ix_(free_g, free_h)]
            cost = np.where(sub >= iou_thresh, -sub, np.inf)
            pairs += [(free_g[a], free_h[b]) for a, b in hungarian(cost)]

        matches, switches = [], []
        for g, j in sorted(pairs):
            gid, hid = gt_ids[g], hyp_ids[j]
            if gid in last_hyp and last_hyp[gid] != hid:
                idsw += 1
                switches.append(gid)
            last_hyp[gid] = hid
            covered[gid] += 1
            iou_sum += float(ious[g, j])
            matches.append((gid, hid, float(ious[g, j])))
        for gid in gt_ids:
            present[gid] += 1

        matched_g = {g for g, _ in pairs}
        matched_h = {j for _, j in pairs}
        misses = [gid for g, gid in enumerate(gt_ids) if g not in matched_g]
        false_pos = [hid for j, hid in enumerate(hyp_ids) if j not in matched_h]
        fn += len(misses)
        fp += len(false_pos)
        num_matches += len(pairs)
        gt_total += len(gt_ids)
        previous = {gid: hid for gid, hid, _ in matches}
        frame_log.append(FrameMatchLog(frame, tuple(matches), tuple(false_pos), tuple(misses), tuple(switches)))

    coverage = {gid: covered[gid] / present[gid] for gid in present}
    report = ClearReport(
        mota=0.0, motp=0.0, fp=fp, fn=fn, idsw=idsw,
        mt=sum(c >= MOSTLY_TRACKED for c in coverage.values()),
        ml=sum(c < MOSTLY_LOST for c in coverage.values()),
        gt_total=gt_total, num_matches=num_matches, iou_sum=iou_sum,
        num_gt_tracks=len(present), frame_log=frame_log,
    )
    return _clear_scores(report)


def _identity_scores(idtp: int, idfp: int, idfn: int) -> IdentityReport:
    return IdentityReport(
        idf1=_ratio(2 * idtp, 2 * idtp + idfp + idfn),
        idp=_ratio(idtp, idtp + idfp),
        idr=_ratio(idtp, idtp + idfn),
        idtp=idtp, idfp=idfp, idfn=idfn,
    )


def evaluate_idf1(gt, results, iou_thresh: float = 0.5) -> IdentityReport:
    """Identity scores from a global one-to-one gt/hypothesis trajectory matching.

    The matching maximizes the number of frames in which the paired
    trajectories overlap with IoU >= ``iou_thresh``.
    """
    counts: Dict[Tuple[int, int], int] = defaultdict(int)
    gt_dets = hyp_dets = 0
    gt_order: Dict[int, int] = {}
    hyp_order: Dict[int, int] = {}
    for _, gt_ids, gt_boxes, hyp_ids, hyp_boxes in _aligned(gt, results):
        gt_dets += len(gt_ids)
        hyp_dets += len(hyp_ids)
        for gid in gt_ids:
            gt_order.setdefault(gid, len(gt_order))
        for hid in hyp_ids:
            hyp_order.setdefault(hid, len(hyp_order))
        ious = iou_matrix(gt_boxes, hyp_boxes)
        for g, j in zip(*np.nonzero(ious >= iou_thresh)):
            counts[(gt_ids[g], hyp_ids[j])] += 1

    idtp = 0
    if counts:
        mat = np.zeros((len(gt_order), len(hyp_order)))
        for (gid, hid), c in counts.items():
            mat[gt_order[gid], hyp_order[hid]] = c
        idtp = int(sum(mat[g, h] for g, h in hungarian(-mat)))
    return _identity_scores(idtp, hyp_dets - idtp, gt_dets - idtp)


def _hota_scores(alphas: List[float], tp: List[int], fn: List[int], fp: List[int],
                 ass_sum: List[float], loc_sum: List[float]) -> HotaReport:
    deta = [_ratio(t, t + n + p) for t, n, p in zip(tp, fn, fp)]
    assa = [_ratio(a, t) for a, t in zip(ass_sum, tp)]
    loca = [_ratio(s, t) for s, t in zip(loc_sum, tp)]
    hota = [float(np.sqrt(d * a)) for d, a in zip(deta, assa)]
    return HotaReport(
        hota=float(np.mean(hota)), deta=float(np.mean(deta)), assa=float(np.mean(assa)),
        loca=float(np.mean(loca)), alphas=list(alphas),
        hota_curve=hota, deta_curve=deta, assa_curve=assa, loca_curve=loca,
        tp=list(tp), fn=list(fn), fp=list(fp), ass_sum=list(ass_sum), loc_sum=list(loc_sum),
    )


def evaluate_hota(gt, results, alphas: Sequence[float] = HOTA_ALPHAS) -> HotaReport:
    """HOTA with its detection, association and localization components per alpha.

    A global alignment score between every gt and hypothesis trajectory is
    computed first; at each alpha, every frame is matched on pairs with
    IoU >= alpha, maximizing the number of matches and then the summed
    alignment-weighted IoU.
    """
    frames = _aligned(gt, results)
    gt_index: Dict[int, int] = {}
    hyp_index: Dict[int, int] = {}
    for _, gt_ids, _, hyp_ids, _ in frames:
        for gid in gt_ids:
            gt_index.setdefault(gid, len(gt_index))
        for hid in hyp_ids:
            hyp_index.setdefault(hid, len(hyp_index))
    n_gt, n_hyp = len(gt_index), len(hyp_index)

    gt_count = np.zeros(n_gt)
    hyp_count = np.zeros(n_hyp)
    potential = np.zeros((n_gt, n_hyp))
    per_frame = []
    for _, gt_ids, gt_boxes, hyp_ids, hyp_boxes in frames:
        g_idx = np.array([gt_index[g] for g in gt_ids], dtype=int)
        h_idx = np.array([hyp_index[h] for h in hyp_ids], dtype=int)
        sim = iou_matrix(gt_boxes, hyp_boxes)
        gt_count[g_idx] += 1
        hyp_count[h_idx] += 1
        if sim.size:
            denom = sim.sum(axis=0)[None, :] + sim.sum(axis=1)[:, None] - sim
            potential[np.ix_(g_idx, h_idx)] += np.where(denom > _EPS, sim / np.maximum(denom, _EPS), 0.0)
        per_frame.append((g_idx, h_idx, sim))
    alignment = potential / np.maximum(gt_count[:, None] + hyp_count[None, :] - potential, _EPS)

    alphas = list(alphas)
    tp, fn, fp = [0] * len(alphas), [0] * len(alphas), [0] * len(alphas)
    ass_sum, loc_sum = [0.0] * len(alphas), [0.0] * len(alphas)
    for a, alpha in enumerate(alphas):
        matches_count = np.zeros((n_gt, n_hyp))
        for g_idx, h_idx, sim in per_frame:
            pairs = []
            if sim.size:
                bonus = min(sim.shape) + 1.0
                score = bonus + alignment[np.ix_(g_idx, h_idx)] * sim
                pairs = hungarian(np.where(sim >= alpha - _EPS, -score, np.inf))
            for g, h in pairs:
                matches_count[g_idx[g], h_idx[h]] += 1
                loc_sum[a] += float(sim[g, h])
            tp[a] += len(pairs)
            fn[a] += len(g_idx) - len(pairs)
            fp[a] += len(h_idx) - len(pairs)
        if tp[a]:
            ass = matches_count / np.maximum(gt_count[:, None] + hyp_count[None, :] - matches_count, _EPS)
            ass_sum[a] = float(np.sum(matches_count * ass))
    return _hota_scores(alphas, tp, fn, fp, ass_sum, loc_sum)


def evaluate(gt, results, iou_thresh: float = 0.5) -> Tuple[ClearReport, IdentityReport, HotaReport]:
    gt, results = _as_frames(gt), _as_frames(results)
    return evaluate_clear(gt, results, iou_thresh), evaluate_idf1(gt, results, iou_thresh), evaluate_hota(gt, results)


def merge_clear_reports(reports: Iterable[ClearReport]) -> ClearReport:
    reports = list(reports)
    merged = ClearReport(
        mota=0.0, motp=0.0,
        **{name: sum(getattr(r, name) for r in reports)
           for name in ("fp", "fn", "idsw", "mt", "ml", "gt_total", "num_matches", "iou_sum", "num_gt_tracks")},
    )
    return _clear_scores(merged)


def merge_identity_reports(reports: Iterable[IdentityReport]) -> IdentityReport:
    reports = list(reports)
    return _identity_scores(sum(r.idtp for r in reports), sum(r.idfp for r in reports), sum(r.idfn for r in reports))


def merge_hota_reports(reports: Iterable[HotaReport]) -> HotaReport:
    reports = list(reports)
    if not reports:
        raise ValueError("Nothing to merge")
    alphas = reports[0].alphas
    if any(r.alphas != alphas for r in reports):
        raise ValueError("HOTA reports computed on different alpha grids cannot be merged")

    def total(name):
        return [sum(values) for values in zip(*(getattr(r, name) for r in reports))]

    return _hota_scores(alphas, total("tp"), total("fn"), total("fp"), total("ass_sum"), total("loc_sum"))


def summary_row(clear: ClearReport, identity: IdentityReport, hota: HotaReport) -> Dict[str, float]:
    return {
        "MOTA": clear.mota, "MOTP": clear.motp, "IDF1": identity.idf1, "IDP": identity.idp, "IDR": identity.idr,
        "HOTA": hota.hota, "DetA": hota.deta, "AssA": hota.assa, "LocA": hota.loca,
        "FP": clear.fp, "FN": clear.fn, "IDSw": clear.idsw, "MT": clear.mt, "ML": clear.ml,
    }


def format_table(rows: Dict[str, Dict[str, float]]) -> str:
    """Aligned text table, one row per name."""
    frame = pd.DataFrame.from_dict(rows, orient="index")
    return frame.to_string(float_format=lambda v: f"{v:.3f}")


def format_report(clear: ClearReport, identity: IdentityReport, hota: HotaReport, name: str = "all") -> str:
    return format_table({name: summary_row(clear, identity, hota)})


def report_to_dict(clear: ClearReport, identity: IdentityReport, hota: HotaReport,
                   include_frames: bool = False) -> Dict[str, dict]:
    clear_dict = asdict(clear)
    frame_log = clear_dict.pop("frame_log")
    if include_frames:
        clear_dict["frame_log"] = frame_log
    return {"clear": clear_dict, "identity": asdict(identity), "hota": asdict(hota)}
