"""Sub-sequence consistency loss.

For a window of T frames the embedder output of every frame is matched to the
next frame with ``soft_assign``; chaining the T-1 short-range assignments
gives a propagated assignment from frame 1 to frame T, which is compared to
the direct assignment between frame 1 and frame T (inter-frame term). The
intra-frame term pushes every frame's self-assignment towards the identity.

Tracks of frame 1 whose accumulated deletion score reaches the deletion
threshold are left out of the inter-frame term; the alive mask itself gets no
gradient. A window with no alive track is skipped: zero loss and zero
gradient.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from subco_tracker.core.assignment import score_matrix, score_matrix_backward, soft_assign, soft_assign_backward
from subco_tracker.core.config import LossConfig
from subco_tracker.core.embedder import (
    EmbedderParams,
    ParamGrads,
    crops_for_frame,
    embed,
    embed_backward,
    zero_grads,
)
from subco_tracker.core.exceptions import DimensionError
from subco_tracker.core.schemas import AssignmentResult, LossBreakdown, SequenceSample

logger = logging.getLogger(__name__)


def _rows(x) -> np.ndarray:
    return np.asarray(getattr(x, "rows", x), dtype=np.float64)


def propagate_assignments(results: Sequence[AssignmentResult]) -> Tuple[np.ndarray, np.ndarray]:
    """Chains pairwise assignments into (A_tilde, d_bar).

    ``A_tilde = A_12 A_23 ... A_(T-1)T`` and d_bar accumulates the deletion
    score of every step, weighted by the mass that reached that step.
    """
    if not results:
        raise ValueError("Propagation needs at least one pairwise assignment")
    k1 = results[0].A.shape[0]
    prefix = np.eye(k1)
    d_bar = np.zeros(k1)
    for step, res in enumerate(results):
        if res.A.shape[0] != prefix.shape[1]:
            raise DimensionError(f"Assignment {step} has {res.A.shape[0]} rows but the previous step "
                                 f"ends in {prefix.shape[1]} detections")
        d_bar = d_bar + prefix @ res.d
        prefix = prefix @ res.A
    return prefix, d_bar


def propagate_backward(results: Sequence[AssignmentResult], grad_tilde: np.ndarray,
                       grad_dbar: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per-step (grad_A, grad_d) given gradients on A_tilde and d_bar."""
    prefixes = [np.eye(results[0].A.shape[0])]
    for res in results:
        prefixes.append(prefixes[-1] @ res.A)
    if grad_tilde.shape != prefixes[-1].shape or grad_dbar.shape != (prefixes[0].shape[0],):
        raise DimensionError("Upstream gradients do not match the propagated assignment")

    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(results)
    g_prefix = grad_tilde
    for k in reversed(range(len(results))):
        prefix, res = prefixes[k], results[k]
        grads[k] = (prefix.T @ g_prefix, prefix.T @ grad_dbar)
        g_prefix = g_prefix @ res.A.T + np.outer(grad_dbar, res.d)
    return grads


def inter_frame_loss(A_tilde: np.ndarray, d_bar: np.ndarray, A_direct: np.ndarray,
                     cfg: LossConfig) -> Tuple[Optional[float], np.ndarray]:
    """Returns (loss or None when no track is alive, alive mask)."""
    if A_tilde.shape != A_direct.shape or d_bar.shape != (A_tilde.shape[0],):
        raise DimensionError(f"Propagated {A_tilde.shape} and direct {A_direct.shape} assignments "
                             f"with {d_bar.shape} deletion scores do not match")
    alive = d_bar < cfg.deletion_threshold
    if not alive.any():
        return None, alive
    overlap = np.sum(A_tilde * A_direct, axis=1)
    return float(-np.mean(np.log(cfg.epsilon_log + overlap[alive]))), alive


def inter_frame_loss_backward(A_tilde: np.ndarray, A_direct: np.ndarray, alive: np.ndarray,
                              cfg: LossConfig) -> Tuple[np.ndarray, np.ndarray]:
    n = int(alive.sum())
    overlap = np.sum(A_tilde * A_direct, axis=1)
    weight = np.where(alive, -1.0 / (n * (cfg.epsilon_log + overlap)), 0.0)[:, None]
    return weight * A_direct, weight * A_tilde


def _self_assignment(X: np.ndarray, cfg: LossConfig) -> Tuple[np.ndarray, AssignmentResult]:
    S = X @ X.T
    return S, soft_assign(S, cfg.assignment())


def intra_frame_loss(X_list, cfg: LossConfig) -> float:
    total = 0.0
    for X in X_list:
        X = _rows(X)
        k = X.shape[0]
        if k == 0:
            continue
        _, res = _self_assignment(X, cfg)
        total += float(np.abs(res.A - np.eye(k)).sum()) / k ** 2
    return total


def intra_frame_loss_backward(X_list, cfg: LossConfig) -> List[np.ndarray]:
    """Gradient of intra_frame_loss with respect to every frame's embeddings."""
    grads = []
    for X in X_list:
        X = _rows(X)
        k = X.shape[0]
        if k == 0:
            grads.append(np.zeros_like(X))
            continue
        S, res = _self_assignment(X, cfg)
        grad_S = soft_assign_backward(S, cfg.assignment(), np.sign(res.A - np.eye(k)) / k ** 2, result=res)
        grads.append((grad_S + grad_S.T) @ X)
    return grads


def sample_crops(sample: SequenceSample, patch_size) -> List[np.ndarray]:
    """Per-frame crop matrices of a sample; needs the rendered frames."""
    if sample.images is None:
        raise ValueError("The loss needs a sample with images")
    return [crops_for_frame(image, frame, patch_size) for frame, image in zip(sample.frames, sample.images)]


def loss_and_gradient_from_crops(crops: Sequence[np.ndarray], params: EmbedderParams, cfg: LossConfig,
                                 need_grad: bool = True) -> Tuple[LossBreakdown, Optional[ParamGrads]]:
    """Loss of a window given its per-frame crop matrices, plus the parameter gradient."""
    if len(crops) < 2:
        raise ValueError(f"A loss window needs at least 2 frames, got {len(crops)}")
    sizes = [c.shape[0] for c in crops]
    stacked = np.vstack([c.reshape(-1, params.input_dim) for c in crops])
    Y = embed(params, stacked).rows
    X = np.split(Y, np.cumsum(sizes)[:-1])
    grad_X = [np.zeros_like(x) for x in X]
    acfg = cfg.assignment()

    inter, alive_count = 0.0, 0
    if cfg.use_inter:
        if sizes[0] == 0:
            return LossBreakdown(0.0, 0.0, 0.0, 0, skipped=True), zero_grads(params) if need_grad else None
        scores = [score_matrix(X[t], X[t + 1]) for t in range(len(X) - 1)]
        pairs = [soft_assign(S, acfg) for S in scores]
        S_direct = score_matrix(X[0], X[-1])
        direct = soft_assign(S_direct, acfg)
        A_tilde, d_bar = propagate_assignments(pairs)
        value, alive = inter_frame_loss(A_tilde, d_bar, direct.A, cfg)
        alive_count = int(alive.sum())
        if value is None:
            return (LossBreakdown(0.0, 0.0, 0.0, 0, skipped=True),
                    zero_grads(params) if need_grad else None)
        inter = value
        if need_grad:
            g_tilde, g_direct = inter_frame_loss_backward(A_tilde, direct.A, alive, cfg)
            step_grads = propagate_backward(pairs, g_tilde, np.zeros_like(d_bar))
            for t, (S, res, (g_a, g_d)) in enumerate(zip(scores, pairs, step_grads)):
                g_s = soft_assign_backward(S, acfg, g_a, grad_d=g_d, result=res)
                g_y, g_x = score_matrix_backward(X[t], X[t + 1], g_s)
                grad_X[t] += g_y
                grad_X[t + 1] += g_x
            g_s = soft_assign_backward(S_direct, acfg, g_direct, result=direct)
            g_y, g_x = score_matrix_backward(X[0], X[-1], g_s)
            grad_X[0] += g_y
            grad_X[-1] += g_x

    intra = intra_frame_loss(X, cfg)
    total = inter + cfg.intra_weight * intra
    breakdown = LossBreakdown(inter=inter, intra=intra, total=total, alive_count=alive_count)
    if not need_grad:
        return breakdown, None
    if cfg.intra_weight > 0:
        for t, g in enumerate(intra_frame_loss_backward(X, cfg)):
            grad_X[t] += cfg.intra_weight * g
    return breakdown, embed_backward(params, stacked, np.vstack(grad_X))


def subco_loss(sample: SequenceSample, params: EmbedderParams, cfg: LossConfig) -> LossBreakdown:
    breakdown, _ = loss_and_gradient_from_crops(sample_crops(sample, params.patch_size), params, cfg,
                                                need_grad=False)
    return breakdown


def subco_loss_gradient(sample: SequenceSample, params: EmbedderParams, cfg: LossConfig) -> ParamGrads:
    _, grads = loss_and_gradient_from_crops(sample_crops(sample, params.patch_size), params, cfg)
    return grads
