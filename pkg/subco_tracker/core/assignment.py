"""Differentiable soft assignment between two sets of embeddings.

Given a score matrix S (tracks x detections), the forward scores R are a
row-wise temperature softmax over ``[tau*S | tau*delta_match]`` and the
backward scores C a column-wise softmax over ``[tau*S ; tau*delta_match]``.
The extra slot of each row is the deletion score d, the extra slot of each
column the initiation score i, and the assignment is ``A = min(R, C)``.
"""

from typing import Optional, Tuple

import numpy as np
from scipy.special import softmax

from subco_tracker.core.config import AssignmentConfig
from subco_tracker.core.exceptions import DimensionError
from subco_tracker.core.schemas import AssignmentResult


def _rows(x) -> np.ndarray:
    rows = getattr(x, "rows", x)
    return np.asarray(rows, dtype=np.float64)


def score_matrix(Y, X) -> np.ndarray:
    """S[i][j] = <Y_i, X_j> for M x D track and K x D detection embeddings."""
    Y, X = _rows(Y), _rows(X)
    if Y.ndim != 2 or X.ndim != 2 or Y.shape[1] != X.shape[1]:
        raise DimensionError(f"Cannot score embeddings of shapes {Y.shape} and {X.shape}")
    return Y @ X.T


def score_matrix_backward(Y, X, grad_S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Y, X = _rows(Y), _rows(X)
    grad_S = np.asarray(grad_S, dtype=np.float64)
    if grad_S.shape != (Y.shape[0], X.shape[0]):
        raise DimensionError(f"Score gradient of shape {grad_S.shape} does not match {Y.shape[0]} x {X.shape[0]}")
    return grad_S @ X, grad_S.T @ Y


def _check_scores(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise DimensionError(f"Score matrix must be 2-D, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("Score matrix contains non-finite entries")
    return S


def soft_assign(S, cfg: AssignmentConfig) -> AssignmentResult:
    S = _check_scores(S)
    m, k = S.shape
    logits = cfg.tau * S
    slot = cfg.tau * cfg.delta_match
    # softmax subtracts the max internally, so |tau*S| up to 1e4 stays finite
    forward = softmax(np.hstack([logits, np.full((m, 1), slot)]), axis=1)
    backward = softmax(np.vstack([logits, np.full((1, k), slot)]), axis=0)
    R, d = forward[:, :k], forward[:, k]
    C, i = backward[:m, :], backward[m, :]
    return AssignmentResult(A=np.minimum(R, C), R=R, C=C, d=d, i=i)


def _softmax_backward(p: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    return p * (g - np.sum(g * p, axis=axis, keepdims=True))


def soft_assign_backward(S, cfg: AssignmentConfig, grad_A: np.ndarray,
                         grad_d: Optional[np.ndarray] = None, grad_i: Optional[np.ndarray] = None,
                         result: Optional[AssignmentResult] = None,
                         grad_R: Optional[np.ndarray] = None, grad_C: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient on S given upstream gradients on A (and optionally d, i, R, C).

    The gradient of the min goes to R where R <= C, to C elsewhere.
    """
    S = _check_scores(S)
    m, k = S.shape
    result = result if result is not None else soft_assign(S, cfg)
    grad_A = np.asarray(grad_A, dtype=np.float64)
    if grad_A.shape != (m, k):
        raise DimensionError(f"Assignment gradient of shape {grad_A.shape} does not match {m} x {k}")
    grad_d = np.zeros(m) if grad_d is None else np.asarray(grad_d, dtype=np.float64)
    grad_i = np.zeros(k) if grad_i is None else np.asarray(grad_i, dtype=np.float64)
    if grad_d.shape != (m,) or grad_i.shape != (k,):
        raise DimensionError(f"Deletion/initiation gradients of shapes {grad_d.shape}, {grad_i.shape} "
                             f"do not match {m} x {k}")

    to_r = result.R <= result.C
    g_r = np.where(to_r, grad_A, 0.0)
    g_c = np.where(to_r, 0.0, grad_A)
    if grad_R is not None:
        g_r = g_r + grad_R
    if grad_C is not None:
        g_c = g_c + grad_C

    forward = np.hstack([result.R, result.d[:, None]])
    backward = np.vstack([result.C, result.i[None, :]])
    d_forward = _softmax_backward(forward, np.hstack([g_r, grad_d[:, None]]), axis=1)
    d_backward = _softmax_backward(backward, np.vstack([g_c, grad_i[None, :]]), axis=0)
    return cfg.tau * (d_forward[:, :k] + d_backward[:m, :])
