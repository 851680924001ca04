"""Relative L2 loss shared by every training objective."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateTargetError, InvalidArgumentError

__all__ = ["relative_l2", "relative_l2_grad"]


def _check_pair(predicted, target):
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape or predicted.ndim != 2:
        raise InvalidArgumentError(
            f"expected matching (batch, features) arrays, got {predicted.shape} and {target.shape}"
        )
    return predicted, target


def relative_l2(predicted, target):
    """Per-sample relative L2 error, summed over the batch.

    For each row ``i`` the error is ``||p_i - t_i|| / ||t_i||``.  Returns
    ``(total, per_sample)``.  A zero-norm target row makes the ratio
    undefined and raises :class:`DegenerateTargetError`.
    """
    predicted, target = _check_pair(predicted, target)
    target_norm = np.linalg.norm(target, axis=1)
    if np.any(target_norm == 0.0):
        bad = int(np.flatnonzero(target_norm == 0.0)[0])
        raise DegenerateTargetError(f"target row {bad} has zero norm")
    per_sample = np.linalg.norm(predicted - target, axis=1) / target_norm
    return float(per_sample.sum()), per_sample


def relative_l2_grad(predicted, target):
    """Gradient of :func:`relative_l2`'s total w.r.t. the predictions.

    Row ``i`` gets ``(p_i - t_i) / (||p_i - t_i|| * ||t_i||)``; an exactly
    reconstructed row has zero gradient (subgradient at the kink).
    """
    predicted, target = _check_pair(predicted, target)
    target_norm = np.linalg.norm(target, axis=1)
    if np.any(target_norm == 0.0):
        bad = int(np.flatnonzero(target_norm == 0.0)[0])
        raise DegenerateTargetError(f"target row {bad} has zero norm")
    diff = predicted - target
    diff_norm = np.linalg.norm(diff, axis=1)
    scale = np.zeros_like(diff_norm)
    hit = diff_norm > 0.0
    scale[hit] = 1.0 / (diff_norm[hit] * target_norm[hit])
    return diff * scale[:, None]
