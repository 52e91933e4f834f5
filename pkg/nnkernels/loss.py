"""
Binary cross-entropy between predicted and target ConfMaps.
"""
from typing import Tuple, Union

import numpy as np

from models import ConfMapSet, ShapeError, ValidationError

EPSILON = 1e-7
REDUCTIONS = ("sum", "mean")


def _values(maps: Union[ConfMapSet, np.ndarray]) -> np.ndarray:
    return maps.values if isinstance(maps, ConfMapSet) else np.asarray(maps)


def bce_loss(pred: Union[ConfMapSet, np.ndarray], target: Union[ConfMapSet, np.ndarray],
             reduction: str = "sum", eps: float = EPSILON) -> Tuple[float, np.ndarray]:
    """
    l = -sum [D log D^ + (1 - D) log(1 - D^)] over classes, frames and pixels.

    Predictions are clamped to [eps, 1 - eps]; the gradient is zero where the
    clamp is active.

    Args:
        pred: Predicted probabilities
        target: Target probabilities in [0, 1]
        reduction: ``sum`` (default) or ``mean`` over all elements

    Returns:
        (loss, dloss/dpred shaped like pred)
    """
    p = _values(pred)
    t = _values(target)
    if p.shape != t.shape:
        raise ShapeError(f"bce_loss: prediction shape {p.shape} differs from target shape {t.shape}")
    if reduction not in REDUCTIONS:
        raise ValidationError(f"bce_loss: reduction must be one of {REDUCTIONS}, got {reduction!r}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValidationError(f"bce_loss: targets must lie in [0, 1], got range [{t.min()}, {t.max()}]")
    clamped = np.clip(p, eps, 1.0 - eps)
    terms = t * np.log(clamped) + (1.0 - t) * np.log(1.0 - clamped)
    grad = (clamped - t) / (clamped * (1.0 - clamped))
    grad = grad * ((p > eps) & (p < 1.0 - eps))
    loss = -float(np.sum(terms, dtype=np.float64))
    if reduction == "mean" and p.size:
        loss /= p.size
        grad = grad / p.size
    return loss, grad.astype(p.dtype, copy=False)
