"""
Central finite-difference gradient checking.
"""
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

DEFAULT_STEP = 1e-4


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = DEFAULT_STEP,
                       indices: Optional[Iterable[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    Central differences of a scalar function w.r.t. entries of ``x``.

    ``x`` is perturbed in place and restored after each entry, so ``f`` must
    read it by reference. Entries not listed in ``indices`` are left at zero.

    Args:
        f: Zero-argument function returning the scalar objective
        x: Array to differentiate against (float64 for meaningful results)
        step: Perturbation size
        indices: Subset of multi-indices to evaluate (default: every entry)

    Returns:
        Array shaped like ``x`` with the numerical partial derivatives
    """
    grad = np.zeros_like(x, dtype=np.float64)
    if indices is None:
        indices = np.ndindex(*x.shape)
    for idx in indices:
        original = x[idx]
        x[idx] = original + step
        f_plus = f()
        x[idx] = original - step
        f_minus = f()
        x[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a| + |n|, floor) over all entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def sample_indices(shape: Tuple[int, ...], count: int, rng: np.random.Generator):
    """Up to ``count`` distinct multi-indices of an array, in a fixed order."""
    total = int(np.prod(shape))
    picks = rng.choice(total, size=min(count, total), replace=False)
    return [np.unravel_index(int(p), shape) for p in np.sort(picks)]
