"""
Base layer class with shared initialisation and activation helpers.
"""
import math
from collections import OrderedDict
from typing import Any, Dict, Sequence, Tuple

import numpy as np

Cache = Any


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int,
                 dtype=np.float32) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in)."""
    limit = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return grad_y * mask


def triple(value) -> Tuple[int, int, int]:
    """Expand an int or 3-sequence into a (t, h, w) tuple."""
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    values = tuple(int(v) for v in value)
    if len(values) != 3:
        raise ValueError(f"expected 3 values (t, h, w), got {values}")
    return values


class BaseLayer:
    """
    Base class for all layers.

    A layer owns named parameter arrays. ``forward`` returns the output and an
    opaque cache; ``backward`` consumes that cache and returns the input
    gradient plus a dict of parameter gradients keyed like ``parameters()``.
    """

    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        raise NotImplementedError

    def backward(self, cache: Cache, grad_y: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        """Parameter arrays by qualified name; arrays are live views."""
        raise NotImplementedError

    def astype(self, dtype) -> None:
        """Cast every parameter in place of the attribute that holds it."""
        raise NotImplementedError
