"""
Temporal inception: parallel temporal convolutions of different lengths
concatenated on the channel axis.
"""
from collections import OrderedDict
from typing import List, Sequence, Tuple

import numpy as np

from models import ShapeError
from nnkernels.base_layer import BaseLayer, uniform_init
from nnkernels.conv3d import Conv3DKernel, conv3d_backward, conv3d_forward

DEFAULT_LENGTHS = (5, 9, 13)
BRANCH_RATIO = (2, 2, 1)


def inception_branch_channels(total: int, ratio: Sequence[int] = BRANCH_RATIO) -> Tuple[int, ...]:
    """Split ``total`` output channels by ``ratio``; raises ShapeError when it does not divide."""
    parts = sum(ratio)
    if total <= 0 or total % parts:
        raise ShapeError(f"inception: {total} output channels cannot be split in ratio {tuple(ratio)}")
    unit = total // parts
    return tuple(r * unit for r in ratio)


def inception_forward(x: np.ndarray, kernels: Sequence[Conv3DKernel]) -> np.ndarray:
    """
    Run every branch on ``x`` and concatenate along channels.

    Args:
        x: (C_in, T, H, W)
        kernels: one Conv3DKernel per branch, stride 1, 'same' padding

    Returns:
        (sum of branch C_out, T, H, W)
    """
    outputs = [conv3d_forward(x, k) for k in kernels]
    for k, out in zip(kernels, outputs):
        if out.shape[1:] != x.shape[1:]:
            raise ShapeError(
                f"inception: branch with extents {k.extents} changes the (T, H, W) extent "
                f"{x.shape[1:]} to {out.shape[1:]}"
            )
    return np.concatenate(outputs, axis=0)


def inception_backward(x: np.ndarray, kernels: Sequence[Conv3DKernel],
                       grad_y: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    """Returns (grad_x, [(grad_w, grad_b) per branch])."""
    sizes = [k.weights.shape[0] for k in kernels]
    if grad_y.shape[0] != sum(sizes):
        raise ShapeError(f"inception backward: grad_y has {grad_y.shape[0]} channels, expected {sum(sizes)}")
    grad_x = np.zeros(x.shape, dtype=np.result_type(x, grad_y))
    branch_grads = []
    start = 0
    for k, size in zip(kernels, sizes):
        gx, gw, gb = conv3d_backward(x, k, grad_y[start:start + size])
        grad_x += gx
        branch_grads.append((gw, gb))
        start += size
    return grad_x, branch_grads


class TemporalInceptionLayer(BaseLayer):
    """Branches with temporal lengths ``lengths`` and (L, 3, 3) kernels."""

    def __init__(self, name: str, in_channels: int, branch_channels: Sequence[int],
                 lengths: Sequence[int] = DEFAULT_LENGTHS, spatial: int = 3,
                 rng: np.random.Generator = None, dtype=np.float32):
        super().__init__(name)
        if len(branch_channels) != len(lengths):
            raise ShapeError(f"{name}: {len(branch_channels)} branch channel counts for {len(lengths)} lengths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernels: List[Conv3DKernel] = []
        for length, channels in zip(lengths, branch_channels):
            if length % 2 == 0:
                raise ShapeError(f"{name}: temporal length {length} must be odd for 'same' padding")
            extents = (length, spatial, spatial)
            fan_in = in_channels * length * spatial * spatial
            self.kernels.append(Conv3DKernel(
                weights=uniform_init(rng, (channels, in_channels) + extents, fan_in, dtype),
                bias=uniform_init(rng, (channels,), fan_in, dtype),
                stride=(1, 1, 1),
                padding=(length // 2, spatial // 2, spatial // 2),
            ))
        self.lengths = tuple(lengths)

    @property
    def out_channels(self) -> int:
        return sum(k.weights.shape[0] for k in self.kernels)

    def _branch_name(self, length: int) -> str:
        return f"{self.name}.t{length}"

    def forward(self, x):
        return inception_forward(x, self.kernels), x

    def backward(self, cache, grad_y):
        grad_x, branch_grads = inception_backward(cache, self.kernels, grad_y)
        grads = {}
        for length, (gw, gb) in zip(self.lengths, branch_grads):
            grads[f"{self._branch_name(length)}.weight"] = gw
            grads[f"{self._branch_name(length)}.bias"] = gb
        return grad_x, grads

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        params = OrderedDict()
        for length, k in zip(self.lengths, self.kernels):
            params[f"{self._branch_name(length)}.weight"] = k.weights
            params[f"{self._branch_name(length)}.bias"] = k.bias
        return params

    def astype(self, dtype) -> None:
        for k in self.kernels:
            k.weights = k.weights.astype(dtype)
            k.bias = k.bias.astype(dtype)
