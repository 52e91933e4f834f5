"""
M-Net: chirp-merging module.

A temporal convolution over the chirp axis of one frame followed by a max
over chirps, turning (C_RF, n, H, W) into frame features (C1, H, W).
"""
from collections import OrderedDict
from typing import Tuple

import numpy as np

from models import ShapeError
from nnkernels.base_layer import BaseLayer, uniform_init
from nnkernels.conv3d import Conv3DKernel, conv3d_backward, conv3d_forward


def _check_frame(frame: np.ndarray, kernel: Conv3DKernel) -> None:
    if frame.ndim != 4:
        raise ShapeError(f"mnet: frame must be 4-D (C_RF, n, H, W), got shape {frame.shape}")
    if frame.shape[1] == 0:
        raise ShapeError("mnet: chirp axis is empty (n = 0)")
    if kernel.extents[1:] != (1, 1):
        raise ShapeError(f"mnet: kernel must span chirps only, got extents {kernel.extents}")


def _chirp_responses(frame: np.ndarray, kernel: Conv3DKernel) -> Tuple[np.ndarray, np.ndarray]:
    _check_frame(frame, kernel)
    responses = conv3d_forward(frame, kernel)
    return responses, np.argmax(responses, axis=1)


def mnet_forward(frame: np.ndarray, kernel: Conv3DKernel) -> np.ndarray:
    """
    Chirp convolution then max-pool over chirps.

    Args:
        frame: (C_RF, n, H, W)
        kernel: weights (C1, C_RF, k_n, 1, 1) with 'same' chirp padding

    Returns:
        (C1, H, W) frame features
    """
    responses, winner = _chirp_responses(frame, kernel)
    return np.take_along_axis(responses, winner[:, None], axis=1)[:, 0]


def mnet_backward(frame: np.ndarray, kernel: Conv3DKernel,
                  grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Routes grad_y to the winning chirp (first on ties) and back through the convolution.

    Returns:
        (grad_frame, grad_w, grad_b)
    """
    responses, winner = _chirp_responses(frame, kernel)
    if grad_y.shape != winner.shape:
        raise ShapeError(f"mnet backward: grad_y has shape {grad_y.shape}, forward output is {winner.shape}")
    grad_responses = np.zeros(responses.shape, dtype=np.result_type(responses, grad_y))
    np.put_along_axis(grad_responses, winner[:, None], grad_y[:, None], axis=1)
    return conv3d_backward(frame, kernel, grad_responses)


class MNetLayer(BaseLayer):
    """Applies M-Net to every frame of a (C_RF, T, n, H, W) snippet."""

    def __init__(self, name: str, in_channels: int, out_channels: int, chirp_kernel: int = 3,
                 rng: np.random.Generator = None, dtype=np.float32):
        super().__init__(name)
        if chirp_kernel % 2 == 0:
            raise ShapeError(f"{name}: chirp kernel length must be odd for 'same' padding, got {chirp_kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * chirp_kernel
        self.kernel = Conv3DKernel(
            weights=uniform_init(rng, (out_channels, in_channels, chirp_kernel, 1, 1), fan_in, dtype),
            bias=uniform_init(rng, (out_channels,), fan_in, dtype),
            stride=(1, 1, 1),
            padding=(chirp_kernel // 2, 0, 0),
        )

    def forward(self, x):
        if x.ndim != 5:
            raise ShapeError(f"{self.name}: snippet must be 5-D (C_RF, T, n, H, W), got shape {x.shape}")
        features = [mnet_forward(x[:, t], self.kernel) for t in range(x.shape[1])]
        return np.stack(features, axis=1), x

    def backward(self, cache, grad_y):
        x = cache
        grad_x = np.zeros(x.shape, dtype=np.result_type(x, grad_y))
        grad_w = np.zeros_like(self.kernel.weights)
        grad_b = np.zeros_like(self.kernel.bias)
        for t in range(x.shape[1]):
            gx, gw, gb = mnet_backward(x[:, t], self.kernel, grad_y[:, t])
            grad_x[:, t] = gx
            grad_w += gw
            grad_b += gb
        return grad_x, {f"{self.name}.weight": grad_w, f"{self.name}.bias": grad_b}

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict([(f"{self.name}.weight", self.kernel.weights),
                            (f"{self.name}.bias", self.kernel.bias)])

    def astype(self, dtype) -> None:
        self.kernel.weights = self.kernel.weights.astype(dtype)
        self.kernel.bias = self.kernel.bias.astype(dtype)
