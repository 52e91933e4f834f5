"""
Dense 3D convolution and its transpose over (C, T, H, W) tensors.

Both kernels loop over kernel taps and contract channels with
``np.tensordot``; the tap order is fixed, so results are bit-deterministic.
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from models import ShapeError
from nnkernels.base_layer import BaseLayer, triple, uniform_init

AXES = ("time", "height", "width")


@dataclass
class Conv3DKernel:
    """
    Weights and geometry of a 3D convolution.

    Attributes:
        weights: (C_out, C_in, k_t, k_h, k_w) for conv, (C_in, C_out, k_t, k_h, k_w) for transpose
        bias: (C_out,)
        stride: (s_t, s_h, s_w)
        padding: (p_t, p_h, p_w)
    """
    weights: np.ndarray
    bias: np.ndarray
    stride: Tuple[int, int, int] = (1, 1, 1)
    padding: Tuple[int, int, int] = (0, 0, 0)

    @property
    def extents(self) -> Tuple[int, int, int]:
        return tuple(self.weights.shape[2:])

    @property
    def taps(self) -> int:
        k_t, k_h, k_w = self.extents
        return k_t * k_h * k_w


def _check_input(x: np.ndarray, expected_channels: int, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what}: input must be 4-D (C, T, H, W), got shape {x.shape}")
    if x.shape[0] != expected_channels:
        raise ShapeError(
            f"{what}: channel axis has {x.shape[0]} channels but the kernel expects {expected_channels}"
        )


def conv_output_shape(spatial: Sequence[int], kernel: Conv3DKernel) -> Tuple[int, int, int]:
    """Output (T', H', W') of a strided, zero-padded convolution."""
    out = []
    for axis, size, k, s, p in zip(AXES, spatial, kernel.extents, kernel.stride, kernel.padding):
        extent = (size + 2 * p - k) // s + 1
        if size + 2 * p < k or extent < 1:
            raise ShapeError(
                f"{axis} axis: input extent {size} with padding {p} is smaller than kernel extent {k}"
            )
        out.append(extent)
    return tuple(out)


def _tap_slices(a: int, b: int, c: int, out_shape, stride):
    s_t, s_h, s_w = stride
    t_o, h_o, w_o = out_shape
    return (
        slice(None),
        slice(a, a + s_t * (t_o - 1) + 1, s_t),
        slice(b, b + s_h * (h_o - 1) + 1, s_h),
        slice(c, c + s_w * (w_o - 1) + 1, s_w),
    )


def _pad(x: np.ndarray, padding) -> np.ndarray:
    p_t, p_h, p_w = padding
    return np.pad(x, ((0, 0), (p_t, p_t), (p_h, p_h), (p_w, p_w)))


def conv3d_forward(x: np.ndarray, kernel: Conv3DKernel) -> np.ndarray:
    """
    y(p0) = sum_n w(p_n) x(p0 + p_n) + b, zero padding at the borders.

    Args:
        x: (C_in, T, H, W)
        kernel: Conv3DKernel with weights (C_out, C_in, k_t, k_h, k_w)

    Returns:
        (C_out, T', H', W')
    """
    _check_input(x, kernel.weights.shape[1], "conv3d")
    out_shape = conv_output_shape(x.shape[1:], kernel)
    xp = _pad(x, kernel.padding)
    c_out = kernel.weights.shape[0]
    y = np.zeros((c_out,) + out_shape, dtype=np.result_type(x, kernel.weights))
    k_t, k_h, k_w = kernel.extents
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                patch = xp[_tap_slices(a, b, c, out_shape, kernel.stride)]
                y += np.tensordot(kernel.weights[:, :, a, b, c], patch, axes=(1, 0))
    y += kernel.bias[:, None, None, None]
    return y


def conv3d_backward(x: np.ndarray, kernel: Conv3DKernel,
                    grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Adjoint of conv3d_forward.

    Returns:
        (grad_x, grad_w, grad_b) shaped like x, kernel.weights and kernel.bias
    """
    _check_input(x, kernel.weights.shape[1], "conv3d backward")
    out_shape = conv_output_shape(x.shape[1:], kernel)
    expected = (kernel.weights.shape[0],) + out_shape
    if grad_y.shape != expected:
        raise ShapeError(f"conv3d backward: grad_y has shape {grad_y.shape}, forward output is {expected}")
    xp = _pad(x, kernel.padding)
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(kernel.weights)
    k_t, k_h, k_w = kernel.extents
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                sl = _tap_slices(a, b, c, out_shape, kernel.stride)
                grad_w[:, :, a, b, c] = np.tensordot(grad_y, xp[sl], axes=([1, 2, 3], [1, 2, 3]))
                grad_xp[sl] += np.tensordot(kernel.weights[:, :, a, b, c], grad_y, axes=(0, 0))
    p_t, p_h, p_w = kernel.padding
    _, t, h, w = x.shape
    grad_x = grad_xp[:, p_t:p_t + t, p_h:p_h + h, p_w:p_w + w]
    grad_b = grad_y.sum(axis=(1, 2, 3))
    return grad_x, grad_w, grad_b.astype(kernel.bias.dtype)


def conv_transpose_output_shape(spatial: Sequence[int], kernel: Conv3DKernel) -> Tuple[int, int, int]:
    out = []
    for axis, size, k, s, p in zip(AXES, spatial, kernel.extents, kernel.stride, kernel.padding):
        extent = (size - 1) * s - 2 * p + k
        if extent < 1:
            raise ShapeError(f"{axis} axis: transposed convolution output extent {extent} is empty")
        out.append(extent)
    return tuple(out)


def conv_transpose3d_forward(x: np.ndarray, kernel: Conv3DKernel) -> np.ndarray:
    """
    Transposed convolution, the exact adjoint of conv3d with the same stride and padding.

    Args:
        x: (C_in, T, H, W)
        kernel: Conv3DKernel with weights (C_in, C_out, k_t, k_h, k_w)

    Returns:
        (C_out, (T-1)s_t - 2p_t + k_t, ...)
    """
    _check_input(x, kernel.weights.shape[0], "conv_transpose3d")
    out_shape = conv_transpose_output_shape(x.shape[1:], kernel)
    k_t, k_h, k_w = kernel.extents
    s_t, s_h, s_w = kernel.stride
    _, t, h, w = x.shape
    full_shape = ((t - 1) * s_t + k_t, (h - 1) * s_h + k_h, (w - 1) * s_w + k_w)
    c_out = kernel.weights.shape[1]
    full = np.zeros((c_out,) + full_shape, dtype=np.result_type(x, kernel.weights))
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                sl = _tap_slices(a, b, c, (t, h, w), kernel.stride)
                full[sl] += np.tensordot(kernel.weights[:, :, a, b, c], x, axes=(0, 0))
    p_t, p_h, p_w = kernel.padding
    y = full[:, p_t:p_t + out_shape[0], p_h:p_h + out_shape[1], p_w:p_w + out_shape[2]]
    return y + kernel.bias[:, None, None, None]


def conv_transpose3d_backward(x: np.ndarray, kernel: Conv3DKernel,
                              grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_w, grad_b) for conv_transpose3d_forward."""
    _check_input(x, kernel.weights.shape[0], "conv_transpose3d backward")
    out_shape = conv_transpose_output_shape(x.shape[1:], kernel)
    expected = (kernel.weights.shape[1],) + out_shape
    if grad_y.shape != expected:
        raise ShapeError(
            f"conv_transpose3d backward: grad_y has shape {grad_y.shape}, forward output is {expected}"
        )
    k_t, k_h, k_w = kernel.extents
    s_t, s_h, s_w = kernel.stride
    _, t, h, w = x.shape
    full_shape = ((t - 1) * s_t + k_t, (h - 1) * s_h + k_h, (w - 1) * s_w + k_w)
    grad_full = np.zeros((grad_y.shape[0],) + full_shape, dtype=grad_y.dtype)
    p_t, p_h, p_w = kernel.padding
    grad_full[:, p_t:p_t + out_shape[0], p_h:p_h + out_shape[1], p_w:p_w + out_shape[2]] = grad_y
    grad_x = np.zeros(x.shape, dtype=np.result_type(x, grad_y))
    grad_w = np.zeros_like(kernel.weights)
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                window = grad_full[_tap_slices(a, b, c, (t, h, w), kernel.stride)]
                grad_x += np.tensordot(kernel.weights[:, :, a, b, c], window, axes=(1, 0))
                grad_w[:, :, a, b, c] = np.tensordot(x, window, axes=([1, 2, 3], [1, 2, 3]))
    grad_b = grad_y.sum(axis=(1, 2, 3))
    return grad_x, grad_w, grad_b.astype(kernel.bias.dtype)


def same_padding(extents: Sequence[int]) -> Tuple[int, int, int]:
    """(k - 1) // 2 per axis; 'same' output for odd kernels at stride 1."""
    return tuple((k - 1) // 2 for k in extents)


def transpose_padding(extents: Sequence[int], stride: Sequence[int]) -> Tuple[int, int, int]:
    """Padding making a transposed conv scale each extent exactly by its stride."""
    padding = []
    for axis, k, s in zip(AXES, extents, stride):
        if k < s or (k - s) % 2:
            raise ShapeError(f"{axis} axis: transposed kernel {k} cannot upsample exactly by stride {s}")
        padding.append((k - s) // 2)
    return tuple(padding)


class Conv3DLayer(BaseLayer):
    """Convolution layer with uniform +-1/sqrt(fan_in) initialisation."""

    def __init__(self, name: str, in_channels: int, out_channels: int, extents, stride=1,
                 padding=None, rng: np.random.Generator = None, dtype=np.float32):
        super().__init__(name)
        extents = triple(extents)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * int(np.prod(extents))
        self.kernel = Conv3DKernel(
            weights=uniform_init(rng, (out_channels, in_channels) + extents, fan_in, dtype),
            bias=uniform_init(rng, (out_channels,), fan_in, dtype),
            stride=triple(stride),
            padding=same_padding(extents) if padding is None else triple(padding),
        )

    def forward(self, x):
        return conv3d_forward(x, self.kernel), x

    def backward(self, cache, grad_y):
        grad_x, grad_w, grad_b = conv3d_backward(cache, self.kernel, grad_y)
        return grad_x, {f"{self.name}.weight": grad_w, f"{self.name}.bias": grad_b}

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict([(f"{self.name}.weight", self.kernel.weights),
                            (f"{self.name}.bias", self.kernel.bias)])

    def astype(self, dtype) -> None:
        self.kernel.weights = self.kernel.weights.astype(dtype)
        self.kernel.bias = self.kernel.bias.astype(dtype)


class ConvTranspose3DLayer(BaseLayer):
    """Upsampling layer; padding defaults to an exact stride-times upscale."""

    def __init__(self, name: str, in_channels: int, out_channels: int, extents, stride=2,
                 padding=None, rng: np.random.Generator = None, dtype=np.float32):
        super().__init__(name)
        extents = triple(extents)
        stride = triple(stride)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * int(np.prod(extents))
        self.kernel = Conv3DKernel(
            weights=uniform_init(rng, (in_channels, out_channels) + extents, fan_in, dtype),
            bias=uniform_init(rng, (out_channels,), fan_in, dtype),
            stride=stride,
            padding=transpose_padding(extents, stride) if padding is None else triple(padding),
        )

    def forward(self, x):
        return conv_transpose3d_forward(x, self.kernel), x

    def backward(self, cache, grad_y):
        grad_x, grad_w, grad_b = conv_transpose3d_backward(cache, self.kernel, grad_y)
        return grad_x, {f"{self.name}.weight": grad_w, f"{self.name}.bias": grad_b}

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict([(f"{self.name}.weight", self.kernel.weights),
                            (f"{self.name}.bias", self.kernel.bias)])

    def astype(self, dtype) -> None:
        self.kernel.weights = self.kernel.weights.astype(dtype)
        self.kernel.bias = self.kernel.bias.astype(dtype)
