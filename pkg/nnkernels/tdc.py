"""
Temporal deformable convolution (TDC).

Each receptive-field point is shifted by a learned (range, azimuth) offset
per output cell. Sampling is bilinear in (H, W) only; the temporal
coordinate of a tap is never deformed. Offset channel ``2n`` moves tap ``n``
along the range (H) axis and channel ``2n + 1`` along azimuth (W).
"""
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from models import ShapeError
from nnkernels.base_layer import BaseLayer, triple, uniform_init
from nnkernels.conv3d import (
    Conv3DKernel,
    conv3d_backward,
    conv3d_forward,
    conv_output_shape,
    same_padding,
)

KINK_RULES = ("zero", "one_sided")


def _check_tdc(x: np.ndarray, kernel: Conv3DKernel, offsets: np.ndarray) -> Tuple[int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"tdc: input must be 4-D (C, T, H, W), got shape {x.shape}")
    if x.shape[0] != kernel.weights.shape[1]:
        raise ShapeError(
            f"tdc: channel axis has {x.shape[0]} channels but the kernel expects {kernel.weights.shape[1]}"
        )
    if any(k % 2 == 0 for k in kernel.extents):
        raise ShapeError(f"tdc: kernel extents must be odd, got {kernel.extents}")
    out_shape = conv_output_shape(x.shape[1:], kernel)
    expected = (2 * kernel.taps,) + out_shape
    if offsets.shape != expected:
        raise ShapeError(f"tdc: offset field has shape {offsets.shape}, expected {expected} (2N, T', H', W')")
    return out_shape


def _tap_geometry(x_shape, kernel: Conv3DKernel, out_shape, tap: Tuple[int, int, int], offsets: np.ndarray):
    """
    Bilinear corner indices, weights and validity for one kernel tap.

    Returns:
        (t_idx, t_valid, h_lo, w_lo, frac_h, frac_w) broadcastable to (T', H', W')
    """
    a, b, c = tap
    _, t_in, _, _ = x_shape
    s_t, s_h, s_w = kernel.stride
    p_t, p_h, p_w = kernel.padding
    k_t, k_h, k_w = kernel.extents
    n = (a * k_h + b) * k_w + c
    t_o, h_o, w_o = out_shape

    t_idx = np.arange(t_o) * s_t - p_t + a
    t_valid = (t_idx >= 0) & (t_idx < t_in)
    base_h = (np.arange(h_o) * s_h - p_h + b)[None, :, None]
    base_w = (np.arange(w_o) * s_w - p_w + c)[None, None, :]
    pos_h = base_h + offsets[2 * n]
    pos_w = base_w + offsets[2 * n + 1]
    h_lo = np.floor(pos_h)
    w_lo = np.floor(pos_w)
    return (t_idx[:, None, None], t_valid[:, None, None],
            h_lo.astype(np.int64), w_lo.astype(np.int64), pos_h - h_lo, pos_w - w_lo)


def _corners(h_lo, w_lo, frac_h, frac_w):
    """(dh, dw, weight, d weight/d pos_h, d weight/d pos_w) per bilinear corner."""
    one = np.ones_like(frac_h)
    return (
        (0, 0, (1 - frac_h) * (1 - frac_w), -(1 - frac_w), -(1 - frac_h)),
        (0, 1, (1 - frac_h) * frac_w, -frac_w, (1 - frac_h) * one),
        (1, 0, frac_h * (1 - frac_w), (1 - frac_w) * one, -frac_h),
        (1, 1, frac_h * frac_w, frac_w * one, frac_h * one),
    )


def _gather(x, t_idx, t_valid, h, w):
    """x[:, t, h, w] with zeros outside the spatial and temporal bounds."""
    _, t_in, h_in, w_in = x.shape
    valid = t_valid & (h >= 0) & (h < h_in) & (w >= 0) & (w < w_in)
    values = x[:, np.clip(t_idx, 0, t_in - 1), np.clip(h, 0, h_in - 1), np.clip(w, 0, w_in - 1)]
    return values * valid, valid


def _sample_tap(x, t_idx, t_valid, h_lo, w_lo, frac_h, frac_w):
    sampled = None
    for dh, dw, weight, _, _ in _corners(h_lo, w_lo, frac_h, frac_w):
        values, _ = _gather(x, t_idx, t_valid, h_lo + dh, w_lo + dw)
        term = values * weight
        sampled = term if sampled is None else sampled + term
    return sampled


def tdc_forward(x: np.ndarray, kernel: Conv3DKernel, offsets: np.ndarray) -> np.ndarray:
    """
    y(p0) = sum_n w(p_n) x(p0 + p_n + dp_n) + b.

    Args:
        x: (C_in, T, H, W)
        kernel: Conv3DKernel with odd extents
        offsets: (2N, T', H', W') offset field, N = k_t * k_h * k_w

    Returns:
        (C_out, T', H', W')
    """
    out_shape = _check_tdc(x, kernel, offsets)
    c_out = kernel.weights.shape[0]
    y = np.zeros((c_out,) + out_shape, dtype=np.result_type(x, kernel.weights, offsets))
    k_t, k_h, k_w = kernel.extents
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                geom = _tap_geometry(x.shape, kernel, out_shape, (a, b, c), offsets)
                sampled = _sample_tap(x, *geom)
                y += np.tensordot(kernel.weights[:, :, a, b, c], sampled, axes=(1, 0))
    y += kernel.bias[:, None, None, None]
    return y


def tdc_backward(x: np.ndarray, kernel: Conv3DKernel, offsets: np.ndarray, grad_y: np.ndarray,
                 kink: str = "zero") -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of tdc_forward.

    ``kink`` selects the offset derivative where a sampling coordinate lies
    exactly on an integer grid line: ``zero`` takes the zero subgradient of
    the bilinear kernel, ``one_sided`` keeps the derivative of the cell the
    floor selects.

    Returns:
        (grad_x, grad_w, grad_b, grad_off)
    """
    if kink not in KINK_RULES:
        raise ValueError(f"kink must be one of {KINK_RULES}, got {kink!r}")
    out_shape = _check_tdc(x, kernel, offsets)
    expected = (kernel.weights.shape[0],) + out_shape
    if grad_y.shape != expected:
        raise ShapeError(f"tdc backward: grad_y has shape {grad_y.shape}, forward output is {expected}")
    c_in, t_in, h_in, w_in = x.shape
    dtype = np.result_type(x, grad_y, offsets)
    grad_x_flat = np.zeros(x.size, dtype=np.float64)
    grad_w = np.zeros_like(kernel.weights)
    grad_off = np.zeros(offsets.shape, dtype=dtype)
    channel_base = (np.arange(c_in) * (t_in * h_in * w_in))[:, None, None, None]
    k_t, k_h, k_w = kernel.extents
    for a in range(k_t):
        for b in range(k_h):
            for c in range(k_w):
                n = (a * k_h + b) * k_w + c
                t_idx, t_valid, h_lo, w_lo, frac_h, frac_w = _tap_geometry(
                    x.shape, kernel, out_shape, (a, b, c), offsets)
                sampled = np.zeros((c_in,) + out_shape, dtype=dtype)
                d_pos_h = np.zeros_like(sampled)
                d_pos_w = np.zeros_like(sampled)
                # dL/d sampled
                grad_s = np.tensordot(kernel.weights[:, :, a, b, c], grad_y, axes=(0, 0))
                for dh, dw, weight, dweight_h, dweight_w in _corners(h_lo, w_lo, frac_h, frac_w):
                    h = h_lo + dh
                    w = w_lo + dw
                    values, valid = _gather(x, t_idx, t_valid, h, w)
                    sampled += values * weight
                    d_pos_h += values * dweight_h
                    d_pos_w += values * dweight_w
                    flat = (channel_base
                            + (np.clip(t_idx, 0, t_in - 1) * (h_in * w_in)
                               + np.clip(h, 0, h_in - 1) * w_in + np.clip(w, 0, w_in - 1))[None])
                    contrib = grad_s * (weight * valid)
                    grad_x_flat += np.bincount(
                        np.broadcast_to(flat, contrib.shape).ravel(),
                        weights=contrib.ravel().astype(np.float64),
                        minlength=x.size,
                    )
                if kink == "zero":
                    d_pos_h = d_pos_h * (frac_h != 0)
                    d_pos_w = d_pos_w * (frac_w != 0)
                grad_w[:, :, a, b, c] = np.tensordot(grad_y, sampled, axes=([1, 2, 3], [1, 2, 3]))
                grad_off[2 * n] = np.sum(grad_s * d_pos_h, axis=0)
                grad_off[2 * n + 1] = np.sum(grad_s * d_pos_w, axis=0)
    grad_b = grad_y.sum(axis=(1, 2, 3)).astype(kernel.bias.dtype)
    grad_x = grad_x_flat.reshape(x.shape).astype(np.result_type(x, grad_y))
    return grad_x, grad_w, grad_b, grad_off


class TDCLayer(BaseLayer):
    """
    TDC layer whose offset field comes from a zero-initialised convolution branch.

    The branch has the same extents, stride and padding as the main kernel and
    ``2N`` output channels, so a fresh layer computes a classical convolution.
    """

    def __init__(self, name: str, in_channels: int, out_channels: int, extents, stride=1,
                 padding=None, rng: np.random.Generator = None, dtype=np.float32,
                 kink: str = "zero"):
        super().__init__(name)
        extents = triple(extents)
        if any(k % 2 == 0 for k in extents):
            raise ShapeError(f"{name}: TDC kernel extents must be odd, got {extents}")
        if kink not in KINK_RULES:
            raise ValueError(f"kink must be one of {KINK_RULES}, got {kink!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * int(np.prod(extents))
        stride = triple(stride)
        padding = same_padding(extents) if padding is None else triple(padding)
        self.kink = kink
        self.kernel = Conv3DKernel(
            weights=uniform_init(rng, (out_channels, in_channels) + extents, fan_in, dtype),
            bias=uniform_init(rng, (out_channels,), fan_in, dtype),
            stride=stride,
            padding=padding,
        )
        taps = int(np.prod(extents))
        self.offset_kernel = Conv3DKernel(
            weights=np.zeros((2 * taps, in_channels) + extents, dtype=dtype),
            bias=np.zeros((2 * taps,), dtype=dtype),
            stride=stride,
            padding=padding,
        )

    def forward(self, x):
        offsets = conv3d_forward(x, self.offset_kernel)
        return tdc_forward(x, self.kernel, offsets), (x, offsets)

    def backward(self, cache, grad_y):
        x, offsets = cache
        grad_x, grad_w, grad_b, grad_off = tdc_backward(x, self.kernel, offsets, grad_y, kink=self.kink)
        grad_x_off, grad_ow, grad_ob = conv3d_backward(x, self.offset_kernel, grad_off)
        grads: Dict[str, np.ndarray] = {
            f"{self.name}.weight": grad_w,
            f"{self.name}.bias": grad_b,
            f"{self.name}.offset.weight": grad_ow,
            f"{self.name}.offset.bias": grad_ob,
        }
        return grad_x + grad_x_off, grads

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict([
            (f"{self.name}.weight", self.kernel.weights),
            (f"{self.name}.bias", self.kernel.bias),
            (f"{self.name}.offset.weight", self.offset_kernel.weights),
            (f"{self.name}.offset.bias", self.offset_kernel.bias),
        ])

    def astype(self, dtype) -> None:
        for kern in (self.kernel, self.offset_kernel):
            kern.weights = kern.weights.astype(dtype)
            kern.bias = kern.bias.astype(dtype)
