"""
RODNet-lite: radar object detection network over RF snippets.

Two backbones share the same front end (optional M-Net, then a two-layer
stem whose convolutions become TDC when enabled):

- hourglass: three encoder levels, each with a parallel skip branch of the
  same stride, a three-step transposed-conv decoder that adds the skip
  features back in, and a convolutional head.
- vanilla: a plain encoder followed by three transposed convolutions, the
  last producing the class maps directly.

Channel counts are the full-size ones divided by ``channel_divisor``.
Gradients are composed by hand for these two fixed graphs.
"""
import copy
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.special import expit

from models import ConfigError, ConfMapSet, ShapeError
from nnkernels.base_layer import BaseLayer, relu_backward, relu_forward
from nnkernels.conv3d import Conv3DLayer, ConvTranspose3DLayer
from nnkernels.inception import TemporalInceptionLayer, inception_branch_channels
from nnkernels.mnet import MNetLayer
from nnkernels.tdc import KINK_RULES, TDCLayer

BACKBONES = ("hourglass", "vanilla")
OUTPUT_EPS = 1e-7

# Full-size channel counts before dividing by channel_divisor.
MNET_CHANNELS = 32
HOURGLASS_STEM = (32, 64)
HOURGLASS_LEVELS = (64, 128, 256)
HOURGLASS_STRIDES = ((1, 2, 2), (2, 2, 2), (2, 2, 2))
VANILLA_STEM = (64, 64)
VANILLA_LEVELS = (128, 256)
INCEPTION_CHANNELS = 160


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; everything a checkpoint must agree on."""
    backbone: str = "hourglass"
    use_mnet: bool = True
    use_tdc: bool = True
    use_inception: bool = True
    snippet_length: int = 16
    chirps: int = 8
    in_channels: int = 2
    num_classes: int = 3
    channel_divisor: int = 4
    mnet_kernel: int = 3
    stem_kernel: Tuple[int, int, int] = (5, 3, 3)
    encoder_kernel: Tuple[int, int, int] = (9, 5, 5)
    decoder_kernel: Tuple[int, int, int] = (4, 6, 6)
    final_decoder_kernel: Tuple[int, int, int] = (3, 6, 6)
    head_kernel: Tuple[int, int, int] = (9, 5, 5)
    inception_lengths: Tuple[int, ...] = (5, 9, 13)
    inception_channels: int = INCEPTION_CHANNELS
    tdc_kink_gradient: str = "zero"
    float64: bool = False

    @property
    def input_chirps(self) -> int:
        """Chirps per frame fed to the network; a single chirp without M-Net."""
        return self.chirps if self.use_mnet else 1

    @property
    def dtype(self):
        return np.float64 if self.float64 else np.float32

    def channels(self, full_size: int) -> int:
        return max(1, full_size // self.channel_divisor)

    def flags(self) -> Tuple[int, ...]:
        """Numeric architecture fingerprint stored in checkpoints."""
        return (
            BACKBONES.index(self.backbone), int(self.use_mnet), int(self.use_tdc),
            int(self.use_inception), self.channel_divisor, self.mnet_kernel, self.inception_channels,
        ) + self.stem_kernel + self.encoder_kernel + self.decoder_kernel \
            + self.final_decoder_kernel + self.head_kernel + tuple(self.inception_lengths)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigError(f"model.backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.backbone == "vanilla" and self.use_inception:
            raise ConfigError("temporal inception is only available with the hourglass backbone")
        if self.snippet_length % 4:
            raise ConfigError(f"model.snippet_length must be divisible by 4, got {self.snippet_length}")
        if self.tdc_kink_gradient not in KINK_RULES:
            raise ConfigError(f"model.tdc_kink_gradient must be one of {KINK_RULES}")
        if self.use_inception:
            inception_branch_channels(self.channels(self.inception_channels))


class RodnetModel:
    """
    Layer container with forward, hand-composed backward and parameter access.

    Layers live in ``self.layers`` (an OrderedDict keyed by layer name) in
    construction order, which is also checkpoint order.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0):
        spec.validate()
        self.spec = spec
        self.seed = seed
        self.layers: "OrderedDict[str, BaseLayer]" = OrderedDict()
        rng = np.random.default_rng(seed)
        if spec.backbone == "hourglass":
            self._build_hourglass(rng)
        else:
            self._build_vanilla(rng)

    # construction

    def _add(self, layer: BaseLayer) -> int:
        self.layers[layer.name] = layer
        return getattr(layer, "out_channels", None) or self._out_channels(layer)

    @staticmethod
    def _out_channels(layer: BaseLayer) -> int:
        kernel = layer.kernel
        if isinstance(layer, ConvTranspose3DLayer):
            return kernel.weights.shape[1]
        return kernel.weights.shape[0]

    def _front(self, rng, stem_channels, stem_strides) -> int:
        spec = self.spec
        dtype = spec.dtype
        c = spec.in_channels
        if spec.use_mnet:
            c = self._add(MNetLayer("mnet", c, spec.channels(MNET_CHANNELS), spec.mnet_kernel, rng, dtype))
        stem_cls = TDCLayer if spec.use_tdc else Conv3DLayer
        for i, (full, stride) in enumerate(zip(stem_channels, stem_strides), start=1):
            kwargs = {"kink": spec.tdc_kink_gradient} if spec.use_tdc else {}
            c = self._add(stem_cls(f"stem{i}", c, spec.channels(full), spec.stem_kernel, stride,
                                   rng=rng, dtype=dtype, **kwargs))
        return c

    def _build_hourglass(self, rng) -> None:
        spec = self.spec
        dtype = spec.dtype
        c = self._front(rng, HOURGLASS_STEM, ((1, 1, 1), (1, 1, 1)))
        for i, (full, stride) in enumerate(zip(HOURGLASS_LEVELS, HOURGLASS_STRIDES), start=1):
            width = spec.channels(full)
            if spec.use_inception:
                branches = inception_branch_channels(spec.channels(spec.inception_channels))
                mid = self._add(TemporalInceptionLayer(f"enc{i}a", c, branches, spec.inception_lengths,
                                                       rng=rng, dtype=dtype))
            else:
                mid = self._add(Conv3DLayer(f"enc{i}a", c, width, spec.encoder_kernel, 1, rng=rng, dtype=dtype))
            self._add(Conv3DLayer(f"enc{i}b", mid, width, spec.encoder_kernel, stride, rng=rng, dtype=dtype))
            self._add(Conv3DLayer(f"skip{i}a", c, width, spec.encoder_kernel, 1, rng=rng, dtype=dtype))
            self._add(Conv3DLayer(f"skip{i}b", width, width, spec.encoder_kernel, stride, rng=rng, dtype=dtype))
            c = width
        widths = [spec.channels(full) for full in HOURGLASS_LEVELS]
        self._add(ConvTranspose3DLayer("dec1", widths[2], widths[1], spec.decoder_kernel, 2, rng=rng, dtype=dtype))
        self._add(ConvTranspose3DLayer("dec2", widths[1], widths[0], spec.decoder_kernel, 2, rng=rng, dtype=dtype))
        self._add(ConvTranspose3DLayer("dec3", widths[0], widths[0], spec.final_decoder_kernel, (1, 2, 2),
                                       rng=rng, dtype=dtype))
        self._add(Conv3DLayer("head", widths[0], spec.num_classes, spec.head_kernel, 1, rng=rng, dtype=dtype))

    def _build_vanilla(self, rng) -> None:
        spec = self.spec
        dtype = spec.dtype
        c = self._front(rng, VANILLA_STEM, ((1, 1, 1), (1, 2, 2)))
        for i, full in enumerate(VANILLA_LEVELS, start=1):
            width = spec.channels(full)
            self._add(Conv3DLayer(f"enc{i}a", c, width, spec.encoder_kernel, 1, rng=rng, dtype=dtype))
            c = self._add(Conv3DLayer(f"enc{i}b", width, width, spec.encoder_kernel, 2, rng=rng, dtype=dtype))
        mid = spec.channels(VANILLA_LEVELS[0])
        low = spec.channels(VANILLA_STEM[0])
        self._add(ConvTranspose3DLayer("dec1", c, mid, spec.decoder_kernel, 2, rng=rng, dtype=dtype))
        self._add(ConvTranspose3DLayer("dec2", mid, low, spec.decoder_kernel, 2, rng=rng, dtype=dtype))
        self._add(ConvTranspose3DLayer("dec3", low, spec.num_classes, spec.final_decoder_kernel, (1, 2, 2),
                                       rng=rng, dtype=dtype))

    # forward / backward

    def check_input(self, snippet: np.ndarray) -> None:
        spec = self.spec
        if snippet.ndim != 5:
            raise ShapeError(f"snippet must be 5-D (C_RF, T, n, H, W), got shape {snippet.shape}")
        c, t, n, h, w = snippet.shape
        if c != spec.in_channels:
            raise ShapeError(f"channel axis: snippet has {c} channels, model expects {spec.in_channels}")
        if t != spec.snippet_length:
            raise ShapeError(f"time axis: snippet length {t} differs from the model's {spec.snippet_length}")
        if not spec.use_mnet and n != 1:
            raise ShapeError(f"chirp axis: {n} chirps given but a model without M-Net takes exactly 1")
        if n < 1:
            raise ShapeError("chirp axis: no chirps")
        for axis, size in (("height", h), ("width", w)):
            if size % 8:
                raise ShapeError(f"{axis} axis: extent {size} must be divisible by 8")

    def _apply(self, name: str, x: np.ndarray, tape: Dict, relu: bool = True) -> np.ndarray:
        y, layer_cache = self.layers[name].forward(x)
        mask = None
        if relu:
            y, mask = relu_forward(y)
        tape[name] = (layer_cache, mask)
        return y

    def _back(self, name: str, grad: np.ndarray, tape: Dict, grads: Dict) -> np.ndarray:
        layer_cache, mask = tape[name]
        if mask is not None:
            grad = relu_backward(mask, grad)
        grad_x, layer_grads = self.layers[name].backward(layer_cache, grad)
        grads.update(layer_grads)
        return grad_x

    def forward(self, snippet: np.ndarray) -> Tuple[np.ndarray, Tuple]:
        """
        Args:
            snippet: (C_RF, T, n, H, W)

        Returns:
            ((C_cls, T, H, W) probabilities, cache for backward)
        """
        self.check_input(snippet)
        tape: Dict = {}
        h = snippet.astype(self.spec.dtype, copy=False)
        h = self._apply("mnet", h, tape) if self.spec.use_mnet else h[:, :, 0]
        h = self._apply("stem1", h, tape)
        h = self._apply("stem2", h, tape)
        if self.spec.backbone == "hourglass":
            skips = []
            for i in (1, 2, 3):
                s = self._apply(f"skip{i}a", h, tape)
                skips.append(self._apply(f"skip{i}b", s, tape))
                h = self._apply(f"enc{i}a", h, tape)
                h = self._apply(f"enc{i}b", h, tape)
            h = self._apply("dec1", h + skips[2], tape)
            h = self._apply("dec2", h + skips[1], tape)
            h = self._apply("dec3", h + skips[0], tape)
            logits = self._apply("head", h, tape, relu=False)
        else:
            for name in ("enc1a", "enc1b", "enc2a", "enc2b", "dec1", "dec2"):
                h = self._apply(name, h, tape)
            logits = self._apply("dec3", h, tape, relu=False)
        probs = np.clip(expit(logits), OUTPUT_EPS, 1.0 - OUTPUT_EPS)
        return probs, (tape, probs, snippet.shape)

    def backward(self, cache: Tuple, grad_probs: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """
        Backpropagate dL/dprobs through the whole network.

        Returns:
            (grad wrt the snippet, parameter gradients keyed like ``parameters()``)
        """
        tape, probs, input_shape = cache
        grads: Dict[str, np.ndarray] = {}
        g = grad_probs * probs * (1.0 - probs)
        if self.spec.backbone == "hourglass":
            g = self._back("head", g, tape, grads)
            g_skip1 = self._back("dec3", g, tape, grads)
            g_skip2 = self._back("dec2", g_skip1, tape, grads)
            g_skip3 = self._back("dec1", g_skip2, tape, grads)
            skip_grads = {1: g_skip1, 2: g_skip2, 3: g_skip3}
            g = g_skip3
            for i in (3, 2, 1):
                g_main = self._back(f"enc{i}b", g, tape, grads)
                g_main = self._back(f"enc{i}a", g_main, tape, grads)
                g_skip = self._back(f"skip{i}b", skip_grads[i], tape, grads)
                g_skip = self._back(f"skip{i}a", g_skip, tape, grads)
                g = g_main + g_skip
        else:
            g = self._back("dec3", g, tape, grads)
            for name in ("dec2", "dec1", "enc2b", "enc2a", "enc1b", "enc1a"):
                g = self._back(name, g, tape, grads)
        g = self._back("stem2", g, tape, grads)
        g = self._back("stem1", g, tape, grads)
        if self.spec.use_mnet:
            g = self._back("mnet", g, tape, grads)
        else:
            g = g.reshape(input_shape)
        return g, grads

    # parameters

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        params = OrderedDict()
        for layer in self.layers.values():
            params.update(layer.parameters())
        return params

    def load_parameters(self, params: Dict[str, np.ndarray]) -> None:
        """Copy checkpoint tensors into the model, checking names and shapes."""
        own = self.parameters()
        missing = [name for name in own if name not in params]
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {', '.join(missing[:5])}")
        for name, value in own.items():
            if params[name].shape != value.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {params[name].shape}, model shape {value.shape}"
                )
            value[...] = params[name]

    def astype(self, dtype) -> "RodnetModel":
        for layer in self.layers.values():
            layer.astype(dtype)
        return self

    def copy(self) -> "RodnetModel":
        return copy.deepcopy(self)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def rodnet_forward(snippet: np.ndarray, model: RodnetModel) -> ConfMapSet:
    """Per-class per-frame confidence maps (C_cls, T, H, W) with values in (0, 1)."""
    probs, _ = model.forward(snippet)
    return ConfMapSet(values=probs)
