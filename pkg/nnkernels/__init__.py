"""
From-scratch numpy kernels for the radar detection network.

- conv3d: dense 3D convolution and its transpose
- tdc: temporal deformable convolution with a learned offset branch
- mnet: chirp-merging module
- inception: temporal inception block
- rodnet: vanilla and hourglass RODNet-lite models
- loss / training: BCE loss and plain SGD
"""
from .base_layer import BaseLayer
from .conv3d import (
    Conv3DKernel,
    Conv3DLayer,
    ConvTranspose3DLayer,
    conv3d_backward,
    conv3d_forward,
    conv_transpose3d_backward,
    conv_transpose3d_forward,
)
from .inception import TemporalInceptionLayer, inception_backward, inception_forward
from .loss import bce_loss
from .mnet import MNetLayer, mnet_backward, mnet_forward
from .rodnet import ModelSpec, RodnetModel, rodnet_forward
from .tdc import TDCLayer, tdc_backward, tdc_forward
from .training import TrainConfig, TrainResult, sgd_train

__all__ = [
    'BaseLayer',
    'Conv3DKernel',
    'Conv3DLayer',
    'ConvTranspose3DLayer',
    'conv3d_forward',
    'conv3d_backward',
    'conv_transpose3d_forward',
    'conv_transpose3d_backward',
    'TDCLayer',
    'tdc_forward',
    'tdc_backward',
    'MNetLayer',
    'mnet_forward',
    'mnet_backward',
    'TemporalInceptionLayer',
    'inception_forward',
    'inception_backward',
    'ModelSpec',
    'RodnetModel',
    'rodnet_forward',
    'bce_loss',
    'TrainConfig',
    'TrainResult',
    'sgd_train',
]
