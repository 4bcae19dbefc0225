"""
nn-core: dense NCHW tensors (numpy arrays), hand-adjointed layers and the softmax loss.
"""

from .functional import (
    ArgmaxMap,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    dropout,
    dropout_backward,
    fully_connected_backward,
    fully_connected_forward,
    lrn_backward,
    lrn_forward,
    maxpool_backward,
    maxpool_forward,
    output_extent,
    relu,
    relu_backward,
    split_channels,
)
from .layers import (
    Conv2D,
    Dropout,
    Flatten,
    FullyConnected,
    GlobalAvgPool,
    Inception,
    Layer,
    LocalResponseNorm,
    MaxPool2D,
    ReLU,
    Sequential,
)
from .loss import LossValue, one_hot, softmax, softmax_cross_entropy
from .params import LayerParams

__all__ = [
    "ArgmaxMap",
    "concat_channels",
    "conv2d_backward",
    "conv2d_forward",
    "dropout",
    "dropout_backward",
    "fully_connected_backward",
    "fully_connected_forward",
    "lrn_backward",
    "lrn_forward",
    "maxpool_backward",
    "maxpool_forward",
    "output_extent",
    "relu",
    "relu_backward",
    "split_channels",
    "Conv2D",
    "Dropout",
    "Flatten",
    "FullyConnected",
    "GlobalAvgPool",
    "Inception",
    "Layer",
    "LocalResponseNorm",
    "MaxPool2D",
    "ReLU",
    "Sequential",
    "LossValue",
    "one_hot",
    "softmax",
    "softmax_cross_entropy",
    "LayerParams",
]
