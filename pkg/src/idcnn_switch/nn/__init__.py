"""Minimal dense-tensor neural network engine (numpy)."""

from .checkpoint import Record, read_records, write_records
from .gradcheck import grad_check
from .layers import (
    BatchNorm2d,
    BatchNormParams,
    Conv2d,
    ConvParams,
    Layer,
    ReLU,
    Sequential,
    Sigmoid,
    batchnorm,
    batchnorm_backward,
    conv2d,
    conv2d_backward,
    mse_loss,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from .optim import AdamState, adam_step, glorot_uniform

__all__ = [
    "AdamState", "BatchNorm2d", "BatchNormParams", "Conv2d", "ConvParams", "Layer",
    "Record", "ReLU", "Sequential", "Sigmoid", "adam_step", "batchnorm",
    "batchnorm_backward", "conv2d", "conv2d_backward", "glorot_uniform", "grad_check",
    "mse_loss", "read_records", "relu", "relu_backward", "sigmoid", "sigmoid_backward",
    "write_records",
]
