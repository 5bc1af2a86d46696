"""Minimal deterministic numeric core: tensors, primitives, autodiff, Adam."""

from pcbdet.nn.functional import (
    activation,
    add,
    channel_affine,
    concat,
    conv2d,
    head_flatten,
    mean_hw,
    mul,
    pool2d,
    relu,
    sigmoid,
    sum_all,
    upsample_nearest,
)
from pcbdet.nn.gradcheck import grad_check
from pcbdet.nn.optim import AdamState, adam_step
from pcbdet.nn.params import ParamStore, count_params, mparams
from pcbdet.nn.tensor import Tensor, inference_mode, no_grad, precision

__all__ = [
    "AdamState",
    "ParamStore",
    "Tensor",
    "activation",
    "adam_step",
    "add",
    "channel_affine",
    "concat",
    "conv2d",
    "count_params",
    "grad_check",
    "head_flatten",
    "inference_mode",
    "mean_hw",
    "mparams",
    "mul",
    "no_grad",
    "pool2d",
    "precision",
    "relu",
    "sigmoid",
    "sum_all",
    "upsample_nearest",
]
