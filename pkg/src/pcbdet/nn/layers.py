"""Composite layers built from the primitives, addressed by parameter prefix."""

from __future__ import annotations

from pcbdet.nn import functional as F
from pcbdet.nn.params import ParamStore
from pcbdet.nn.tensor import Tensor, is_inference


def conv(x: Tensor, params: ParamStore, prefix: str, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    return F.conv2d(x, params[f"{prefix}.weight"], params.get(f"{prefix}.bias"), stride, padding, groups)


def conv_affine(
    x: Tensor,
    params: ParamStore,
    prefix: str,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    act: str | None = "relu",
) -> Tensor:
    """Bias-free conv followed by per-channel scale/shift and an optional activation.

    In inference mode the scale/shift is folded into the conv weight and bias.
    """
    w = params[f"{prefix}.weight"]
    scale, shift = params[f"{prefix}.scale"], params[f"{prefix}.shift"]
    if is_inference():
        folded = Tensor(w.data * scale.data[:, None, None, None])
        y = F.conv2d(x, folded, shift, stride, padding, groups)
    else:
        y = F.channel_affine(F.conv2d(x, w, None, stride, padding, groups), scale, shift)
    return F.activation(y, act) if act else y
