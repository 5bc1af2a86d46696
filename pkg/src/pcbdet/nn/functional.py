"""Differentiable primitives over :class:`~pcbdet.nn.tensor.Tensor`.

Convolution is lowered to an im2col matrix product per group; the
depthwise case uses an explicit loop over kernel taps. Both accumulate in a
fixed order, so repeated calls on identical inputs are bit-identical.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pcbdet.errors import ConfigError
from pcbdet.nn.tensor import Tensor, as_tensor, make_node


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (n, c, oh, ow, k, k) strided view, no copy
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


def _scatter_windows(gxp: np.ndarray, dwin: np.ndarray, k: int, stride: int, oh: int, ow: int, c0: int = 0) -> None:
    # inverse of _windows: dwin is (n, c, oh, ow, k, k)
    c1 = c0 + dwin.shape[1]
    for i in range(k):
        for j in range(k):
            gxp[:, c0:c1, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += dwin[..., i, j]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation of ``(n, c_in, h, w)`` with ``(c_out, c_in/groups, k, k)``."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ConfigError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, cin_g, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"conv2d supports square kernels only, got {kh}x{kw}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ConfigError(f"conv2d: invalid stride={stride} padding={padding} groups={groups}")
    if c_in % groups or c_out % groups:
        raise ConfigError(f"conv2d: channels in={c_in} out={c_out} not divisible by groups={groups}")
    if cin_g != c_in // groups:
        raise ConfigError(
            f"conv2d: weight expects {cin_g} input channels per group, input provides {c_in // groups}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ConfigError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    k = kh
    oh, ow = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if oh < 1 or ow < 1:
        raise ConfigError(f"conv2d: kernel {k} with padding {padding} does not fit input {h}x{w}")

    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cout_g = c_out // groups
    depthwise = cin_g == 1 and cout_g == 1 and groups > 1
    pointwise = k == 1 and stride == 1 and padding == 0

    if depthwise:
        win = _windows(xp, k, stride, oh, ow)
        out = np.zeros((n, c_out, oh, ow), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                out += win[..., i, j] * wd[None, :, 0, i, j, None, None]
        cols = None
    else:
        if pointwise:
            cols = [xd[:, g * cin_g : (g + 1) * cin_g].transpose(0, 2, 3, 1).reshape(n * oh * ow, cin_g) for g in range(groups)]
        else:
            win = _windows(xp, k, stride, oh, ow)
            cols = [
                win[:, g * cin_g : (g + 1) * cin_g].transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin_g * k * k)
                for g in range(groups)
            ]
        outs = []
        for g in range(groups):
            wg = wd[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
            outs.append(cols[g] @ wg.T)
        out2d = outs[0] if groups == 1 else np.concatenate(outs, axis=1)
        out = out2d.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g_out: np.ndarray):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g_out.sum(axis=(0, 2, 3))
        if depthwise:
            win_b = _windows(xp, k, stride, oh, ow)
            if weight.requires_grad:
                gw = np.zeros_like(wd)
                for i in range(k):
                    for j in range(k):
                        gw[:, 0, i, j] = (win_b[..., i, j] * g_out).sum(axis=(0, 2, 3))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                dwin = g_out[..., None, None] * wd[None, :, 0, None, None, :, :]
                _scatter_windows(gxp, dwin, k, stride, oh, ow)
                gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            return gx, gw, gb
        g2d = g_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, c_out)
        if weight.requires_grad:
            parts = []
            for g in range(groups):
                gg = g2d[:, g * cout_g : (g + 1) * cout_g]
                parts.append((gg.T @ cols[g]).reshape(cout_g, cin_g, k, k))
            gw = parts[0] if groups == 1 else np.concatenate(parts, axis=0)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for g in range(groups):
                gg = g2d[:, g * cout_g : (g + 1) * cout_g]
                wg = wd[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
                dcols = gg @ wg
                if pointwise:
                    gxp[:, g * cin_g : (g + 1) * cin_g] += dcols.reshape(n, oh, ow, cin_g).transpose(0, 3, 1, 2)
                else:
                    dwin = dcols.reshape(n, oh, ow, cin_g, k, k).transpose(0, 3, 1, 2, 4, 5)
                    _scatter_windows(gxp, dwin, k, stride, oh, ow, c0=g * cin_g)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


def pool2d(x: Tensor, kind: str, k: int, stride: int) -> Tensor:
    """Max or average pooling with a square ``k`` window."""
    if kind not in ("max", "avg"):
        raise ConfigError(f"pool2d: unknown kind {kind!r}")
    if k < 1 or stride < 1:
        raise ConfigError(f"pool2d: invalid k={k} stride={stride}")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ConfigError(f"pool2d: window {k} larger than input {h}x{w}")
    oh, ow = _out_size(h, k, stride, 0), _out_size(w, k, stride, 0)
    win = _windows(x.data, k, stride, oh, ow).reshape(n, c, oh, ow, k * k)
    if kind == "max":
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    else:
        idx = None
        out = win.mean(axis=-1)
    out = np.ascontiguousarray(out)

    def backward(g_out: np.ndarray):
        gx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                if kind == "max":
                    contrib = np.where(idx == i * k + j, g_out, 0)
                else:
                    contrib = g_out / (k * k)
                gx[:, :, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += contrib
        return (gx,)

    return make_node(out, (x,), backward, f"{kind}_pool2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ConfigError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g_out: np.ndarray):
        return (g_out.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_node(out, (x,), backward, "upsample_nearest")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # rounding would otherwise reach exactly 0 or 1 for |z| beyond ~17 (float32)
    fi = np.finfo(z.dtype)
    return np.clip(s, fi.tiny, 1.0 - fi.epsneg).astype(z.dtype, copy=False)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return make_node(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"activation: unknown kind {kind!r}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "mul")


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel ``x * scale + shift`` (the training form of normalization)."""
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ConfigError(f"channel_affine: expected ({c},) scale/shift, got {scale.shape}/{shift.shape}")
    s = scale.data[None, :, None, None]
    out = x.data * s + shift.data[None, :, None, None]

    def backward(g):
        gx = g * s if x.requires_grad else None
        gs = (g * x.data).sum(axis=(0, 2, 3)) if scale.requires_grad else None
        gt = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        return gx, gs, gt

    return make_node(out, (x, scale, shift), backward, "channel_affine")


def mean_hw(x: Tensor) -> Tensor:
    """Global average over the spatial dims, keeping them as size 1."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),), "mean_hw")


def head_flatten(x: Tensor, per_anchor: int) -> Tensor:
    """``(n, A*k, h, w)`` -> ``(n, h*w*A, k)`` in (row, col, anchor) order."""
    n, ch, h, w = x.shape
    if ch % per_anchor:
        raise ConfigError(f"head_flatten: {ch} channels not divisible by {per_anchor}")
    a = ch // per_anchor
    out = x.data.reshape(n, a, per_anchor, h, w).transpose(0, 3, 4, 1, 2).reshape(n, h * w * a, per_anchor)

    def backward(g):
        return (g.reshape(n, h, w, a, per_anchor).transpose(0, 3, 4, 1, 2).reshape(n, ch, h, w),)

    return make_node(np.ascontiguousarray(out), (x,), backward, "head_flatten")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return make_node(out, tensors, backward, "concat")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.dtype.type(factor)
    return make_node(out, (x,), lambda g: (g * factor,), "scale")
