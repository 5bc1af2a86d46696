"""Feature encoders: the double-condensing attention-condenser (DC-AC) backbone
and a seven-block MBConv baseline, both exposing per-stage outputs.

Parameter names carry the stage (``backbone.stage{i}.``) or block
(``backbone.block{i}.``) index, 1-based; stems belong to the first unit so
that freezing unit 1 freezes the stem too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from pcbdet.errors import ConfigError
from pcbdet.nn import functional as F
from pcbdet.nn.layers import conv, conv_affine
from pcbdet.nn.params import ParamStore, add_affine, add_conv
from pcbdet.nn.tensor import Tensor


@dataclass(frozen=True)
class DcacConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    condense_factor: int = 2
    embed_ratio: float = 0.25
    embed_groups: int = 2
    condense_pool: str = "max"

    kind = "dcac"
    strides = (4, 8, 16, 32)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if len(self.channels) != 4 or len(self.blocks) != 4:
            raise ConfigError("DcacConfig needs exactly 4 stages (channels and blocks)")
        if min(self.channels) < 1 or min(self.blocks) < 0:
            raise ConfigError(f"DcacConfig: channels must be positive, got {self.channels}")
        if self.condense_factor < 2:
            raise ConfigError(f"DcacConfig: condense_factor must be >= 2, got {self.condense_factor}")
        if not 0 < self.embed_ratio <= 1:
            raise ConfigError(f"DcacConfig: embed_ratio must be in (0, 1], got {self.embed_ratio}")
        if self.embed_groups < 1:
            raise ConfigError("DcacConfig: embed_groups must be >= 1")
        if self.condense_pool not in ("max", "avg"):
            raise ConfigError(f"DcacConfig: condense_pool must be max or avg, got {self.condense_pool!r}")

    @property
    def n_units(self) -> int:
        return 4


@dataclass(frozen=True)
class BaselineConfig:
    channels: tuple[int, ...] = (16, 24, 40, 80, 112, 160, 224)
    expansion: float = 6.0
    blocks: tuple[int, ...] = (1, 2, 2, 2, 2, 3, 1)
    stem_channels: int = 16

    kind = "baseline"
    # first-layer stride of each block; with the stride-2 stem this gives
    # overall strides (2, 4, 4, 4, 8, 16, 32)
    block_strides = (1, 2, 1, 1, 2, 2, 2)
    strides = (2, 4, 4, 4, 8, 16, 32)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if len(self.channels) != 7 or len(self.blocks) != 7:
            raise ConfigError("BaselineConfig needs exactly 7 blocks (channels and repeats)")
        if min(self.channels) < 1 or min(self.blocks) < 1:
            raise ConfigError("BaselineConfig: channels and repeats must be positive")
        if self.expansion < 1:
            raise ConfigError(f"BaselineConfig: expansion must be >= 1, got {self.expansion}")

    @property
    def n_units(self) -> int:
        return 7


BackboneConfig = Union[DcacConfig, BaselineConfig]


@dataclass
class StageOutputs:
    """Ordered ``(stage_index, tensor, stride)`` triples; indices are 1-based."""

    entries: list[tuple[int, Tensor, int]]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def indices(self) -> list[int]:
        return [e[0] for e in self.entries]

    @property
    def strides(self) -> list[int]:
        return [e[2] for e in self.entries]

    def get(self, index: int) -> tuple[Tensor, int]:
        for i, t, s in self.entries:
            if i == index:
                return t, s
        raise ConfigError(f"stage {index} not present (have {self.indices})")


def unit_prefix(kind: str, index: int) -> str:
    if kind == "dcac":
        return f"backbone.stage{index}."
    if kind == "baseline":
        return f"backbone.block{index}."
    raise ConfigError(f"unknown backbone kind {kind!r}")


# --- DC-AC --------------------------------------------------------------------------


def _embed_dims(channels: int, cfg: DcacConfig) -> tuple[int, int]:
    mid = max(1, int(round(channels * cfg.embed_ratio)))
    groups = math.gcd(cfg.embed_groups, math.gcd(channels, mid))
    return mid, groups


def init_dcac(params: ParamStore, rng: np.random.Generator, prefix: str, channels: int, cfg: DcacConfig) -> None:
    mid, groups = _embed_dims(channels, cfg)
    add_conv(params, rng, f"{prefix}.embed", channels, mid, 1, groups=groups)
    add_conv(params, rng, f"{prefix}.expand", mid, channels, 1, groups=groups)


def dcac_forward(
    x: Tensor,
    params: ParamStore,
    cfg: DcacConfig,
    prefix: str = "dcac",
    factor: int | None = None,
    probe: dict | None = None,
) -> Tensor:
    """Double-condensing attention condenser; output has the input's shape.

    Condense twice by ``factor`` (pooling), embed with a grouped pointwise
    bottleneck, expand back to full resolution, gate with a sigmoid and add
    the residual: ``out = x * gate + x``. ``probe`` receives the gate tensor.
    """
    f = cfg.condense_factor if factor is None else factor
    _, c, h, w = x.shape
    if f < 1 or h % (f * f) or w % (f * f):
        raise ConfigError(f"dcac_forward: spatial dims {h}x{w} must be divisible by condense_factor^2 = {f * f}")
    _, groups = _embed_dims(c, cfg)
    y = x
    if f > 1:
        y = F.pool2d(y, cfg.condense_pool, f, f)
        y = F.pool2d(y, cfg.condense_pool, f, f)
    y = F.relu(conv(y, params, f"{prefix}.embed", groups=groups))
    y = conv(y, params, f"{prefix}.expand", groups=groups)
    gate = F.sigmoid(F.upsample_nearest(y, f * f))
    if probe is not None:
        probe["gate"] = gate
    return F.add(F.mul(x, gate), x)


def _fit_factor(h: int, w: int, f: int) -> int:
    # coarse stages may be too small to condense twice by f; shrink f until it fits
    while f > 1 and (h % (f * f) or w % (f * f)):
        f -= 1
    return f


def _init_dcac_backbone(params: ParamStore, rng: np.random.Generator, cfg: DcacConfig) -> None:
    c0 = cfg.channels[0]
    stem_mid = max(1, c0 // 2)
    add_conv(params, rng, "backbone.stage1.stem.conv1", 3, stem_mid, 3, bias=False)
    add_affine(params, "backbone.stage1.stem.conv1", stem_mid)
    add_conv(params, rng, "backbone.stage1.stem.conv2", stem_mid, c0, 3, bias=False)
    add_affine(params, "backbone.stage1.stem.conv2", c0)
    prev = c0
    for s, (c, nb) in enumerate(zip(cfg.channels, cfg.blocks), start=1):
        pre = f"backbone.stage{s}"
        if s > 1:
            add_conv(params, rng, f"{pre}.down", prev, c, 3, bias=False)
            add_affine(params, f"{pre}.down", c)
        for b in range(nb):
            bp = f"{pre}.block{b}"
            init_dcac(params, rng, f"{bp}.dcac", c, cfg)
            add_conv(params, rng, f"{bp}.dw", c, c, 3, groups=c, bias=False)
            add_affine(params, f"{bp}.dw", c)
            add_conv(params, rng, f"{bp}.pw", c, c, 1, bias=False)
            add_affine(params, f"{bp}.pw", c)
            # residual branch starts near identity
            params[f"{bp}.pw.scale"].data[:] = 0.1
        prev = c


def _dcac_backbone_forward(image: Tensor, params: ParamStore, cfg: DcacConfig) -> StageOutputs:
    x = conv_affine(image, params, "backbone.stage1.stem.conv1", stride=2, padding=1)
    x = conv_affine(x, params, "backbone.stage1.stem.conv2", stride=2, padding=1)
    entries = []
    for s, (c, nb) in enumerate(zip(cfg.channels, cfg.blocks), start=1):
        pre = f"backbone.stage{s}"
        if s > 1:
            x = conv_affine(x, params, f"{pre}.down", stride=2, padding=1)
        for b in range(nb):
            bp = f"{pre}.block{b}"
            f = _fit_factor(x.shape[2], x.shape[3], cfg.condense_factor)
            y = dcac_forward(x, params, cfg, f"{bp}.dcac", factor=f)
            y = conv_affine(y, params, f"{bp}.dw", padding=1, groups=c)
            y = conv_affine(y, params, f"{bp}.pw", act=None)
            x = F.relu(F.add(y, x))
        entries.append((s, x, cfg.strides[s - 1]))
    return StageOutputs(entries)


# --- MBConv baseline ------------------------------------------------------------------


def _init_mbconv(params, rng, prefix, c_in, c_out, expansion):
    c_exp = int(round(c_in * expansion))
    if c_exp != c_in:
        add_conv(params, rng, f"{prefix}.expand", c_in, c_exp, 1, bias=False)
        add_affine(params, f"{prefix}.expand", c_exp)
    add_conv(params, rng, f"{prefix}.dw", c_exp, c_exp, 3, groups=c_exp, bias=False)
    add_affine(params, f"{prefix}.dw", c_exp)
    c_se = max(1, c_in // 4)
    add_conv(params, rng, f"{prefix}.se_reduce", c_exp, c_se, 1)
    add_conv(params, rng, f"{prefix}.se_expand", c_se, c_exp, 1)
    add_conv(params, rng, f"{prefix}.project", c_exp, c_out, 1, bias=False)
    add_affine(params, f"{prefix}.project", c_out)
    if c_in == c_out:
        params[f"{prefix}.project.scale"].data[:] = 0.1


def _mbconv_forward(x, params, prefix, stride):
    c_in = x.shape[1]
    y = conv_affine(x, params, f"{prefix}.expand") if f"{prefix}.expand.weight" in params else x
    c_exp = y.shape[1]
    y = conv_affine(y, params, f"{prefix}.dw", stride=stride, padding=1, groups=c_exp)
    se = F.relu(conv(F.mean_hw(y), params, f"{prefix}.se_reduce"))
    se = F.sigmoid(conv(se, params, f"{prefix}.se_expand"))
    y = F.mul(y, se)
    y = conv_affine(y, params, f"{prefix}.project", act=None)
    if stride == 1 and c_in == y.shape[1]:
        y = F.add(y, x)
    return y


def _init_baseline(params: ParamStore, rng: np.random.Generator, cfg: BaselineConfig) -> None:
    add_conv(params, rng, "backbone.block1.stem", 3, cfg.stem_channels, 3, bias=False)
    add_affine(params, "backbone.block1.stem", cfg.stem_channels)
    prev = cfg.stem_channels
    for i, (c, reps) in enumerate(zip(cfg.channels, cfg.blocks), start=1):
        expansion = 1.0 if i == 1 else cfg.expansion
        for r in range(reps):
            _init_mbconv(params, rng, f"backbone.block{i}.mb{r}", prev if r == 0 else c, c, expansion)
        prev = c


def _baseline_forward(image: Tensor, params: ParamStore, cfg: BaselineConfig) -> StageOutputs:
    x = conv_affine(image, params, "backbone.block1.stem", stride=2, padding=1)
    entries = []
    for i, reps in enumerate(cfg.blocks, start=1):
        for r in range(reps):
            x = _mbconv_forward(x, params, f"backbone.block{i}.mb{r}", cfg.block_strides[i - 1] if r == 0 else 1)
        entries.append((i, x, cfg.strides[i - 1]))
    return StageOutputs(entries)


# --- public API -----------------------------------------------------------------------


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator, params: ParamStore | None = None) -> ParamStore:
    params = ParamStore() if params is None else params
    if cfg.kind == "dcac":
        _init_dcac_backbone(params, rng, cfg)
    else:
        _init_baseline(params, rng, cfg)
    return params


def backbone_forward(image: Tensor, params: ParamStore, cfg: BackboneConfig) -> StageOutputs:
    """Run the encoder on an ``n x 3 x H x W`` image; H and W must be multiples of 32."""
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ConfigError(f"backbone_forward expects n x 3 x H x W, got {image.shape}")
    h, w = image.shape[2:]
    if h % 32 or w % 32 or h == 0 or w == 0:
        raise ConfigError(f"backbone_forward: H and W must be positive multiples of 32, got {h}x{w}")
    if cfg.kind == "dcac":
        return _dcac_backbone_forward(image, params, cfg)
    return _baseline_forward(image, params, cfg)


def freeze_stages(params: ParamStore, kind: str, n_frozen: int) -> None:
    """Freeze every parameter of units ``1..n_frozen``; unfreeze everything else."""
    n_units = 4 if kind == "dcac" else 7 if kind == "baseline" else None
    if n_units is None:
        raise ConfigError(f"unknown backbone kind {kind!r}")
    if not 0 <= n_frozen <= n_units:
        raise ConfigError(f"n_frozen must be in [0, {n_units}] for {kind}, got {n_frozen}")
    frozen_prefixes = tuple(unit_prefix(kind, i) for i in range(1, n_frozen + 1))
    for name in params.names():
        params.set_frozen(name, bool(frozen_prefixes) and name.startswith(frozen_prefixes))
