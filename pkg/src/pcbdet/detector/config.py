"""Detector configuration records and the shipped presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from pcbdet.backbone import BaselineConfig, DcacConfig
from pcbdet.errors import ConfigError

# FPN inputs: DC-AC omits stage 1 of 4, the baseline omits blocks 1-3 of 7
DEFAULT_FPN_INPUTS = {"dcac": (2, 3, 4), "baseline": (4, 5, 6, 7)}
# first N units frozen during training
DEFAULT_FROZEN = {"dcac": 2, "baseline": 4}


@dataclass(frozen=True)
class FpnConfig:
    input_stage_indices: tuple[int, ...] | None = None
    fpn_channels: int = 256
    extra_levels: int = 2

    def __post_init__(self):
        if self.input_stage_indices is not None:
            object.__setattr__(self, "input_stage_indices", tuple(int(i) for i in self.input_stage_indices))
            if not self.input_stage_indices:
                raise ConfigError("FpnConfig.input_stage_indices must not be empty")
        if self.fpn_channels <= 0:
            raise ConfigError(f"FpnConfig.fpn_channels must be > 0, got {self.fpn_channels}")
        if self.extra_levels < 0:
            raise ConfigError("FpnConfig.extra_levels must be >= 0")

    def resolved_inputs(self, backbone_kind: str) -> tuple[int, ...]:
        if self.input_stage_indices is not None:
            return self.input_stage_indices
        return DEFAULT_FPN_INPUTS[backbone_kind]


@dataclass(frozen=True)
class AnchorConfig:
    scales: tuple[float, ...] = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    base_multiplier: float = 4.0  # base_size = base_multiplier * stride

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if not self.scales or not self.aspect_ratios:
            raise ConfigError("AnchorConfig needs at least one scale and one aspect ratio")
        if min(self.scales) <= 0 or min(self.aspect_ratios) <= 0 or self.base_multiplier <= 0:
            raise ConfigError("AnchorConfig: scales, ratios and base_multiplier must be positive")

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)


@dataclass(frozen=True)
class DetectorConfig:
    backbone_kind: str = "dcac"
    dcac: DcacConfig = field(default_factory=DcacConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    fpn: FpnConfig = field(default_factory=FpnConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    num_classes: int = 3
    input_size: int = 512
    subnet_depth: int = 4
    prior: float = 0.01
    pos_thresh: float = 0.5
    neg_thresh: float = 0.4
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1 / 9
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    topk_per_level: int = 1000
    max_detections: int = 100
    n_frozen: int | None = None

    def __post_init__(self):
        if self.backbone_kind not in ("dcac", "baseline"):
            raise ConfigError(f"backbone_kind must be 'dcac' or 'baseline', got {self.backbone_kind!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        n_units = self.backbone.n_units
        missing = [i for i in self.fpn_inputs if not 1 <= i <= n_units]
        if missing:
            raise ConfigError(f"fpn.input_stage_indices {missing} do not exist in a {n_units}-unit backbone")
        if self.input_size <= 0 or self.input_size % self.max_stride:
            raise ConfigError(f"input_size {self.input_size} must be a positive multiple of {self.max_stride}")
        if self.subnet_depth < 0:
            raise ConfigError("subnet_depth must be >= 0")
        if not 0 < self.prior < 1:
            raise ConfigError("prior must be in (0, 1)")
        if self.pos_thresh < self.neg_thresh:
            raise ConfigError("pos_thresh must be >= neg_thresh")
        if not 0 < self.focal_alpha <= 1 or self.focal_gamma < 0:
            raise ConfigError("focal_alpha must be in (0, 1] and focal_gamma >= 0")
        if self.smooth_l1_beta <= 0:
            raise ConfigError("smooth_l1_beta must be > 0")
        if self.n_frozen is not None and not 0 <= self.n_frozen <= n_units:
            raise ConfigError(f"n_frozen must be in [0, {n_units}]")

    @property
    def backbone(self) -> DcacConfig | BaselineConfig:
        return self.dcac if self.backbone_kind == "dcac" else self.baseline

    @property
    def fpn_inputs(self) -> tuple[int, ...]:
        return self.fpn.resolved_inputs(self.backbone_kind)

    @property
    def frozen_units(self) -> int:
        return DEFAULT_FROZEN[self.backbone_kind] if self.n_frozen is None else self.n_frozen

    @property
    def level_strides(self) -> tuple[int, ...]:
        base = [self.backbone.strides[i - 1] for i in self.fpn_inputs]
        extra = [base[-1] * 2 ** (k + 1) for k in range(self.fpn.extra_levels)]
        return tuple(base + extra)

    @property
    def max_stride(self) -> int:
        return max(max(self.level_strides), 32)

    def replace(self, **changes) -> "DetectorConfig":
        return dataclasses.replace(self, **changes)


def pcbdet_config(**overrides) -> DetectorConfig:
    """Full-size DC-AC detector: FPN 256 channels, sub-net depth 4, 512 input."""
    return DetectorConfig(**overrides)


def efficientnet_det_config(**overrides) -> DetectorConfig:
    return DetectorConfig(backbone_kind="baseline", **overrides)


def toy_dcac_config(**overrides) -> DetectorConfig:
    """Desk-scale DC-AC detector used by the shipped toy experiment."""
    base = dict(
        backbone_kind="dcac",
        dcac=DcacConfig(channels=(16, 32, 64, 128), blocks=(1, 1, 1, 1)),
        fpn=FpnConfig(fpn_channels=64, extra_levels=0),
        num_classes=3,
        input_size=128,
        subnet_depth=2,
    )
    base.update(overrides)
    return DetectorConfig(**base)


def toy_baseline_config(**overrides) -> DetectorConfig:
    """Desk-scale MBConv baseline detector, same head/FPN settings as the toy DC-AC one."""
    base = dict(
        backbone_kind="baseline",
        baseline=BaselineConfig(),
        fpn=FpnConfig(fpn_channels=64, extra_levels=0),
        num_classes=3,
        input_size=128,
        subnet_depth=2,
    )
    base.update(overrides)
    return DetectorConfig(**base)
