"""FPN, classification/box sub-nets, end-to-end forward pass and inference."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from pcbdet.backbone import StageOutputs, backbone_forward, freeze_stages, init_backbone
from pcbdet.boxes import Detection
from pcbdet.detector.anchors import AnchorGrid, decode_boxes, generate_anchors
from pcbdet.detector.config import AnchorConfig, DetectorConfig, FpnConfig
from pcbdet.detector.nms import nms
from pcbdet.errors import ConfigError
from pcbdet.nn import functional as F
from pcbdet.nn.layers import conv
from pcbdet.nn.params import ParamStore, add_conv, count_params
from pcbdet.nn.tensor import Tensor, inference_mode


def init_fpn(params: ParamStore, rng: np.random.Generator, stage_channels: dict[int, int], cfg: FpnConfig, inputs) -> None:
    c = cfg.fpn_channels
    for idx in inputs:
        if idx not in stage_channels:
            raise ConfigError(f"FPN input stage {idx} does not exist (have {sorted(stage_channels)})")
        add_conv(params, rng, f"fpn.lateral{idx}", stage_channels[idx], c, 1)
        add_conv(params, rng, f"fpn.smooth{idx}", c, c, 3)
    for k in range(cfg.extra_levels):
        add_conv(params, rng, f"fpn.extra{k}", c, c, 3)


def build_fpn(stages: StageOutputs, params: ParamStore, cfg: FpnConfig, inputs=None) -> list[Tensor]:
    """Top-down pyramid over the selected stages, plus stride-2 extra levels.

    Levels come out finest first; every level has ``cfg.fpn_channels`` channels.
    """
    inputs = tuple(cfg.input_stage_indices if inputs is None else inputs)
    if not inputs:
        raise ConfigError("build_fpn: no input stages selected")
    available = set(stages.indices)
    missing = [i for i in inputs if i not in available]
    if missing:
        raise ConfigError(f"build_fpn: stages {missing} missing from backbone outputs {sorted(available)}")
    feats = [stages.get(i) for i in inputs]
    laterals = [conv(t, params, f"fpn.lateral{i}") for i, (t, _) in zip(inputs, feats)]
    merged = [None] * len(laterals)
    merged[-1] = laterals[-1]
    for j in range(len(laterals) - 2, -1, -1):
        ratio = feats[j + 1][1] // feats[j][1]
        merged[j] = F.add(laterals[j], F.upsample_nearest(merged[j + 1], ratio))
    pyramid = [conv(m, params, f"fpn.smooth{i}", padding=1) for i, m in zip(inputs, merged)]
    top = pyramid[-1]
    for k in range(cfg.extra_levels):
        top = conv(top if k == 0 else F.relu(top), params, f"fpn.extra{k}", stride=2, padding=1)
        pyramid.append(top)
    return pyramid


def init_heads(params: ParamStore, rng: np.random.Generator, cfg: DetectorConfig) -> None:
    c = cfg.fpn.fpn_channels
    a = cfg.anchors.per_cell
    # every head conv starts at N(0, 0.01^2): initial scores then sit at the prior
    for branch in ("cls", "reg"):
        for i in range(cfg.subnet_depth):
            add_conv(params, rng, f"head.{branch}.conv{i}", c, c, 3, std=0.01)
    add_conv(params, rng, "head.cls.out", c, a * cfg.num_classes, 3, std=0.01)
    add_conv(params, rng, "head.reg.out", c, a * 4, 3, std=0.01)
    # initial foreground probability == prior
    params["head.cls.out.bias"].data[:] = -math.log((1 - cfg.prior) / cfg.prior)


def _subnet(x: Tensor, params: ParamStore, branch: str, depth: int) -> Tensor:
    for i in range(depth):
        x = F.relu(conv(x, params, f"head.{branch}.conv{i}", padding=1))
    return conv(x, params, f"head.{branch}.out", padding=1)


def init_detector(cfg: DetectorConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters for ``cfg`` with the configured stages frozen."""
    rng = np.random.default_rng(seed)
    params = init_backbone(cfg.backbone, rng)
    stage_channels = dict(enumerate(cfg.backbone.channels, start=1))
    init_fpn(params, rng, stage_channels, cfg.fpn, cfg.fpn_inputs)
    init_heads(params, rng, cfg)
    freeze_stages(params, cfg.backbone_kind, cfg.frozen_units)
    return params


def forward(images: Tensor, params: ParamStore, cfg: DetectorConfig) -> tuple[Tensor, Tensor]:
    """Raw head outputs over all anchors: logits ``(n, N, K)`` and offsets ``(n, N, 4)``."""
    stages = backbone_forward(images, params, cfg.backbone)
    pyramid = build_fpn(stages, params, cfg.fpn, cfg.fpn_inputs)
    cls, reg = [], []
    for level in pyramid:
        cls.append(F.head_flatten(_subnet(level, params, "cls", cfg.subnet_depth), cfg.num_classes))
        reg.append(F.head_flatten(_subnet(level, params, "reg", cfg.subnet_depth), 4))
    return F.concat(cls, axis=1), F.concat(reg, axis=1)


@functools.lru_cache(maxsize=32)
def _cached_anchors(hw: tuple[int, int], strides: tuple[int, ...], anchor_cfg: AnchorConfig) -> AnchorGrid:
    return generate_anchors(hw, strides, anchor_cfg)


def anchors_for(cfg: DetectorConfig, hw: tuple[int, int] | None = None) -> AnchorGrid:
    hw = (cfg.input_size, cfg.input_size) if hw is None else tuple(hw)
    return _cached_anchors(hw, cfg.level_strides, cfg.anchors)


def _as_batch(image) -> Tensor:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ConfigError(f"expected an image of shape (3, H, W) or (n, 3, H, W), got {arr.shape}")
    return Tensor(arr.astype(np.float32, copy=False))


def postprocess(cls_logits: np.ndarray, offsets: np.ndarray, anchors: AnchorGrid, cfg: DetectorConfig, hw) -> list[Detection]:
    """Per-level top-k above threshold, decode, clip, then class-wise NMS (one image)."""
    k = cfg.num_classes
    dets: list[Detection] = []
    start = 0
    for level, count in zip(anchors.levels, anchors.counts):
        logits = cls_logits[start : start + count].astype(np.float64).ravel()
        offs = offsets[start : start + count]
        start += count
        scores = 1.0 / (1.0 + np.exp(-logits))
        cand = np.flatnonzero(scores > cfg.score_thresh)
        if cand.size == 0:
            continue
        cand = cand[np.lexsort((cand, -scores[cand]))][: cfg.topk_per_level]
        a_idx, c_idx = cand // k, cand % k
        boxes = decode_boxes(offs[a_idx], level.boxes[a_idx], clip_to=hw)
        ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        for box, cls, score in zip(boxes[ok], c_idx[ok], scores[cand][ok]):
            dets.append(Detection(tuple(float(v) for v in box), int(cls), float(score)))
    return nms(dets, cfg.nms_iou, cfg.max_detections)


def detect_batch(images, params: ParamStore, cfg: DetectorConfig) -> list[list[Detection]]:
    x = _as_batch(images)
    hw = x.shape[2:]
    if hw[0] % cfg.max_stride or hw[1] % cfg.max_stride:
        raise ConfigError(f"image {hw[0]}x{hw[1]} must be divisible by the max stride {cfg.max_stride}")
    with inference_mode():
        cls, reg = forward(x, params, cfg)
    anchors = anchors_for(cfg, hw)
    return [postprocess(cls.data[i], reg.data[i], anchors, cfg, hw) for i in range(x.shape[0])]


def detect(image, params: ParamStore, cfg: DetectorConfig) -> list[Detection]:
    """Detections for a single ``(3, H, W)`` or ``(1, 3, H, W)`` image."""
    x = _as_batch(image)
    if x.shape[0] != 1:
        raise ConfigError("detect() takes one image; use detect_batch() for several")
    return detect_batch(x, params, cfg)[0]


def describe(cfg: DetectorConfig, params: ParamStore | None = None) -> dict:
    """Graph metadata: which backbone units feed the FPN, level strides, sizes."""
    info = {
        "backbone": cfg.backbone_kind,
        "backbone_units": cfg.backbone.n_units,
        "unit_strides": list(cfg.backbone.strides),
        "fpn_inputs": list(cfg.fpn_inputs),
        "fpn_channels": cfg.fpn.fpn_channels,
        "level_strides": list(cfg.level_strides),
        "anchors_per_cell": cfg.anchors.per_cell,
        "frozen_units": cfg.frozen_units,
    }
    if params is not None:
        info["fpn_laterals_built"] = sorted(
            int(n[len("fpn.lateral") :].split(".")[0]) for n in params.names() if n.startswith("fpn.lateral") and n.endswith(".weight")
        )
        info["total_params"] = count_params(params)
        info["trainable_params"] = count_params(params, trainable_only=True)
    return info


@dataclass
class Detector:
    """Convenience bundle of a config and its parameters."""

    cfg: DetectorConfig
    params: ParamStore

    @classmethod
    def create(cls, cfg: DetectorConfig, seed: int = 0) -> "Detector":
        return cls(cfg, init_detector(cfg, seed))

    def __call__(self, image) -> list[Detection]:
        return detect(image, self.params, self.cfg)

    def forward(self, images) -> tuple[Tensor, Tensor]:
        return forward(_as_batch(images), self.params, self.cfg)

    def describe(self) -> dict:
        return describe(self.cfg, self.params)
