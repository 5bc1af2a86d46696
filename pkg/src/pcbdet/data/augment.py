"""Training-time augmentation: flips, translation, colour degeneration, cutout.

All randomness comes from the per-sample generator passed in; use
:func:`sample_rng` to derive it from (seed, epoch, index) so serial and
parallel loaders see the same streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcbdet.errors import ConfigError


@dataclass(frozen=True)
class AugmentationPolicy:
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    translate_p: float = 0.5
    translate_max: float = 0.1  # fraction of the patch side
    colour_p: float = 0.5
    channel_scale: tuple[float, float] = (0.8, 1.2)
    desaturate: tuple[float, float] = (0.0, 0.5)
    cutout_p: float = 0.3
    cutout_max_count: int = 2
    cutout_size: tuple[float, float] = (0.05, 0.15)  # fraction of the patch side

    def __post_init__(self):
        for name in ("hflip_p", "vflip_p", "translate_p", "colour_p", "cutout_p"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"AugmentationPolicy.{name} must be in [0, 1], got {v}")
        if not 0 <= self.translate_max <= 0.25:
            raise ConfigError(f"AugmentationPolicy.translate_max must be in [0, 0.25], got {self.translate_max}")
        lo, hi = self.desaturate
        if not 0 <= lo <= hi <= 1:
            raise ConfigError("AugmentationPolicy.desaturate must satisfy 0 <= lo <= hi <= 1")
        if not 0 < self.channel_scale[0] <= self.channel_scale[1]:
            raise ConfigError("AugmentationPolicy.channel_scale must be a positive (lo, hi) range")
        if self.cutout_max_count < 0 or not 0 < self.cutout_size[0] <= self.cutout_size[1] <= 1:
            raise ConfigError("AugmentationPolicy cutout settings out of range")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(hflip_p=0, vflip_p=0, translate_p=0, colour_p=0, cutout_p=0)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def hflip(image: np.ndarray, boxes: np.ndarray):
    w = image.shape[1]
    out = boxes.copy()
    out[:, 0], out[:, 2] = w - boxes[:, 2], w - boxes[:, 0]
    return image[:, ::-1], out


def vflip(image: np.ndarray, boxes: np.ndarray):
    h = image.shape[0]
    out = boxes.copy()
    out[:, 1], out[:, 3] = h - boxes[:, 3], h - boxes[:, 1]
    return image[::-1], out


def translate(image: np.ndarray, boxes: np.ndarray, classes: np.ndarray, dx: int, dy: int):
    """Shift content by (dx, dy) pixels, zero-filling; boxes clipped, dropped when empty."""
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    src_x, dst_x = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    src_y, dst_y = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    out[dst_y, dst_x] = image[src_y, src_x]
    moved = boxes + np.array([dx, dy, dx, dy], dtype=boxes.dtype)
    moved[:, 0::2] = np.clip(moved[:, 0::2], 0, w)
    moved[:, 1::2] = np.clip(moved[:, 1::2], 0, h)
    keep = (moved[:, 2] > moved[:, 0]) & (moved[:, 3] > moved[:, 1])
    return out, moved[keep], classes[keep]


def degrade_colour(image: np.ndarray, scales: np.ndarray, desat: float) -> np.ndarray:
    """Scale each channel, then blend toward the grayscale image by ``desat``."""
    out = image * scales[None, None, :].astype(image.dtype)
    gray = out.mean(axis=2, keepdims=True)
    out = (1 - desat) * out + desat * gray
    return np.clip(out, 0, 1).astype(image.dtype, copy=False)


def augment(image: np.ndarray, boxes, classes, policy: AugmentationPolicy, rng: np.random.Generator):
    """Apply the policy to an ``(H, W, 3)`` float image in [0, 1] and its boxes.

    Returns new ``(image, boxes, classes)``; inputs are not modified.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    h, w = image.shape[:2]
    # draws happen in a fixed order whether or not each transform fires
    u = rng.random(5)
    if u[0] < policy.hflip_p:
        image, boxes = hflip(image, boxes)
    if u[1] < policy.vflip_p:
        image, boxes = vflip(image, boxes)
    shift = rng.uniform(-policy.translate_max, policy.translate_max, size=2)
    if u[2] < policy.translate_p:
        dx, dy = int(round(shift[0] * w)), int(round(shift[1] * h))
        image, boxes, classes = translate(image, boxes, classes, dx, dy)
    scales = rng.uniform(*policy.channel_scale, size=3)
    desat = rng.uniform(*policy.desaturate)
    if u[3] < policy.colour_p:
        image = degrade_colour(image, scales, desat)
    if u[4] < policy.cutout_p and policy.cutout_max_count > 0:
        image = np.array(image, copy=True)
        for _ in range(int(rng.integers(1, policy.cutout_max_count + 1))):
            ch = max(1, int(round(rng.uniform(*policy.cutout_size) * h)))
            cw = max(1, int(round(rng.uniform(*policy.cutout_size) * w)))
            y, x = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
            image[y : y + ch, x : x + cw] = 0
    return np.ascontiguousarray(image), boxes, classes
