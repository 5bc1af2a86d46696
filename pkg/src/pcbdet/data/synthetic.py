"""Synthetic PCB-like boards with exact ground truth.

Classes have distinct looks: 0 resistor-like (tan body, colour bands),
1 capacitor-like (dark blue body, pale polarity stripe), 2 IC-like (black
body, silver pins). Further classes get flat palette colours with a border.
Class frequencies follow a geometric imbalance: the most common class is
``imbalance`` times as frequent as the rarest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcbdet.data.records import BoardRecord
from pcbdet.errors import ConfigError

_PALETTE = np.array(
    [[0.85, 0.45, 0.10], [0.55, 0.15, 0.60], [0.10, 0.60, 0.70], [0.85, 0.80, 0.20], [0.60, 0.10, 0.15]]
)
_BAND_COLOURS = np.array([[0.9, 0.1, 0.1], [0.1, 0.1, 0.9], [0.95, 0.75, 0.1], [0.1, 0.1, 0.1], [0.5, 0.3, 0.1]])


@dataclass(frozen=True)
class SceneSpec:
    num_classes: int = 3
    count_range: tuple[int, int] = (2, 5)
    size: int = 128
    imbalance: float = 10.0
    min_side: int = 14
    max_side: int = 56
    noise: float = 0.03

    def __post_init__(self):
        if self.size < 64:
            raise ConfigError(f"synthetic boards need size >= 64, got {self.size}")
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"count_range must satisfy 0 <= lo <= hi, got {self.count_range}")
        if self.num_classes < 1 or self.imbalance < 1:
            raise ConfigError("num_classes must be >= 1 and imbalance >= 1")

    def class_weights(self) -> np.ndarray:
        k = self.num_classes
        if k == 1:
            return np.ones(1)
        w = self.imbalance ** (-np.arange(k) / (k - 1))
        return w / w.sum()


def _component_size(cls: int, rng: np.random.Generator, spec: SceneSpec) -> tuple[int, int]:
    if cls == 0:  # elongated 2:1, either orientation
        long = int(rng.integers(28, 45))
        short = max(spec.min_side, long // 2)
        return (long, short) if rng.random() < 0.5 else (short, long)
    if cls == 1:
        side = int(rng.integers(20, 33))
        return side, side + int(rng.integers(-3, 4))
    if cls == 2:
        side = int(rng.integers(34, 53))
        return side, side + int(rng.integers(-4, 5))
    side = int(rng.integers(spec.min_side + 10, spec.max_side - 8))
    return side, side


def _render(img: np.ndarray, cls: int, x0: int, y0: int, w: int, h: int, rng: np.random.Generator) -> None:
    body = img[y0 : y0 + h, x0 : x0 + w]
    if cls == 0:
        body[:] = [0.82, 0.68, 0.48]
        horizontal = w >= h
        length = w if horizontal else h
        n_bands = 3
        for b in range(n_bands):
            pos = int(length * (0.25 + 0.2 * b))
            colour = _BAND_COLOURS[int(rng.integers(len(_BAND_COLOURS)))]
            if horizontal:
                body[:, pos : pos + max(2, w // 12)] = colour
            else:
                body[pos : pos + max(2, h // 12), :] = colour
    elif cls == 1:
        body[:] = [0.15, 0.2, 0.45]
        stripe = max(2, w // 6)
        body[:, :stripe] = [0.75, 0.78, 0.85]
    elif cls == 2:
        body[:] = [0.07, 0.07, 0.08]
        pin = max(2, h // 10)
        for x in range(3, w - 3, 6):
            body[:pin, x : x + 3] = [0.8, 0.8, 0.82]
            body[h - pin :, x : x + 3] = [0.8, 0.8, 0.82]
        body[pin + 2 : pin + 5, 2:5] = [0.9, 0.9, 0.9]
    else:
        body[:] = _PALETTE[(cls - 3) % len(_PALETTE)]
        body[:2, :] = body[-2:, :] = 0.95
        body[:, :2] = body[:, -2:] = 0.95


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.empty((size, size, 3))
    img[:] = [0.08, 0.33, 0.16]
    img += rng.normal(0, 0.02, size=(size, size, 1))
    for _ in range(int(rng.integers(2, 6))):  # copper traces
        pos, width = int(rng.integers(0, size)), int(rng.integers(1, 3))
        if rng.random() < 0.5:
            img[pos : pos + width, :] = [0.55, 0.5, 0.25]
        else:
            img[:, pos : pos + width] = [0.55, 0.5, 0.25]
    return img


def generate_synthetic_scene(
    spec: SceneSpec, seed: int, board_id: str | None = None, role: str = "train_val"
) -> BoardRecord:
    """Render one board; identical ``(spec, seed)`` gives a bit-identical image."""
    rng = np.random.default_rng(seed)
    size = spec.size
    img = _background(size, rng)
    weights = spec.class_weights()
    n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    occupied = np.zeros((size, size), dtype=bool)
    boxes, classes = [], []
    for _ in range(n):
        cls = int(rng.choice(spec.num_classes, p=weights))
        w, h = _component_size(cls, rng, spec)
        w, h = min(w, size - 4), min(h, size - 4)
        for _attempt in range(30):
            x0 = int(rng.integers(2, size - w - 1))
            y0 = int(rng.integers(2, size - h - 1))
            if not occupied[max(0, y0 - 3) : y0 + h + 3, max(0, x0 - 3) : x0 + w + 3].any():
                break
        else:
            continue
        occupied[y0 : y0 + h, x0 : x0 + w] = True
        _render(img, cls, x0, y0, w, h, rng)
        boxes.append((x0, y0, x0 + w, y0 + h))
        classes.append(cls)
    img += rng.normal(0, spec.noise, size=img.shape)
    image = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    return BoardRecord(
        board_id=board_id or f"synth{seed}",
        width=size,
        height=size,
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        classes=np.array(classes, dtype=np.int64),
        role=role,
        image=image,
        num_classes=spec.num_classes,
    )


def synthetic_boards(n_train_val: int, n_test: int, spec: SceneSpec, seed: int = 0, n_excluded: int = 0) -> list[BoardRecord]:
    """A board set with roles assigned; board ``i`` uses seed ``seed * 100003 + i``."""
    roles = ["train_val"] * n_train_val + ["test"] * n_test + ["excluded"] * n_excluded
    return [
        generate_synthetic_scene(spec, seed * 100003 + i, board_id=f"board{i:04d}", role=role)
        for i, role in enumerate(roles)
    ]
