"""Board and patch records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pcbdet.errors import ConfigError

ROLES = ("train_val", "test", "excluded")
SPLITS = ("train", "val", "test")


def _boxes(b) -> np.ndarray:
    return np.asarray(b, dtype=np.float64).reshape(-1, 4)


def _classes(c) -> np.ndarray:
    return np.asarray(c, dtype=np.int64).reshape(-1)


@dataclass
class BoardRecord:
    board_id: str
    width: int
    height: int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    role: str = "train_val"
    image_path: str | None = None
    image: np.ndarray | None = None  # (H, W, 3) uint8 when held in memory
    num_classes: int | None = None

    def __post_init__(self):
        self.boxes, self.classes = _boxes(self.boxes), _classes(self.classes)
        if self.role not in ROLES:
            raise ConfigError(f"board {self.board_id}: role must be one of {ROLES}, got {self.role!r}")
        if len(self.boxes) != len(self.classes):
            raise ConfigError(f"board {self.board_id}: {len(self.boxes)} boxes but {len(self.classes)} class ids")
        b = self.boxes
        if len(b) and (
            (b[:, 0] < 0).any()
            or (b[:, 1] < 0).any()
            or (b[:, 2] > self.width).any()
            or (b[:, 3] > self.height).any()
            or (b[:, 2] <= b[:, 0]).any()
            or (b[:, 3] <= b[:, 1]).any()
        ):
            raise ConfigError(f"board {self.board_id}: annotation boxes must be non-degenerate and inside the image")
        if len(self.classes) and self.classes.min() < 0:
            raise ConfigError(f"board {self.board_id}: negative class id")
        if self.num_classes is not None and len(self.classes) and self.classes.max() >= self.num_classes:
            raise ConfigError(f"board {self.board_id}: class id outside the {self.num_classes}-class table")
        if self.image is not None and self.image.shape[:2] != (self.height, self.width):
            raise ConfigError(f"board {self.board_id}: image shape {self.image.shape} != {self.height}x{self.width}")


@dataclass
class PatchRecord:
    board_id: str
    x0: int
    y0: int
    size: int
    boxes: np.ndarray
    classes: np.ndarray
    split: str | None = None

    def __post_init__(self):
        self.boxes, self.classes = _boxes(self.boxes), _classes(self.classes)
        if self.split is not None and self.split not in SPLITS:
            raise ConfigError(f"patch split must be one of {SPLITS}, got {self.split!r}")

    @property
    def patch_id(self) -> str:
        return f"{self.board_id}@{self.x0},{self.y0},{self.size}"
