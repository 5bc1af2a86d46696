"""Axis-aligned box helpers. Boxes are ``(x_min, y_min, x_max, y_max)`` in pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcbdet.errors import ContractError


def as_boxes(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return arr


def areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def validate_boxes(boxes: np.ndarray, what: str = "box") -> None:
    bad = ~((boxes[:, 0] < boxes[:, 2]) & (boxes[:, 1] < boxes[:, 3]) & np.isfinite(boxes).all(axis=1))
    if bad.any():
        raise ContractError(f"degenerate {what}: {boxes[np.argmax(bad)].tolist()}")


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a, b = as_boxes(a), as_boxes(b)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    union = areas(a)[:, None] + areas(b)[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


@dataclass(frozen=True)
class Detection:
    """One predicted box (pixel coords, half-open), its class and confidence."""

    box: tuple[float, float, float, float]
    class_id: int
    score: float

    def to_dict(self) -> dict:
        return {"box": [float(v) for v in self.box], "class_id": int(self.class_id), "score": float(self.score)}
