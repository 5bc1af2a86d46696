"""Square patch extraction and board-level dataset splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcbdet.data.records import BoardRecord, PatchRecord
from pcbdet.errors import ConfigError


def patch_origins(length: int, patch_size: int, stride: int) -> list[int]:
    """Grid origins along one axis; the last patch is shifted inward to end at the edge."""
    origins = list(range(0, length - patch_size + 1, stride))
    if origins[-1] + patch_size < length:
        origins.append(length - patch_size)
    return origins


def clip_annotations(boxes: np.ndarray, classes: np.ndarray, x0: int, y0: int, size: int, min_area_frac: float):
    """Boxes clipped to the window and shifted to its coordinates.

    A clipped box survives when its area is positive and at least
    ``min_area_frac`` of the original area.
    """
    if len(boxes) == 0:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    shifted = boxes - np.array([x0, y0, x0, y0], dtype=np.float64)
    clipped = np.clip(shifted, 0, size)
    area = (clipped[:, 2] - clipped[:, 0]) * (clipped[:, 3] - clipped[:, 1])
    orig = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep = (clipped[:, 2] > clipped[:, 0]) & (clipped[:, 3] > clipped[:, 1]) & (area >= min_area_frac * orig)
    return clipped[keep], classes[keep]


def patchify_board(
    board: BoardRecord, patch_size: int = 512, stride: int | None = None, min_box_area_frac: float = 0.25
) -> list[PatchRecord]:
    """Cover the board with square patches, row-major from the top-left.

    Patches of test-role boards are labelled ``test``; others are left
    unassigned for :func:`split_dataset`.
    """
    stride = patch_size if stride is None else stride
    if patch_size < 1 or stride < 1:
        raise ConfigError(f"patch_size and stride must be >= 1, got {patch_size}, {stride}")
    if patch_size > min(board.width, board.height):
        raise ConfigError(f"patch size {patch_size} larger than board {board.board_id} ({board.width}x{board.height})")
    split = "test" if board.role == "test" else None
    patches = []
    for y0 in patch_origins(board.height, patch_size, stride):
        for x0 in patch_origins(board.width, patch_size, stride):
            boxes, classes = clip_annotations(board.boxes, board.classes, x0, y0, patch_size, min_box_area_frac)
            patches.append(PatchRecord(board.board_id, x0, y0, patch_size, boxes, classes, split))
    return patches


def crop_patch(image: np.ndarray, patch: PatchRecord) -> np.ndarray:
    return image[patch.y0 : patch.y0 + patch.size, patch.x0 : patch.x0 + patch.size]


@dataclass
class SplitManifest:
    patches: list[PatchRecord]
    seed: int
    val_frac: float

    def split(self, name: str) -> list[PatchRecord]:
        return [p for p in self.patches if p.split == name]

    def counts(self) -> dict[str, int]:
        return {s: sum(p.split == s for p in self.patches) for s in ("train", "val", "test")}

    def mapping(self) -> dict[str, str]:
        return {p.patch_id: p.split for p in self.patches}


def split_dataset(
    boards: list[BoardRecord],
    val_frac: float = 0.125,
    seed: int = 0,
    patch_size: int = 512,
    stride: int | None = None,
    min_box_area_frac: float = 0.25,
) -> SplitManifest:
    """Board-level holdout: test boards -> test; excluded boards dropped;
    the remaining patches shuffled with ``seed`` and split ``1 - val_frac`` / ``val_frac``."""
    if not 0 < val_frac < 1:
        raise ConfigError(f"val_frac must be in (0, 1), got {val_frac}")
    if not any(b.role == "train_val" for b in boards):
        raise ConfigError("split_dataset: no train_val boards")
    patches: list[PatchRecord] = []
    for board in boards:
        if board.role == "excluded":
            continue
        patches.extend(patchify_board(board, patch_size, stride, min_box_area_frac))
    pool = [i for i, p in enumerate(patches) if p.split != "test"]
    n_val = int(round(len(pool) * val_frac))
    order = np.random.default_rng(seed).permutation(len(pool))
    val = {pool[i] for i in order[:n_val]}
    for i in pool:
        patches[i].split = "val" if i in val else "train"
    return SplitManifest(patches, seed, val_frac)
