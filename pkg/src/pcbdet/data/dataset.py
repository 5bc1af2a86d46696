"""In-memory patch datasets and seeded batch iteration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from pcbdet.data.augment import AugmentationPolicy, augment, sample_rng
from pcbdet.data.io import load_board_image, patch_image_id
from pcbdet.data.patchify import SplitManifest, crop_patch
from pcbdet.data.records import BoardRecord
from pcbdet.detector.train import Batch


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    boxes: np.ndarray
    classes: np.ndarray


def build_split(boards: list[BoardRecord], manifest: SplitManifest, split: str) -> list[Sample]:
    by_id = {b.board_id: b for b in boards}
    cache: dict[str, np.ndarray] = {}
    samples = []
    for p in manifest.split(split):
        if p.board_id not in cache:
            cache[p.board_id] = load_board_image(by_id[p.board_id])
        img = crop_patch(cache[p.board_id], p).astype(np.float32) / 255.0
        samples.append(Sample(patch_image_id(p), img, p.boxes, p.classes))
    return samples


def to_chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)


def iterate_batches(
    samples: list[Sample],
    batch_size: int,
    seed: int,
    epoch: int,
    policy: AugmentationPolicy | None = None,
    shuffle: bool = True,
) -> Iterator[Batch]:
    """Batches for one epoch; order and augmentation depend only on (seed, epoch, index)."""
    order = np.random.default_rng([seed, epoch]).permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        images, boxes, classes = [], [], []
        for idx in order[start : start + batch_size]:
            s = samples[idx]
            img, b, c = s.image, s.boxes, s.classes
            if policy is not None:
                img, b, c = augment(img, b, c, policy, sample_rng(seed, epoch, int(idx)))
            images.append(to_chw(img))
            boxes.append(b)
            classes.append(c)
        yield Batch(np.stack(images), boxes, classes)
