"""Class-wise greedy non-maximum suppression."""

from __future__ import annotations

import numpy as np

from pcbdet.boxes import Detection, iou_matrix


def nms(detections: list[Detection], iou_thresh: float = 0.5, max_out: int = 100) -> list[Detection]:
    """Greedy per-class suppression.

    Candidates are visited by descending score, ties going to the lower input
    index. A candidate is dropped when its IoU with an already kept box of the
    same class exceeds ``iou_thresh``. Survivors are returned by descending
    score (same tie-break), at most ``max_out`` of them.
    """
    if not detections or max_out <= 0:
        return []
    boxes = np.array([d.box for d in detections], dtype=np.float64)
    scores = np.array([d.score for d in detections], dtype=np.float64)
    classes = np.array([d.class_id for d in detections])
    order = np.lexsort((np.arange(len(detections)), -scores))
    kept: list[int] = []
    for cls in np.unique(classes):
        idx = order[classes[order] == cls]
        ious = iou_matrix(boxes[idx], boxes[idx])
        alive = np.ones(len(idx), dtype=bool)
        for i in range(len(idx)):
            if not alive[i]:
                continue
            kept.append(int(idx[i]))
            alive[i + 1 :] &= ious[i, i + 1 :] <= iou_thresh
    kept.sort(key=lambda i: (-scores[i], i))
    return [detections[i] for i in kept[:max_out]]
