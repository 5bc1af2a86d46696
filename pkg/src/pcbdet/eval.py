"""Detection metrics: IoU, per-class AP, COCO mAP@[0.5:0.95] and NetScore."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from pcbdet.boxes import as_boxes, iou_matrix, validate_boxes
from pcbdet.errors import ContractError, EvaluationError

# 0.50, 0.55, ..., 0.95
COCO_IOU_THRESHOLDS = tuple(float(t) for t in np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1))
RECALL_GRID = np.linspace(0.0, 1.0, 101)


class Prediction(NamedTuple):
    image_id: str
    box: tuple[float, float, float, float]
    class_id: int
    score: float


class GroundTruth(NamedTuple):
    image_id: str
    box: tuple[float, float, float, float]
    class_id: int


def iou(a, b) -> float:
    a, b = as_boxes(a), as_boxes(b)
    validate_boxes(a)
    validate_boxes(b)
    return float(iou_matrix(a, b)[0, 0])


def match_predictions(predictions, gt, class_id: int, iou_thresh: float) -> tuple[np.ndarray, int]:
    """TP flags for the class's predictions in ranked order, and the class's gt count.

    Ranking is by descending score, ties kept in input order. Each prediction
    takes the highest-IoU still-unmatched gt in its image (lowest index on
    ties) if that IoU is at least ``iou_thresh``.
    """
    preds = [p for p in predictions if p.class_id == class_id]
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    gt_by_image: dict[str, list] = defaultdict(list)
    for g in gt:
        if g.class_id == class_id:
            gt_by_image[g.image_id].append(g.box)
    n_gt = sum(len(v) for v in gt_by_image.values())
    gt_arrays = {k: np.asarray(v, dtype=np.float64) for k, v in gt_by_image.items()}
    used = {k: np.zeros(len(v), dtype=bool) for k, v in gt_arrays.items()}
    tp = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        p = preds[i]
        boxes = gt_arrays.get(p.image_id)
        if boxes is None:
            continue
        ious = iou_matrix([p.box], boxes)[0]
        ious[used[p.image_id]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= iou_thresh:
            used[p.image_id][j] = True
            tp[rank] = True
    return tp, n_gt


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated area under the precision-recall curve."""
    if n_gt == 0:
        return math.nan
    if len(tp) == 0:
        return 0.0
    tps = np.cumsum(tp).astype(np.float64)
    fps = np.cumsum(~tp).astype(np.float64)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    # precision envelope, non-increasing in recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(np.mean(q))


def average_precision(predictions, gt, class_id: int, iou_thresh: float) -> float:
    """AP of one class at one IoU threshold; NaN when the class has no ground truth."""
    tp, n_gt = match_predictions(predictions, gt, class_id, iou_thresh)
    return interpolated_ap(tp, n_gt)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    per_class_ap: dict[int, list[float]]  # class -> AP per threshold (classes with gt only)
    map: float
    n_images: int
    n_gt: int
    n_predictions: int
    config: dict = field(default_factory=dict)

    @property
    def per_threshold_map(self) -> list[float]:
        return [float(np.mean([aps[t] for aps in self.per_class_ap.values()])) for t in range(len(self.thresholds))]

    def map_at(self, thresh: float) -> float:
        t = min(range(len(self.thresholds)), key=lambda i: abs(self.thresholds[i] - thresh))
        return self.per_threshold_map[t]

    @property
    def map50(self) -> float:
        return self.map_at(0.5)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "map50": self.map50,
            "map75": self.map_at(0.75),
            "thresholds": list(self.thresholds),
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "per_threshold_map": self.per_threshold_map,
            "n_images": self.n_images,
            "n_gt": self.n_gt,
            "n_predictions": self.n_predictions,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        head = ["class"] + [f"{t:.2f}" for t in self.thresholds] + ["mean"]
        rows = []
        for cls, aps in sorted(self.per_class_ap.items()):
            rows.append([str(cls)] + [f"{a:.4f}" for a in aps] + [f"{np.mean(aps):.4f}"])
        rows.append(["all"] + [f"{m:.4f}" for m in self.per_threshold_map] + [f"{self.map:.4f}"])
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        lines.append(f"mAP@[0.5:0.95] = {self.map:.4f}   images={self.n_images} gt={self.n_gt} predictions={self.n_predictions}")
        return "\n".join(lines) + "\n"


def coco_map(predictions, gt, class_ids=None, thresholds=COCO_IOU_THRESHOLDS, config: dict | None = None) -> EvalReport:
    """COCO-style mAP: AP per class per IoU threshold, classes without gt excluded,
    mean over classes then over thresholds."""
    predictions, gt = list(predictions), list(gt)
    if not gt:
        raise EvaluationError("no ground truth boxes to evaluate against")
    gt_classes = sorted({g.class_id for g in gt})
    classes = gt_classes if class_ids is None else [c for c in class_ids if c in gt_classes]
    if not classes:
        raise EvaluationError("none of the requested classes has ground truth")
    per_class = {c: [average_precision(predictions, gt, c, t) for t in thresholds] for c in classes}
    per_threshold = [float(np.mean([per_class[c][t] for c in classes])) for t in range(len(thresholds))]
    images = {g.image_id for g in gt} | {p.image_id for p in predictions}
    return EvalReport(
        thresholds=tuple(thresholds),
        per_class_ap=per_class,
        map=float(np.mean(per_threshold)),
        n_images=len(images),
        n_gt=len(gt),
        n_predictions=len(predictions),
        config=dict(config or {}),
    )


@dataclass(frozen=True)
class NetScoreInputs:
    map: float
    mparams: float
    inference_seconds: float

    def __post_init__(self):
        if not 0 <= self.map <= 1:
            raise ContractError(f"NetScore: mAP must be in [0, 1], got {self.map}")
        if not self.mparams > 0 or not self.inference_seconds > 0:
            raise ContractError(
                f"NetScore: MParams and inference seconds must be positive, got {self.mparams}, {self.inference_seconds}"
            )


def netscore(inputs: NetScoreInputs | None = None, *, map=None, mparams=None, inference_seconds=None) -> float:
    """``(100 * mAP)^2 / (MParams * seconds)``: exponents 2, 1, 1 with measured time in place of MACs."""
    if inputs is None:
        inputs = NetScoreInputs(map, mparams, inference_seconds)
    return (inputs.map * 100) ** 2 / (inputs.mparams * inputs.inference_seconds)


# --- interchange ----------------------------------------------------------------------


def write_predictions(path, predictions) -> None:
    lines = [
        json.dumps({"image_id": p.image_id, "box": [float(v) for v in p.box], "class_id": int(p.class_id), "score": float(p.score)}, sort_keys=True)
        for p in predictions
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_predictions(path) -> list[Prediction]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            r = json.loads(line)
            out.append(Prediction(str(r["image_id"]), tuple(r["box"]), int(r["class_id"]), float(r["score"])))
    return out


def read_ground_truth(path) -> list[GroundTruth]:
    """Per-box lines (``image_id, box, class_id``) or per-image annotation lines."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        if "boxes" in r:
            out.extend(GroundTruth(str(r["image_id"]), tuple(row[:4]), int(row[4])) for row in r["boxes"])
        else:
            out.append(GroundTruth(str(r["image_id"]), tuple(r["box"]), int(r["class_id"])))
    return out
