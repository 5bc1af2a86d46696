"""Run configuration, dataset resolution, the training loop and checkpoints."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pcbdet import config as cfgio
from pcbdet.data.augment import AugmentationPolicy
from pcbdet.data.dataset import Sample, build_split, iterate_batches, to_chw
from pcbdet.data.io import load_board_image, read_annotations, read_manifest
from pcbdet.data.patchify import split_dataset
from pcbdet.data.synthetic import SceneSpec, synthetic_boards
from pcbdet.detector.config import (
    DetectorConfig,
    efficientnet_det_config,
    pcbdet_config,
    toy_baseline_config,
    toy_dcac_config,
)
from pcbdet.detector.model import detect_batch, init_detector
from pcbdet.detector.train import LRSchedule, OptimizerState, train_step
from pcbdet.errors import ConfigError, EvaluationError, NumericError
from pcbdet.eval import EvalReport, GroundTruth, Prediction, coco_map
from pcbdet.nn.optim import AdamState
from pcbdet.nn.params import ParamStore
from pcbdet.nn.serialize import load_weights, save_weights

PRESETS = {
    "toy_dcac": toy_dcac_config,
    "toy_baseline": toy_baseline_config,
    "pcbdet": pcbdet_config,
    "efficientnet_det": efficientnet_det_config,
}


@dataclass(frozen=True)
class DataConfig:
    source: str = ""  # "synthetic" or a patches directory written by `pcbdet patchify`
    synthetic: SceneSpec = field(default_factory=SceneSpec)
    n_train_val_boards: int = 250
    n_test_boards: int = 50
    patch_size: int = 128
    patch_stride: int = 0  # 0 -> patch_size (no overlap)
    min_box_area_frac: float = 0.25
    val_frac: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    base_lr: float = 2e-3
    warmup_frac: float = 0.05
    min_lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy_dcac"
    detector: DetectorConfig = field(default_factory=toy_dcac_config)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0


def preset_detector(name: str) -> DetectorConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def run_config_from_flat(flat: dict) -> RunConfig:
    flat = dict(flat)
    preset = flat.pop("preset", "toy_dcac")
    base = RunConfig(preset=preset, detector=preset_detector(preset))
    run = cfgio.apply_overrides(base, flat)
    if not run.data.source:
        raise ConfigError("config field 'data.source' is required ('synthetic' or a patches directory)")
    if run.train.epochs < 0 or run.train.batch_size < 1 or run.train.base_lr < 0:
        raise ConfigError("train.epochs must be >= 0, train.batch_size >= 1 and train.base_lr >= 0")
    return run


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return run_config_from_flat(cfgio.loads(text, str(path)))


def dump_run_config(run: RunConfig) -> str:
    return cfgio.dumps(cfgio.to_flat(run))


# --- data -------------------------------------------------------------------------------


@dataclass
class Splits:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    manifest_rows: list[tuple[str, str]]  # (patch image id, split)

    def get(self, name: str) -> list[Sample]:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def load_splits(run: RunConfig) -> Splits:
    data = run.data
    if data.source == "synthetic":
        spec = dataclasses.replace(data.synthetic, num_classes=run.detector.num_classes)
        boards = synthetic_boards(data.n_train_val_boards, data.n_test_boards, spec, seed=run.seed)
        manifest = split_dataset(
            boards, data.val_frac, run.seed, data.patch_size, data.patch_stride or None, data.min_box_area_frac
        )
        splits = {s: build_split(boards, manifest, s) for s in ("train", "val", "test")}
        rows = [(s.image_id, name) for name in ("train", "val", "test") for s in splits[name]]
        return Splits(splits["train"], splits["val"], splits["test"], rows)
    return load_patch_dir(data.source, run.detector.num_classes)


def load_patch_dir(root, num_classes: int | None = None) -> Splits:
    """Read a directory produced by ``pcbdet patchify``."""
    root = Path(root)
    ann, man = root / "patches.jsonl", root / "manifest.tsv"
    if not ann.exists() or not man.exists():
        raise ConfigError(f"{root} is not a patch directory (needs patches.jsonl and manifest.tsv)")
    records = {b.board_id: b for b in read_annotations(ann, root / "patches", num_classes)}
    out: dict[str, list[Sample]] = {"train": [], "val": [], "test": []}
    rows = []
    try:
        rows_in = read_manifest(man)
    except ValueError as exc:
        raise ConfigError(f"{man}: malformed manifest ({exc})") from None
    for pid, board_id, x0, y0, size, split in rows_in:
        image_id = f"{board_id}_x{x0}_y{y0}_s{size}"
        rec = records.get(image_id)
        if rec is None:
            raise ConfigError(f"{man}: patch {pid} has no annotation record {image_id}")
        img = load_board_image(rec).astype(np.float32) / 255.0
        out[split].append(Sample(image_id, img, rec.boxes, rec.classes))
        rows.append((image_id, split))
    return Splits(out["train"], out["val"], out["test"], rows)


# --- evaluation -----------------------------------------------------------------------


def evaluate(
    params: ParamStore, cfg: DetectorConfig, samples: list[Sample], batch_size: int = 16, extra: dict | None = None
) -> EvalReport:
    if not samples:
        raise EvaluationError("cannot evaluate an empty split")
    preds, gts = [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        dets = detect_batch(np.stack([to_chw(s.image) for s in chunk]), params, cfg)
        for s, ds in zip(chunk, dets):
            preds.extend(Prediction(s.image_id, d.box, d.class_id, d.score) for d in ds)
            gts.extend(GroundTruth(s.image_id, tuple(float(v) for v in b), int(c)) for b, c in zip(s.boxes, s.classes))
    report_cfg = {
        "score_thresh": cfg.score_thresh,
        "nms_iou": cfg.nms_iou,
        "topk_per_level": cfg.topk_per_level,
        "max_detections": cfg.max_detections,
        "pos_thresh": cfg.pos_thresh,
        "neg_thresh": cfg.neg_thresh,
        "focal_alpha": cfg.focal_alpha,
        "focal_gamma": cfg.focal_gamma,
        "smooth_l1_beta": cfg.smooth_l1_beta,
        "anchor_scales": list(cfg.anchors.scales),
        "anchor_ratios": list(cfg.anchors.aspect_ratios),
        **(extra or {}),
    }
    return coco_map(preds, gts, class_ids=range(cfg.num_classes), config=report_cfg)


# --- checkpoints ---------------------------------------------------------------------------


def save_checkpoint(directory, params: ParamStore, run: RunConfig) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run.cfg").write_text(dump_run_config(run))
    return save_weights(params, directory / "weights.tsv", directory / "weights.bin")


def load_checkpoint(directory) -> tuple[RunConfig, ParamStore]:
    directory = Path(directory)
    if not (directory / "run.cfg").exists():
        raise ConfigError(f"{directory} is not a checkpoint directory")
    run = load_run_config(directory / "run.cfg")
    expected = init_detector(run.detector, seed=run.seed)
    params = load_weights(directory / "weights.tsv", directory / "weights.bin", expected)
    return run, params


# --- training ------------------------------------------------------------------------------


class _NullLog:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def train_run(run: RunConfig, out_dir, splits: Splits | None = None, progress=None) -> dict:
    """Full training run writing config, manifest, log, checkpoints and run manifest to ``out_dir``.

    Returns the run manifest. Log records are one JSON object per epoch.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_text = dump_run_config(run)
    (out / "config.cfg").write_text(config_text)
    splits = load_splits(run) if splits is None else splits
    (out / "split_manifest.tsv").write_text("".join(f"{pid}\t{split}\n" for pid, split in splits.manifest_rows))
    if not splits.train:
        raise ConfigError("training split is empty")

    cfg = run.detector
    params = init_detector(cfg, seed=run.seed)
    steps_per_epoch = -(-len(splits.train) // run.train.batch_size)
    schedule = LRSchedule(run.train.base_lr, max(1, run.train.epochs * steps_per_epoch), run.train.warmup_frac, run.train.min_lr)
    state = OptimizerState(schedule, AdamState(run.train.beta1, run.train.beta2, run.train.adam_eps))
    hashes = {"init": save_checkpoint(out / "checkpoints" / "init", params, run)}

    best_map, best_epoch = -1.0, None
    log_path = out / "train_log.jsonl"
    with (log_path.open("w") if run.train.epochs > 0 else _NullLog()) as logf:
        for epoch in range(run.train.epochs):
            sums = np.zeros(3)
            n_pos = 0
            n_batches = 0
            lr = schedule(state.step)
            for batch in iterate_batches(splits.train, run.train.batch_size, run.seed, epoch, run.augment):
                try:
                    lb = train_step(batch, params, state, cfg)
                except NumericError as exc:
                    # train_step fails before touching the weights, so these are the last good ones
                    hashes["last"] = save_checkpoint(out / "checkpoints" / "last", params, run)
                    _write_manifest(out, run, config_text, schedule, state, splits, best_epoch, best_map, hashes,
                                    aborted={"epoch": epoch + 1, "step": state.step, "error": str(exc)})
                    raise
                sums += (lb.focal, lb.box_reg, lb.total)
                n_pos += lb.n_positive_anchors
                n_batches += 1
            record = {
                "epoch": epoch + 1,
                "steps": state.step,
                "lr_start": lr,
                "focal": float(sums[0] / n_batches),
                "box_reg": float(sums[1] / n_batches),
                "total": float(sums[2] / n_batches),
                "n_positive_anchors": n_pos,
            }
            if splits.val:
                report = evaluate(params, cfg, splits.val)
                record["val_map"] = report.map
                record["val_map50"] = report.map50
                if report.map > best_map:
                    best_map, best_epoch = report.map, epoch + 1
                    hashes["best"] = save_checkpoint(out / "checkpoints" / "best", params, run)
            logf.write(json.dumps(record, sort_keys=True) + "\n")
            logf.flush()
            if progress is not None:
                progress(record)
    if run.train.epochs > 0:
        hashes["last"] = save_checkpoint(out / "checkpoints" / "last", params, run)
    return _write_manifest(out, run, config_text, schedule, state, splits, best_epoch, best_map, hashes)


def _write_manifest(out, run, config_text, schedule, state, splits, best_epoch, best_map, hashes, aborted=None) -> dict:
    manifest = {
        "seed": run.seed,
        "preset": run.preset,
        "config_sha256": cfgio.content_hash(config_text),
        "config": cfgio.to_flat(run),  # enough to re-execute the run: `pcbdet train --config run_manifest.json`
        "scheduler": schedule.describe(),
        "optimizer": f"Adam(beta1={run.train.beta1}, beta2={run.train.beta2}, eps={run.train.adam_eps})",
        "epochs": run.train.epochs,
        "steps": state.step,
        "n_train": len(splits.train),
        "n_val": len(splits.val),
        "n_test": len(splits.test),
        "best_epoch": best_epoch,
        "best_val_map": best_map if best_epoch is not None else None,
        "weights_sha256": dict(hashes),
        "aborted": aborted,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
