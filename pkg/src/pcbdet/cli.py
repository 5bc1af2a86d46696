"""Command line: ``pcbdet {patchify,synth,train,eval,predict,bench}``.

Exit codes: 0 success, 1 user or configuration error, 2 runtime or numeric
error. Commands that produce a directory build it under a temporary sibling
name and rename it into place only on success, except ``train``, which
keeps checkpoints written before a failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from pcbdet import config as cfgio
from pcbdet.bench import DEFAULT_ITERS, DEFAULT_WARMUP, BenchmarkError, compare_models, detector_model, time_inference
from pcbdet.data.dataset import to_chw
from pcbdet.data.io import annotation_line, load_board_image, patch_image_id, read_annotations, read_png, write_annotations, write_manifest, write_png
from pcbdet.data.patchify import crop_patch, split_dataset
from pcbdet.data.synthetic import SceneSpec, synthetic_boards
from pcbdet.detector.model import detect, init_detector
from pcbdet.errors import ConfigError, ContractError, EvaluationError, NumericError
from pcbdet.nn.params import mparams
from pcbdet.runner import (
    RunConfig,
    evaluate,
    load_checkpoint,
    load_splits,
    preset_detector,
    run_config_from_flat,
    train_run,
)

USER_ERROR, RUNTIME_ERROR = 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are user errors, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(USER_ERROR, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def staged_dir(out):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir()
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required for this command")
    return Path(args.out)


# --- commands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SceneSpec(num_classes=args.num_classes, size=args.size, imbalance=args.imbalance)
    boards = synthetic_boards(args.n_train_val, args.n_test, spec, seed=_seed(args), n_excluded=args.n_excluded)
    with staged_dir(_require_out(args)) as tmp:
        (tmp / "boards").mkdir()
        for b in boards:
            write_png(tmp / "boards" / f"{b.board_id}.png", b.image)
        write_annotations(tmp / "annotations.jsonl", boards)
    print(f"wrote {len(boards)} boards to {args.out}")
    return 0


def cmd_patchify(args) -> int:
    boards = read_annotations(args.annotations, args.boards, args.num_classes)
    manifest = split_dataset(boards, args.val_frac, _seed(args), args.patch_size, args.stride, args.min_box_area_frac)
    by_id = {b.board_id: b for b in boards}
    with staged_dir(_require_out(args)) as tmp:
        (tmp / "patches").mkdir()
        lines = []
        images: dict[str, np.ndarray] = {}
        for p in manifest.patches:
            if p.board_id not in images:
                images = {p.board_id: load_board_image(by_id[p.board_id])}  # patches arrive board by board
            write_png(tmp / "patches" / f"{patch_image_id(p)}.png", crop_patch(images[p.board_id], p))
            lines.append(annotation_line(patch_image_id(p), p.size, p.size, p.boxes, p.classes))
        (tmp / "patches.jsonl").write_text("".join(line + "\n" for line in lines))
        write_manifest(tmp / "manifest.tsv", manifest)
        per_board: dict[str, int] = {}
        for p in manifest.patches:
            per_board[p.board_id] = per_board.get(p.board_id, 0) + 1
        summary = {
            "n_boards": len(boards),
            "n_patches": len(manifest.patches),
            "n_boxes": int(sum(len(p.boxes) for p in manifest.patches)),
            "split_counts": manifest.counts(),
            "patches_per_board": per_board,
            "patch_size": args.patch_size,
            "stride": args.stride or args.patch_size,
            "val_frac": args.val_frac,
            "seed": _seed(args),
        }
        (tmp / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: summary[k] for k in ("n_patches", "n_boxes", "split_counts")}, sort_keys=True))
    return 0


def _run_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for train")
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":  # a run manifest from an earlier run
        try:
            flat = dict(json.loads(text)["config"])
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path}: not a run manifest with a 'config' entry") from None
    else:
        flat = cfgio.loads(text, str(path))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        flat.update(cfgio.loads(f"{key} = {value}", "--set"))
    if args.seed is not None:
        flat["seed"] = args.seed
    return run_config_from_flat(flat)


def cmd_train(args) -> int:
    run = _run_config(args)
    out = _require_out(args)
    splits = load_splits(run)  # resolve data before anything is written
    report = lambda r: print(json.dumps(r, sort_keys=True), flush=True)
    manifest = train_run(run, out, splits=splits, progress=None if args.quiet else report)
    print(f"best epoch {manifest['best_epoch']} val mAP {manifest['best_val_map']}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    if args.split == "train" and not args.allow_train:
        raise ConfigError("evaluating the train split needs --allow-train (holdout hygiene guard)")
    run, params = load_checkpoint(args.checkpoint)
    if args.data:
        run = dataclasses.replace(run, data=dataclasses.replace(run.data, source=args.data))
    samples = load_splits(run).get(args.split)
    report = evaluate(params, run.detector, samples, extra={"split": args.split})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.split}.json").write_text(report.to_json() + "\n")
        (out / f"eval_{args.split}.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    return 0


def cmd_predict(args) -> int:
    run, params = load_checkpoint(args.checkpoint)
    try:
        image = read_png(args.image)
    except OSError as exc:
        raise ConfigError(f"cannot read image {args.image}: {exc}") from None
    dets = detect(to_chw(image.astype(np.float32) / 255.0), params, run.detector)
    text = "".join(json.dumps(d.to_dict(), sort_keys=True) + "\n" for d in dets)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{Path(args.image).stem}.detections.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _checkpoint_name(path: Path) -> str:
    # <run>/checkpoints/best -> <run>/best
    if path.parent.name == "checkpoints":
        return f"{path.parent.parent.name}/{path.name}"
    return path.name


def _bench_models(args) -> list[tuple[str, RunConfig, object]]:
    models = []
    for ckpt in args.checkpoint or []:
        run, params = load_checkpoint(ckpt)
        models.append((_checkpoint_name(Path(ckpt)), run, params))
    for name in args.preset or []:
        cfg = preset_detector(name)
        seed = _seed(args)
        run = RunConfig(preset=name, detector=cfg, seed=seed, data=dataclasses.replace(RunConfig().data, source="synthetic"))
        models.append((name, run, init_detector(cfg, seed)))
    if not models:
        raise ConfigError("bench needs at least one --checkpoint or --preset")
    names = [m[0] for m in models]
    return [(f"{n}#{i}" if names.count(n) > 1 else n, r, p) for i, (n, r, p) in enumerate(models)]


def cmd_bench(args) -> int:
    if args.iters < 10:
        raise ConfigError(f"--iters must be >= 10, got {args.iters}")
    models = _bench_models(args)
    size = args.input_size
    x = np.random.default_rng(0).random((1, 3, size, size), dtype=np.float32)
    out = _require_out(args)
    reports, evals = [], []
    for name, run, params in models:
        if size % run.detector.max_stride:
            raise ConfigError(f"--input-size {size} must be divisible by {run.detector.max_stride} for {name}")
        reports.append(
            time_inference(
                detector_model(params, run.detector),
                x,
                warmup=args.warmup,
                iters=args.iters,
                name=name,
                mparams=mparams(params),
                trainable_mparams=mparams(params, trainable_only=True),
            )
        )
        evals.append(evaluate(params, run.detector, load_splits(run).get(args.split), extra={"model": name, "split": args.split}))
    comparison = compare_models(reports, evals)
    with staged_dir(out) as tmp:
        for rep, ev in zip(reports, evals):
            stem = rep.name.replace("/", "_").replace("#", "_")
            (tmp / f"bench_{stem}.json").write_text(rep.to_json() + "\n")
            (tmp / f"eval_{stem}.json").write_text(ev.to_json() + "\n")
        (tmp / "comparison.txt").write_text(comparison.to_table())
        (tmp / "comparison.csv").write_text(comparison.to_csv())
    print(comparison.to_table(), end="")
    return 0


# --- parser ------------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="run config file (flat key = value), or a run_manifest.json to re-execute")
    parser.add_argument("--seed", type=int, default=d(None), help="override the seed")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--threads", type=int, default=d(None), help="BLAS threads (bench always uses 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcbdet", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic board set")
    p.add_argument("--n-train-val", type=int, default=250)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--n-excluded", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--imbalance", type=float, default=10.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("patchify", help="cut boards into square patches and split them")
    p.add_argument("--boards", required=True, help="directory of <image_id>.png boards")
    p.add_argument("--annotations", required=True, help="annotation JSONL file")
    p.add_argument("--patch-size", type=int, default=512)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--val-frac", type=float, default=0.125)
    p.add_argument("--min-box-area-frac", type=float, default=0.25)
    p.add_argument("--num-classes", type=int, default=None)
    p.set_defaults(func=cmd_patchify)

    p = sub.add_parser("train", help="train a detector from a run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="COCO mAP of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--data", default=None, help="override the checkpoint's data source")
    p.add_argument("--allow-train", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="detections for one image as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="latency, parameters, mAP and NetScore comparison")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--preset", action="append")
    p.add_argument("--input-size", type=int, default=128)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    p.add_argument("--split", default="val", choices=("val", "test"))
    p.set_defaults(func=cmd_bench)

    for p in sub.choices.values():
        _global_flags(p, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext():
            return args.func(args)
    except (ConfigError, ContractError, EvaluationError) as exc:
        print(f"pcbdet {args.command}: error: {exc}", file=sys.stderr)
        return USER_ERROR
    except (NumericError, BenchmarkError, FloatingPointError) as exc:
        print(f"pcbdet {args.command}: runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
