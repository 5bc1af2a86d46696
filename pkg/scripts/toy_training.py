"""Train the toy DC-AC and toy baseline detectors on the synthetic set and tabulate validation mAP.

    python3 scripts/toy_training.py --out runs/toy --epochs 30

Each model gets a full run directory (config, log, checkpoints, manifest);
the per-epoch table is printed at the end and written to ``summary.tsv``.
"""

import argparse
import json
import time
from pathlib import Path

from pcbdet.runner import run_config_from_flat, train_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--presets", nargs="+", default=["toy_dcac", "toy_baseline"])
    args = ap.parse_args()

    out = Path(args.out)
    logs = {}
    for preset in args.presets:
        run = run_config_from_flat(
            {"preset": preset, "data.source": "synthetic", "train.epochs": args.epochs, "seed": args.seed}
        )
        t0 = time.perf_counter()
        manifest = train_run(run, out / preset, progress=lambda r, p=preset: print(p, json.dumps(r), flush=True))
        print(f"{preset}: best val mAP {manifest['best_val_map']:.4f} at epoch {manifest['best_epoch']}, "
              f"{time.perf_counter() - t0:.0f}s")
        logs[preset] = [json.loads(line) for line in (out / preset / "train_log.jsonl").read_text().splitlines()]

    header = ["epoch"] + [f"{p}_{k}" for p in args.presets for k in ("total", "val_map", "val_map50")]
    lines = ["\t".join(header)]
    for i in range(args.epochs):
        row = [str(i + 1)] + [f"{logs[p][i][k]:.4f}" for p in args.presets for k in ("total", "val_map", "val_map50")]
        lines.append("\t".join(row))
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
