"""Parameter counts and single-image latency of every shipped detector preset.

    python3 scripts/compare_backbones.py --iters 20

Weights are freshly initialised, so only size and speed are compared here;
use ``pcbdet bench`` with trained checkpoints for mAP and NetScore.
"""

import argparse

import numpy as np

from pcbdet.bench import detector_model, time_inference
from pcbdet.detector import describe, init_detector
from pcbdet.nn.params import mparams
from pcbdet.runner import PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=sorted(PRESETS))
    ap.add_argument("--input-size", type=int, default=None, help="defaults to each preset's input_size")
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args()

    print(f"{'preset':<18}{'backbone':<10}{'fpn_inputs':<14}{'MParams':>9}{'trainable':>11}{'input':>7}{'median_ms':>11}")
    for name in args.presets:
        cfg = PRESETS[name]()
        params = init_detector(cfg)
        size = args.input_size or cfg.input_size
        x = np.random.default_rng(0).random((1, 3, size, size), dtype=np.float32)
        rep = time_inference(detector_model(params, cfg), x, warmup=args.warmup, iters=args.iters, name=name,
                             mparams=mparams(params))
        meta = describe(cfg)
        print(f"{name:<18}{meta['backbone']:<10}{str(meta['fpn_inputs']):<14}{mparams(params):>9.4f}"
              f"{mparams(params, trainable_only=True):>11.4f}{size:>7}{rep.summary.median * 1e3:>11.2f}")


if __name__ == "__main__":
    main()
