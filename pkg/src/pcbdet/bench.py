"""Per-forward-pass latency measurement and side-by-side model comparison."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from pcbdet.errors import ConfigError, ContractError
from pcbdet.eval import EvalReport, netscore

MIN_ITERS = 10
DEFAULT_WARMUP = 10
DEFAULT_ITERS = 100


class BenchmarkError(RuntimeError):
    """A model raised during a benchmark; ``phase`` and ``iteration`` say where."""

    def __init__(self, iteration: int, phase: str, cause: BaseException):
        super().__init__(f"model failed at {phase} iteration {iteration}: {cause!r}")
        self.iteration = iteration
        self.phase = phase


def host_descriptor() -> str:
    u = platform.uname()
    return f"{u.system} {u.release} {u.machine}; python {platform.python_version()}; numpy {np.__version__}; cpus={os.cpu_count()}"


@dataclass(frozen=True)
class LatencySummary:
    median: float
    mean: float
    p5: float
    p95: float
    min: float
    max: float


def summarize(latencies) -> LatencySummary:
    x = np.asarray(latencies, dtype=np.float64)
    if x.size == 0:
        raise ContractError("cannot summarise an empty latency sample")
    p5, med, p95 = np.percentile(x, [5, 50, 95])
    return LatencySummary(float(med), float(x.mean()), float(p5), float(p95), float(x.min()), float(x.max()))


@dataclass
class BenchReport:
    name: str
    input_shape: tuple[int, ...]
    warmup_iters: int
    timed_iters: int
    latencies: list[float]
    mparams: float
    trainable_mparams: float
    host: str = field(default_factory=host_descriptor)
    output_digest: str = ""

    def __post_init__(self):
        if self.timed_iters < MIN_ITERS or len(self.latencies) != self.timed_iters:
            raise ContractError(f"a BenchReport needs >= {MIN_ITERS} timed iterations, one latency each")
        if not self.mparams > 0:
            raise ContractError(f"BenchReport.mparams must be positive, got {self.mparams}")

    @property
    def summary(self) -> LatencySummary:
        return summarize(self.latencies)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["summary"] = asdict(self.summary)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _digest(out) -> str:
    h = hashlib.sha256()
    parts = out if isinstance(out, (tuple, list)) else (out,)
    for p in parts:
        a = np.ascontiguousarray(getattr(p, "data", p))
        h.update(str(a.dtype).encode() + str(a.shape).encode() + a.tobytes())
    return h.hexdigest()


def time_inference(
    model: Callable,
    inputs: np.ndarray,
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
    clock: Callable[[], float] = time.perf_counter,
    *,
    name: str = "model",
    mparams: float = 1.0,
    trainable_mparams: float | None = None,
) -> BenchReport:
    """Time ``iters`` forward passes of ``model(inputs)`` after ``warmup`` untimed ones.

    ``inputs`` must have batch size 1. BLAS pools are limited to one thread
    for the whole call; the harness refuses to start if other Python threads
    are alive, since they would share the core with the timed region.
    """
    if iters < MIN_ITERS:
        raise ConfigError(f"iters must be >= {MIN_ITERS}, got {iters}")
    if warmup < 1:
        raise ConfigError(f"warmup must be >= 1, got {warmup}")
    shape = tuple(np.shape(inputs))
    if not shape or shape[0] != 1:
        raise ConfigError(f"benchmarks run at batch size 1, got input shape {shape}")
    if threading.active_count() > 1:
        raise ConfigError(f"refusing to time with {threading.active_count() - 1} extra thread(s) alive")

    latencies = []
    out = None
    with threadpool_limits(limits=1):
        for i in range(warmup):
            try:
                model(inputs)
            except Exception as exc:
                raise BenchmarkError(i, "warmup", exc) from exc
        for i in range(iters):
            t0 = clock()
            try:
                out = model(inputs)
            except Exception as exc:
                raise BenchmarkError(i, "timed", exc) from exc
            latencies.append(clock() - t0)
    return BenchReport(
        name=name,
        input_shape=shape,
        warmup_iters=warmup,
        timed_iters=iters,
        latencies=latencies,
        mparams=mparams,
        trainable_mparams=mparams if trainable_mparams is None else trainable_mparams,
        output_digest=_digest(out) if out is not None else "",
    )


def detector_model(params, cfg) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Raw forward pass (class logits, box offsets) of a detector, as a benchmark target."""
    from pcbdet.detector.model import forward
    from pcbdet.nn.tensor import Tensor, inference_mode

    def run(x: np.ndarray):
        with inference_mode():
            cls, reg = forward(Tensor(x), params, cfg)
        return cls.data, reg.data

    return run


@dataclass
class Comparison:
    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def to_table(self) -> str:
        cols = ["model", "map", "mparams", "median_ms", "latency_ratio", "netscore"]
        cells = [cols] + [
            [
                r["model"],
                f"{r['map']:.4f}",
                f"{r['mparams']:.4f}",
                f"{r['median_seconds'] * 1e3:.3f}",
                f"{r['latency_ratio']:.3f}x",
                f"{r['netscore']:.4f}",
            ]
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def compare_models(reports: list[BenchReport], eval_reports: list[EvalReport]) -> Comparison:
    """Per-model mAP, MParams, median latency, latency relative to the first model and NetScore.

    ``latency_ratio`` is ``median_i / median_0``: 2.0 means twice as slow as
    the first model. Eval reports pair with bench reports by position; when an
    eval report records a ``model`` name it must match.
    """
    if not reports or len(reports) != len(eval_reports):
        raise ConfigError(f"need matched bench/eval reports, got {len(reports)} and {len(eval_reports)}")
    base = reports[0].summary.median
    rows = []
    for rep, ev in zip(reports, eval_reports):
        named = ev.config.get("model")
        if named is not None and named != rep.name:
            raise ConfigError(f"eval report for {named!r} paired with bench report {rep.name!r}")
        med = rep.summary.median
        rows.append(
            {
                "model": rep.name,
                "map": ev.map,
                "mparams": rep.mparams,
                "trainable_mparams": rep.trainable_mparams,
                "median_seconds": med,
                "latency_ratio": med / base,
                "netscore": netscore(map=ev.map, mparams=rep.mparams, inference_seconds=med),
            }
        )
    return Comparison(rows)

