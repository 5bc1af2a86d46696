import json
import time

import numpy as np
import pytest

from pcbdet.bench import (
    BenchmarkError,
    BenchReport,
    compare_models,
    detector_model,
    summarize,
    time_inference,
)
from pcbdet.detector import init_detector, toy_dcac_config
from pcbdet.errors import ConfigError, ContractError
from pcbdet.eval import EvalReport, GroundTruth, Prediction, coco_map, netscore

X = np.zeros((1, 3, 8, 8), dtype=np.float32)


def sleeper(seconds):
    return lambda x: time.sleep(seconds)


def fake_clock(step):
    t = [0.0]

    def clock():
        t[0] += step
        return t[0]

    return clock


def test_sleep_stub_median():
    rep = time_inference(sleeper(0.010), X, warmup=10, iters=100)
    assert 0.009 <= rep.summary.median <= 0.015
    assert rep.timed_iters == 100 and len(rep.latencies) == 100


def test_iteration_count_validated():
    for iters in (0, 9):
        with pytest.raises(ConfigError):
            time_inference(lambda x: x, X, iters=iters)
    with pytest.raises(ConfigError):
        time_inference(lambda x: x, X, warmup=0)
    with pytest.raises(ConfigError):
        time_inference(lambda x: x, np.zeros((2, 3, 8, 8)))


def test_failure_reports_iteration():
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        if calls["n"] == 10 + 7:  # 10 warmup calls, then fail on timed iteration 6
            raise RuntimeError("boom")

    with pytest.raises(BenchmarkError) as info:
        time_inference(flaky, X, warmup=10, iters=20)
    assert info.value.iteration == 6 and info.value.phase == "timed"


def test_warmup_excluded_and_summary_recomputes():
    seen = []
    rep = time_inference(lambda x: seen.append(1), X, warmup=5, iters=12, clock=fake_clock(0.5))
    assert len(seen) == 17 and len(rep.latencies) == 12
    assert all(v == 0.5 for v in rep.latencies)
    d = json.loads(rep.to_json())
    assert d["summary"]["median"] == float(np.median(d["latencies"]))
    s = summarize([3.0, 1.0, 2.0])
    assert (s.median, s.min, s.max) == (2.0, 1.0, 3.0)
    with pytest.raises(ContractError):
        summarize([])


def test_report_contract():
    with pytest.raises(ContractError):
        BenchReport("m", (1, 3, 8, 8), 1, 5, [0.1] * 5, 1.0, 1.0)
    with pytest.raises(ContractError):
        BenchReport("m", (1, 3, 8, 8), 1, 10, [0.1] * 10, 0.0, 0.0)


def test_detector_output_digest_stable():
    cfg = toy_dcac_config()
    params = init_detector(cfg, seed=0)
    x = np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)
    a = time_inference(detector_model(params, cfg), x, warmup=1, iters=10)
    b = time_inference(detector_model(params, cfg), x, warmup=1, iters=10)
    assert a.output_digest and a.output_digest == b.output_digest


def _report(name, seconds, mp=2.0):
    return BenchReport(name, (1, 3, 8, 8), 1, 10, [seconds] * 10, mp, mp)


def _eval(value, name=None):
    gts = [GroundTruth("a", (0, 0, 10, 10), 0)]
    preds = [Prediction("a", (0, 0, 10, 10), 0, 1.0)] if value else []
    return coco_map(preds, gts, config={} if name is None else {"model": name})


def test_compare_self_and_ratio():
    c = compare_models([_report("a", 0.1)], [_eval(True)])
    assert c.rows[0]["latency_ratio"] == 1.0
    c = compare_models([_report("a", 0.1), _report("b", 0.2)], [_eval(True), _eval(True)])
    assert c.rows[1]["latency_ratio"] == 2.0
    for r in c.rows:
        assert r["netscore"] == netscore(map=r["map"], mparams=r["mparams"], inference_seconds=r["median_seconds"])
    assert "latency_ratio" in c.to_table() and c.to_csv().splitlines()[0].startswith("model,")


def test_compare_csv_full_precision():
    c = compare_models([_report("a", 0.0123456789012345, mp=0.43863)], [_eval(True)])
    row = c.to_csv().splitlines()[1].split(",")
    header = c.to_csv().splitlines()[0].split(",")
    assert float(row[header.index("netscore")]) == c.rows[0]["netscore"]


def test_compare_mismatch():
    with pytest.raises(ConfigError):
        compare_models([_report("a", 0.1)], [])
    with pytest.raises(ConfigError):
        compare_models([_report("a", 0.1)], [_eval(True, name="b")])
    assert isinstance(_eval(False), EvalReport)
