import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbdet.backbone import (
    BaselineConfig,
    DcacConfig,
    backbone_forward,
    dcac_forward,
    freeze_stages,
    init_backbone,
    init_dcac,
)
from pcbdet.detector import init_detector, toy_baseline_config, toy_dcac_config
from pcbdet.errors import ConfigError
from pcbdet.nn import ParamStore, Tensor, count_params, grad_check, mul, precision, sum_all


def _dcac(channels, cfg=DcacConfig(), seed=0):
    p = ParamStore()
    init_dcac(p, np.random.default_rng(seed), "m", channels, cfg)
    return p


def test_dcac_zero_input_gives_zero_output():
    p = _dcac(8)
    out = dcac_forward(Tensor(np.zeros((1, 8, 8, 8))), p, DcacConfig(), prefix="m")
    assert np.all(out.data == 0)


def test_dcac_gate_strictly_inside_unit_interval():
    p = _dcac(8)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 8, 8, 8)) * 5)
    probe = {}
    out = dcac_forward(x, p, DcacConfig(), prefix="m", probe=probe)
    gate = probe["gate"].data
    assert out.shape == x.shape and gate.shape == x.shape
    assert gate.min() > 0 and gate.max() < 1


def test_dcac_gate_bounded_for_extreme_inputs():
    p = _dcac(8)
    for scale in (1e3, 1e6):
        probe = {}
        x = Tensor(np.random.default_rng(2).standard_normal((1, 8, 8, 8)) * scale)
        dcac_forward(x, p, DcacConfig(), prefix="m", probe=probe)
        assert 0 < probe["gate"].data.min() and probe["gate"].data.max() < 1


def test_dcac_indivisible_dims():
    p = _dcac(4)
    with pytest.raises(ConfigError, match="divisible"):
        dcac_forward(Tensor(np.zeros((1, 4, 6, 8))), p, DcacConfig(), prefix="m")


@settings(max_examples=25, deadline=None)
@given(
    c=st.integers(1, 12),
    f=st.integers(2, 3),
    k=st.integers(1, 2),
    ratio=st.sampled_from([0.25, 0.5, 1.0]),
    groups=st.integers(1, 4),
    pool=st.sampled_from(["max", "avg"]),
)
def test_dcac_shape_preserving(c, f, k, ratio, groups, pool):
    cfg = DcacConfig(condense_factor=f, embed_ratio=ratio, embed_groups=groups, condense_pool=pool)
    p = _dcac(c, cfg)
    side = f * f * k
    x = Tensor(np.random.default_rng(c).standard_normal((2, c, side, side)))
    assert dcac_forward(x, p, cfg, prefix="m").shape == x.shape


def test_dcac_gradient():
    worst = 0.0
    with precision(np.float64):
        for trial in range(20):
            rng = np.random.default_rng(trial)
            p = _dcac(8, seed=trial)
            p.add("x", rng.standard_normal((1, 8, 8, 8)))
            r = Tensor(rng.standard_normal((1, 8, 8, 8)))
            f = lambda: sum_all(mul(dcac_forward(p["x"], p, DcacConfig(), prefix="m"), r))
            worst = max(worst, grad_check(f, p, eps=1e-6, max_coords=32, seed=trial))
    assert worst < 1e-4


def test_dcac_stage_shapes_and_strides():
    cfg = DcacConfig(channels=(8, 16, 32, 64))
    p = init_backbone(cfg, np.random.default_rng(0))
    out = backbone_forward(Tensor(np.random.default_rng(1).random((2, 3, 64, 64))), p, cfg)
    assert out.indices == [1, 2, 3, 4]
    assert out.strides == [4, 8, 16, 32]
    assert [t.shape[2:] for t, _ in (out.get(i) for i in out.indices)] == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert [out.get(i)[0].shape[1] for i in out.indices] == [8, 16, 32, 64]


def test_baseline_seven_blocks():
    cfg = BaselineConfig()
    p = init_backbone(cfg, np.random.default_rng(0))
    out = backbone_forward(Tensor(np.random.default_rng(1).random((1, 3, 64, 64))), p, cfg)
    assert len(out) == 7
    assert all(a <= b for a, b in zip(out.strides, out.strides[1:]))
    assert out.strides[-4:] == [4, 8, 16, 32]
    for i in out.indices:
        t, s = out.get(i)
        assert t.shape[1] == cfg.channels[i - 1]
        assert t.shape[2:] == (64 // s, 64 // s)


@pytest.mark.parametrize("cfg", [DcacConfig(), BaselineConfig()], ids=["dcac", "baseline"])
def test_backbone_deterministic(cfg):
    p = init_backbone(cfg, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(3).random((1, 3, 64, 64)))
    a, b = backbone_forward(x, p, cfg), backbone_forward(x, p, cfg)
    for i in a.indices:
        assert a.get(i)[0].data.tobytes() == b.get(i)[0].data.tobytes()


def test_backbone_rejects_indivisible_input():
    cfg = DcacConfig()
    p = init_backbone(cfg, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        backbone_forward(Tensor(np.zeros((1, 3, 48, 64))), p, cfg)


def test_config_invariants():
    with pytest.raises(ConfigError):
        DcacConfig(channels=(8, 16, 32))
    with pytest.raises(ConfigError):
        DcacConfig(condense_factor=1)
    with pytest.raises(ConfigError):
        BaselineConfig(channels=(8,) * 6, blocks=(1,) * 6)


def _unit_of(name):
    part = name.split(".")[1]
    return int(part.replace("stage", "").replace("block", ""))


@pytest.mark.parametrize("kind,cfg,n", [("dcac", DcacConfig(), 2), ("baseline", BaselineConfig(), 4)])
def test_freeze_stages(kind, cfg, n):
    p = init_backbone(cfg, np.random.default_rng(0))
    freeze_stages(p, kind, n)
    for name in p.names():
        assert p.is_frozen(name) == (_unit_of(name) <= n), name
    assert 0 < count_params(p, trainable_only=True) < count_params(p)
    freeze_stages(p, kind, 0)
    assert count_params(p, trainable_only=True) == count_params(p)
    with pytest.raises(ConfigError):
        freeze_stages(p, kind, cfg.n_units + 1)


def test_toy_dcac_smaller_than_toy_baseline():
    dcac = count_params(init_detector(toy_dcac_config()))
    base = count_params(init_detector(toy_baseline_config()))
    assert dcac < 0.5 * base
