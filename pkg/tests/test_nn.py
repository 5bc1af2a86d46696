import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcbdet.errors import ConfigError, NumericError
from pcbdet.nn import (
    AdamState,
    ParamStore,
    Tensor,
    adam_step,
    activation,
    add,
    channel_affine,
    concat,
    conv2d,
    count_params,
    grad_check,
    head_flatten,
    mean_hw,
    mul,
    pool2d,
    precision,
    sum_all,
    upsample_nearest,
)
from pcbdet.nn import functional as F


def naive_conv(x, w, b, stride, pad, groups):
    n, c, h, wd = x.shape
    co, cig, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    cog = co // groups
    for b_ in range(n):
        for o in range(co):
            g = o // cog
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else b[o]
                    for ci in range(cig):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[b_, g * cig + ci, i * stride + ki, j * stride + kj] * w[o, ci, ki, kj]
                    out[b_, o, i, j] = acc
    return out


def naive_pool(x, kind, k, s):
    n, c, h, w = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((n, c, oh, ow))
    for a in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    window = x[a, ch, i * s : i * s + k, j * s : j * s + k]
                    out[a, ch, i, j] = window.max() if kind == "max" else window.mean()
    return out


# --- conv2d -----------------------------------------------------------------


def test_conv_zero_input():
    w = Tensor(np.random.default_rng(0).standard_normal((2, 1, 3, 3)))
    out = conv2d(Tensor(np.zeros((1, 1, 3, 3))), w, Tensor(np.zeros(2)), padding=1)
    assert np.all(out.data == 0)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((1, 1, 3, 3)).astype(np.float32)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    assert out.shape == (1, 3, 3, 3)
    np.testing.assert_allclose(out.data, naive_conv(x, w, b, 2, 1, 1), atol=1e-5)


@pytest.mark.parametrize(
    "c_in,c_out,k,stride,pad,groups",
    [(4, 4, 3, 1, 1, 4), (4, 8, 1, 1, 0, 2), (6, 6, 3, 2, 1, 3), (3, 5, 3, 1, 0, 1), (4, 2, 1, 2, 0, 1)],
)
def test_conv_variants_match_oracle(c_in, c_out, k, stride, pad, groups):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, c_in, 6, 7))
    w = rng.standard_normal((c_out, c_in // groups, k, k))
    with precision(np.float64):
        out = conv2d(Tensor(x), Tensor(w), None, stride, pad, groups)
    np.testing.assert_allclose(out.data, naive_conv(x, w, None, stride, pad, groups), atol=1e-10)


def test_conv_shape_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ConfigError, match="input channels"):
        conv2d(x, Tensor(np.zeros((2, 2, 3, 3))))
    with pytest.raises(ConfigError, match="groups"):
        conv2d(x, Tensor(np.zeros((2, 1, 3, 3))), groups=2)
    with pytest.raises(ConfigError, match="does not fit"):
        conv2d(x, Tensor(np.zeros((2, 3, 5, 5))))


def test_conv_nonfinite_raises():
    x = Tensor(np.full((1, 1, 2, 2), np.inf))
    with pytest.raises(NumericError):
        conv2d(x, Tensor(np.ones((1, 1, 1, 1))))


def test_conv_bit_identical_repeats():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 8, 16, 16)))
    w = Tensor(rng.standard_normal((16, 8, 3, 3)))
    a = conv2d(x, w, stride=2, padding=1).data
    b = conv2d(x, w, stride=2, padding=1).data
    assert a.tobytes() == b.tobytes()


# --- pooling / upsampling / activations ------------------------------------------


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_constant(kind):
    out = pool2d(Tensor(np.full((1, 2, 6, 6), 3.5)), kind, 3, 2)
    assert np.all(out.data == 3.5)


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_identity(kind):
    x = np.random.default_rng(5).standard_normal((1, 2, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(pool2d(Tensor(x), kind, 1, 1).data, x)


@pytest.mark.parametrize("kind,k,s", [("max", 2, 2), ("avg", 2, 2), ("max", 3, 1), ("avg", 3, 2)])
def test_pool_matches_window_scan(kind, k, s):
    x = np.random.default_rng(6).standard_normal((1, 1, 4, 4) if k == 2 else (2, 3, 7, 6))
    with precision(np.float64):
        out = pool2d(Tensor(x), kind, k, s)
    np.testing.assert_allclose(out.data, naive_pool(x, kind, k, s), atol=1e-12)


def test_pool_window_too_large():
    with pytest.raises(ConfigError):
        pool2d(Tensor(np.zeros((1, 1, 2, 2))), "max", 3, 1)


def test_upsample_identity_and_broadcast():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    assert upsample_nearest(x, 1) is x
    out = upsample_nearest(Tensor(np.full((1, 1, 1, 1), 2.5)), 3)
    assert out.shape == (1, 1, 3, 3) and np.all(out.data == 2.5)
    with pytest.raises(ConfigError):
        upsample_nearest(x, 0)


def test_upsample_then_avgpool_roundtrip():
    x = np.random.default_rng(7).standard_normal((2, 3, 4, 5))
    with precision(np.float64):
        back = pool2d(upsample_nearest(Tensor(x), 2), "avg", 2, 2)
    np.testing.assert_array_equal(back.data, x)


def test_activation_fixed_points():
    assert activation(Tensor(np.zeros(1)), "relu").data[0] == 0
    assert activation(Tensor(np.zeros(1)), "sigmoid").data[0] == 0.5
    assert abs(activation(Tensor(np.array([2.0])), "sigmoid").data[0] - 0.880797) < 1e-5


def test_sigmoid_symmetry():
    x = np.random.default_rng(8).standard_normal(100) * 4
    s = activation(Tensor(x), "sigmoid").data + activation(Tensor(-x), "sigmoid").data
    np.testing.assert_allclose(s, 1.0, atol=1e-6)


@given(st.floats(-1e30, 1e30, allow_nan=False))
def test_sigmoid_strictly_inside_unit_interval(v):
    s = activation(Tensor(np.array([v], dtype=np.float32)), "sigmoid").data[0]
    assert 0.0 < s < 1.0


# --- gradients (64-bit mode, >= 20 random instances per primitive) ----------------


def _store(rng, **shapes):
    p = ParamStore()
    for name, shape in shapes.items():
        p.add(name, rng.standard_normal(shape))
    return p


GRAD_CASES = {
    "conv2d": (
        dict(x=(2, 4, 6, 6), w=(6, 2, 3, 3), b=(6,)),
        lambda p: conv2d(p["x"], p["w"], p["b"], stride=2, padding=1, groups=2),
    ),
    "conv2d_depthwise": (
        dict(x=(1, 3, 5, 5), w=(3, 1, 3, 3)),
        lambda p: conv2d(p["x"], p["w"], None, stride=1, padding=1, groups=3),
    ),
    "conv2d_pointwise": (
        dict(x=(2, 4, 3, 3), w=(5, 4, 1, 1), b=(5,)),
        lambda p: conv2d(p["x"], p["w"], p["b"]),
    ),
    "max_pool": (dict(x=(1, 2, 6, 6)), lambda p: pool2d(p["x"], "max", 2, 2)),
    "avg_pool": (dict(x=(1, 2, 5, 5)), lambda p: pool2d(p["x"], "avg", 3, 1)),
    "upsample": (dict(x=(1, 2, 3, 2)), lambda p: upsample_nearest(p["x"], 3)),
    "relu": (dict(x=(2, 3, 4, 4)), lambda p: activation(p["x"], "relu")),
    "sigmoid": (dict(x=(2, 3, 4, 4)), lambda p: activation(p["x"], "sigmoid")),
    "add_broadcast": (dict(a=(2, 3, 4, 4), b=(1, 3, 1, 1)), lambda p: add(p["a"], p["b"])),
    "mul_broadcast": (dict(a=(2, 3, 4, 4), b=(2, 3, 1, 1)), lambda p: mul(p["a"], p["b"])),
    "channel_affine": (dict(x=(2, 3, 4, 4), s=(3,), t=(3,)), lambda p: channel_affine(p["x"], p["s"], p["t"])),
    "mean_hw": (dict(x=(2, 3, 4, 5)), lambda p: mean_hw(p["x"])),
    "head_flatten": (dict(x=(2, 6, 3, 4)), lambda p: head_flatten(p["x"], 3)),
    "concat": (dict(a=(2, 4, 3), b=(2, 2, 3)), lambda p: concat([p["a"], p["b"]], axis=1)),
}


@pytest.mark.parametrize("op", sorted(GRAD_CASES))
def test_primitive_gradients(op):
    shapes, fn = GRAD_CASES[op]
    worst = 0.0
    with precision(np.float64):
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            p = _store(rng, **shapes)
            # random projection gives non-trivial upstream gradients
            r = Tensor(rng.standard_normal(fn(p).shape))
            worst = max(worst, grad_check(lambda: sum_all(mul(fn(p), r)), p, eps=1e-6))
    assert worst < 1e-4, f"{op}: {worst}"


def test_grad_check_linear_and_quadratic():
    with precision(np.float64):
        p = ParamStore()
        p.add("x", np.array([1.0, 2.0]))
        assert grad_check(lambda: sum_all(p["x"]), p) < 1e-9
        sq = lambda: sum_all(mul(p["x"], p["x"]))
        p.zero_grad()
        sq().backward()
        np.testing.assert_allclose(p["x"].grad, [2.0, 4.0])
        assert grad_check(sq, p) < 1e-6


def test_grad_check_reports_wrong_gradient():
    with precision(np.float64):
        p = ParamStore()
        p.add("x", np.array([0.5, -1.5, 2.0]))

        def wrong():
            x = p["x"]
            out = x.data * 3.0
            return sum_all(F.make_node(out, (x,), lambda g: (g * 2.0,), "wrong"))

        assert grad_check(wrong, p) == pytest.approx(1 / 3, abs=1e-6)


def test_grad_check_nonfinite_loss():
    p = ParamStore()
    p.add("x", np.array([1.0]))
    with pytest.raises(NumericError):
        grad_check(lambda: Tensor(np.array(np.nan)), p)


# --- ParamStore / Adam ----------------------------------------------------------


def test_param_store_order_and_uniqueness():
    p = ParamStore()
    p.add("b", np.zeros(2))
    p.add("a", np.zeros(3))
    assert p.names() == ["a", "b"]
    with pytest.raises(ConfigError):
        p.add("a", np.zeros(1))


def test_count_params_hand_count():
    assert count_params(ParamStore()) == 0
    p = ParamStore()
    p.add("conv.weight", np.zeros((3, 2, 3, 3)))
    p.add("conv.bias", np.zeros(3))
    assert count_params(p) == 57
    p.set_frozen("conv.bias", True)
    assert count_params(p, trainable_only=True) == 54 <= count_params(p)


def test_adam_respects_freeze_mask():
    rng = np.random.default_rng(9)
    p = _store(rng, a=(3, 3), b=(4,))
    p.set_frozen("a", True)
    before = p.state()
    state = AdamState()
    for _ in range(10):
        p.zero_grad()
        sum_all(add(mul(p["a"], p["a"]), Tensor(np.zeros((3, 3))))).backward()
        sum_all(mul(p["b"], p["b"])).backward()
        adam_step(p, state, lr=1e-2)
    assert p["a"].data.tobytes() == before["a"].tobytes()
    assert not np.array_equal(p["b"].data, before["b"])


def test_adam_rejects_nonfinite_grad_without_side_effects():
    p = ParamStore()
    p.add("x", np.ones(2))
    p["x"].grad = np.array([np.nan, 1.0], dtype=np.float32)
    state = AdamState()
    with pytest.raises(NumericError):
        adam_step(p, state, lr=0.1)
    assert state.step == 0 and np.all(p["x"].data == 1.0)


def test_inference_mode_folding_matches_unfused():
    from pcbdet.detector import forward, init_detector, toy_dcac_config
    from pcbdet.nn import inference_mode, no_grad

    cfg = toy_dcac_config(input_size=64)
    params = init_detector(cfg, seed=0)
    rng = np.random.default_rng(9)
    for name, t in params.items():  # non-trivial affines so folding matters
        if name.endswith(".scale"):
            t.data[...] = rng.uniform(0.5, 1.5, t.shape)
        elif name.endswith(".shift"):
            t.data[...] = rng.normal(0, 0.1, t.shape)
    x = Tensor(rng.random((1, 3, 64, 64)).astype(np.float32))
    with no_grad():
        cls_a, reg_a = forward(x, params, cfg)
    with inference_mode():
        cls_b, reg_b = forward(x, params, cfg)
    np.testing.assert_allclose(cls_b.data, cls_a.data, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(reg_b.data, reg_a.data, rtol=1e-4, atol=1e-5)
