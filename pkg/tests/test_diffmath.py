import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acf.diffmath import (CheckpointError, NonFiniteGradientError, ParamStore, ShapeError, Tensor,
                          adamw_step, grad, load_checkpoint, ops, parameter, precision,
                          save_checkpoint)
from acf.diffmath.gradcheck import check_gradients


def test_forward_examples():
    assert ops.tanh(Tensor(0.0)).item() == 0.0
    assert ops.logsumexp(Tensor([0.0, 0.0, 0.0])).item() == pytest.approx(math.log(3), abs=1e-6)
    np.testing.assert_allclose(ops.softmax(Tensor([1.0, 1.0])).data, [0.5, 0.5])


def test_default_precision_is_f32():
    assert Tensor([1.0, 2.0]).data.dtype == np.float32
    assert (Tensor([1.0]) * 2.0).data.dtype == np.float32


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        Tensor(np.ones(2)) + Tensor(np.ones(3))


def test_backward_rejects_non_scalar():
    p = parameter(np.ones(3))
    with pytest.raises(ShapeError):
        grad(p * 2.0, {"p": p})


def test_sum_gradient_is_ones(rng):
    p = parameter(rng.standard_normal((3, 4)))
    g = grad(ops.sum(p), {"p": p})["p"]
    np.testing.assert_array_equal(g, np.ones((3, 4)))


def test_square_gradient():
    p = parameter([1.0, 2.0])
    g = grad(ops.sum(p * p), {"p": p})["p"]
    np.testing.assert_allclose(g, [2.0, 4.0])


def test_stop_gradient_value_and_zero_grad(rng):
    p = parameter(rng.standard_normal(5))
    sg = ops.stop_gradient(p)
    np.testing.assert_array_equal(sg.data, p.data)
    g = grad(ops.sum(sg * p), {"p": p})["p"]
    # only the direct edge contributes: d/dp sum(c * p) = c
    np.testing.assert_allclose(g, p.data)
    g = grad(ops.sum(ops.stop_gradient(p) * 3.0) + ops.sum(p * 0.0), {"p": p})["p"]
    np.testing.assert_array_equal(g, np.zeros(5))


def test_unreachable_parameter_gets_zeros():
    a, b = parameter([1.0]), parameter([2.0, 3.0])
    g = grad(ops.sum(a * 2.0), {"a": a, "b": b})
    np.testing.assert_array_equal(g["b"], [0.0, 0.0])


def test_reused_node_accumulates():
    p = parameter([3.0])
    y = p * p
    g = grad(ops.sum(y + y), {"p": p})["p"]
    np.testing.assert_allclose(g, [12.0])


# ---------------------------------------------------------------- finite differences

R = np.random.default_rng(1234)


def _r(*shape):
    return R.standard_normal(shape)


UNARY = {
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
    "silu": ops.silu,
    "exp": ops.exp,
    "log_sigmoid": ops.log_sigmoid,
    "neg": ops.neg,
    "log": lambda x: ops.log(ops.exp(x) + 1.0),
    "sqrt": lambda x: ops.sqrt(x * x + 1.0),
    "pow": lambda x: (x * x + 1.0) ** 1.5,
    "softmax0": lambda x: ops.softmax(x, axis=0),
    "softmax1": lambda x: ops.softmax(x, axis=1),
    "log_softmax": lambda x: ops.log_softmax(x, axis=-1),
    "logsumexp": lambda x: ops.logsumexp(x, axis=1),
    "logsumexp_keep": lambda x: ops.logsumexp(x, axis=0, keepdims=True),
    "sum_axis": lambda x: ops.sum(x, axis=0),
    "mean": lambda x: ops.mean(x, axis=1, keepdims=True),
    "reshape": lambda x: ops.reshape(x, (-1,)),
    "transpose": ops.transpose,
    "index": lambda x: x[1:, ::2],
    "gather": lambda x: ops.gather(x, np.array([[0], [2], [2]]), axis=1),
    "fancy_index": lambda x: x[np.array([0, 0, 2]), np.array([1, 1, 3])],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name):
    fn = UNARY[name]
    weights = _r(3, 4)

    def loss(x):
        y = fn(x)
        return ops.sum(y * weights.reshape(-1)[: y.size].reshape(y.shape))

    with precision(np.float64):
        err = check_gradients(loss, {"x": _r(3, 4)}, step=1e-3)
    assert err["x"] < 1e-4


BINARY = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub_broadcast": (lambda a, b: a - b, (3, 1), (1, 4)),
    "mul_broadcast": (lambda a, b: a * b, (2, 3, 4), (3, 1)),
    "div": (lambda a, b: a / (b * b + 1.0), (3, 4), (3, 4)),
    "matmul": (lambda a, b: a @ b, (3, 4), (4, 2)),
    "batched_matmul": (lambda a, b: a @ b, (2, 3, 4), (4, 5)),
    "stacked_matmul": (lambda a, b: a @ b, (2, 3, 4), (2, 4, 5)),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), (3, 2), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_match_finite_differences(name):
    fn, sa, sb = BINARY[name]
    with precision(np.float64):
        probe = fn(Tensor(np.ones(sa)), Tensor(np.ones(sb)))
        weights = _r(*probe.shape)
        err = check_gradients(lambda a, b: ops.sum(fn(a, b) * weights),
                              {"a": _r(*sa), "b": _r(*sb)})
    assert max(err.values()) < 1e-4


def test_rms_norm_matches_finite_differences():
    w = _r(2, 3, 5)
    with precision(np.float64):
        err = check_gradients(lambda x, g: ops.sum(ops.rms_norm(x, g) * w),
                              {"x": _r(2, 3, 5), "g": _r(5)})
    assert max(err.values()) < 1e-4


@pytest.mark.parametrize("stride,padding,k", [(2, 1, 3), (1, 0, 1), (1, 1, 3)])
def test_conv2d_matches_finite_differences(stride, padding, k):
    with precision(np.float64):
        out = ops.conv2d(Tensor(np.ones((2, 6, 6, 3))), Tensor(np.ones((k, k, 3, 4))),
                         stride=stride, padding=padding)
        w = _r(*out.shape)
        err = check_gradients(
            lambda x, kern, b: ops.sum(ops.conv2d(x, kern, b, stride=stride, padding=padding) * w),
            {"x": _r(2, 6, 6, 3), "kern": _r(k, k, 3, 4), "b": _r(4)})
    assert max(err.values()) < 1e-4


def test_conv2d_matches_direct_loop():
    x, kern = _r(1, 5, 5, 2), _r(3, 3, 2, 3)
    out = ops.conv2d(Tensor(x), Tensor(kern), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[0, i, j] = np.einsum("hwc,hwco->o", patch, kern)
    np.testing.assert_allclose(out, ref, rtol=1e-10)


def test_pairwise_silu_linear_matches_composition_and_fd():
    rows, cols, w, b = _r(5, 6), _r(4, 6), _r(6, 3), _r(3)
    with precision(np.float64):
        fused = ops.pairwise_silu_linear(Tensor(rows), Tensor(cols), Tensor(w), Tensor(b), chunk=2)
        hid = ops.silu(ops.reshape(Tensor(rows), (5, 1, 6)) + ops.reshape(Tensor(cols), (1, 4, 6)))
        composed = hid @ Tensor(w) + Tensor(b)
        np.testing.assert_allclose(fused.data, composed.data, rtol=1e-12)
        weights = _r(5, 4, 3)
        err = check_gradients(
            lambda r, c, w, b: ops.sum(ops.pairwise_silu_linear(r, c, w, b, chunk=3) * weights),
            {"r": rows, "c": cols, "w": w, "b": b})
    assert max(err.values()) < 1e-4


def test_two_layer_silu_net_matches_finite_differences():
    x = _r(8, 5)

    def loss(w1, b1, w2, b2):
        h = ops.silu(Tensor(x) @ w1 + b1)
        return ops.mean(ops.tanh(h @ w2 + b2) ** 2)

    with precision(np.float64):
        err = check_gradients(loss, {"w1": _r(5, 7) * 0.5, "b1": _r(7), "w2": _r(7, 3) * 0.5,
                                     "b2": _r(3)})
    assert max(err.values()) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_logsumexp_property_matches_direct(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 20
    with precision(np.float64):
        got = ops.logsumexp(Tensor(x), axis=1).data
    np.testing.assert_allclose(got, np.log(np.exp(x).sum(axis=1)), rtol=1e-10)


# ---------------------------------------------------------------- adamw

def _store(**arrays):
    return ParamStore({k: np.asarray(v, dtype=np.float32) for k, v in arrays.items()})


def test_adamw_zero_grads_no_decay_is_fixed_point(rng):
    store = _store(w=rng.standard_normal((3, 3)), b=rng.standard_normal(3))
    grads = {k: np.zeros_like(v) for k, v in store.params.items()}
    new = adamw_step(store, grads, lr=0.1, weight_decay=0.0)
    for k in store.params:
        np.testing.assert_array_equal(new[k], store[k])


def test_adamw_first_step_by_hand():
    store = _store(p=[1.0])
    new = adamw_step(store, {"p": np.float32([1.0])}, lr=0.1, betas=(0.9, 0.999), eps=1e-8,
                     weight_decay=0.0)
    assert new.t == 1
    assert new["p"][0] == pytest.approx(0.9, abs=1e-6)


def test_adamw_decay_only():
    store = _store(p=[1.0])
    new = adamw_step(store, {"p": np.float32([0.0])}, lr=0.1, weight_decay=0.01)
    assert new["p"][0] == pytest.approx(0.999, abs=1e-7)


def test_adamw_rejects_nan_and_leaves_store():
    store = _store(p=[1.0, 2.0])
    with pytest.raises(NonFiniteGradientError) as info:
        adamw_step(store, {"p": np.float32([np.nan, 0.0])}, lr=0.1)
    assert info.value.names == ["p"]
    assert store.t == 0
    np.testing.assert_array_equal(store["p"], [1.0, 2.0])


def test_adamw_is_deterministic(rng):
    init = rng.standard_normal((4, 4)).astype(np.float32)
    grads = [rng.standard_normal((4, 4)).astype(np.float32) for _ in range(20)]

    def run():
        s = _store(w=init)
        for g in grads:
            s = adamw_step(s, {"w": g}, lr=1e-2)
        return s["w"]

    assert run().tobytes() == run().tobytes()


def test_adamw_state_shapes():
    store = _store(w=np.ones((2, 3)))
    new = adamw_step(store, {"w": np.ones((2, 3), np.float32)}, lr=1e-3)
    assert new.m["w"].shape == new.v["w"].shape == (2, 3)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    arrays = {"encoder/w": rng.standard_normal((3, 4)).astype(np.float32),
              "scalar": np.float32(2.5).reshape(()),
              "energy/k0/b": np.array([np.float32(1e-38), -0.0], dtype=np.float32)}
    path = tmp_path / "c.acfw"
    save_checkpoint(path, arrays)
    back = load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()
    assert path.read_bytes()[:4] == b"ACFW"


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "c.acfw"
    save_checkpoint(path, {"w": np.ones((4, 4), np.float32)})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short")
