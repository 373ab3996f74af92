import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajgail import diffcore as dc
from trajgail.diffcore import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# ----------------------------------------------------------------- forward examples


def test_matmul_example():
    out = dc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_sigmoid_of_zero():
    assert dc.sigmoid(Tensor(0.0)).item() == 0.5


def test_logsumexp_of_zeros():
    assert dc.logsumexp(Tensor([0.0, 0.0])).item() == pytest.approx(math.log(2), abs=1e-15)


def test_softmax_is_overflow_safe():
    out = dc.softmax(Tensor([1000.0, 1000.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5, 0.0], atol=1e-300)


def test_min_of_two_scalars_and_clamp():
    assert dc.minimum(Tensor(2.0), Tensor(-1.0)).item() == -1.0
    np.testing.assert_array_equal(dc.clamp(Tensor([-3.0, 0.5, 9.0]), -1.0, 1.0).data, [-1.0, 0.5, 1.0])


def test_slice_and_concat():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert x[:, 1].data.tolist() == [1.0, 4.0]
    cat = dc.concat([x, x], axis=1)
    assert cat.shape == (2, 6)


# ---------------------------------------------------------------- backward examples


def test_square_derivative():
    x = leaf(3.0)
    assert dc.grad(dc.square(x), [x])[0].item() == 6.0


def test_sigmoid_derivative():
    x = leaf(0.0)
    assert dc.grad(dc.sigmoid(x), [x])[0].item() == pytest.approx(0.25, abs=1e-15)


def test_second_derivative_of_cube():
    x = leaf(2.0)
    (g,) = dc.grad(x * x * x, [x], create_graph=True)
    (h,) = dc.grad(g, [x])
    assert h.item() == pytest.approx(12.0, abs=1e-12)


def test_gradient_shapes_match_primals():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.ones((4, 2)))
    gm = dc.backward(dc.sum(dc.matmul(a, b)), wrt=[a, b])
    assert gm[a].shape == a.shape and gm[b].shape == b.shape


def test_backward_requires_scalar_root():
    x = leaf([1.0, 2.0])
    with pytest.raises(dc.GraphError, match="scalar"):
        dc.backward(dc.square(x))


def test_backward_rejects_node_outside_record():
    x = leaf(1.0)
    with dc.Record() as rec:
        y = dc.square(x)
    z = dc.exp(x)  # recorded outside ``rec``
    with pytest.raises(dc.GraphError):
        dc.backward(z, record=rec)
    with pytest.raises(dc.GraphError):
        dc.backward(y, wrt=[z], record=rec)


def test_backward_rejects_constant_wrt():
    x = leaf(1.0)
    c = Tensor(2.0)
    with pytest.raises(dc.GraphError):
        dc.backward(x * c, wrt=[c])


def test_unreachable_node_gets_zero_gradient():
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    g = dc.grad(dc.sum(dc.square(x)), [x, y])
    assert g[1].data.tolist() == [0.0]


def test_shape_mismatch_raises():
    with pytest.raises(dc.ShapeError):
        dc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(dc.ShapeError):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("fn", [
    lambda x: dc.log(x - 5.0),
    lambda x: dc.sqrt(x - 5.0),
    lambda x: dc.exp(x * 1000.0),
    lambda x: dc.div(x, x - x),
])
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_raises(fn):
    with pytest.raises(dc.NonFiniteError):
        fn(leaf([1.0, 2.0]))


# ------------------------------------------------------ per-primitive gradient checks

UNARY = {
    "neg": dc.neg,
    "scale": lambda x: dc.scale(x, -1.7),
    "sigmoid": dc.sigmoid,
    "tanh": dc.tanh,
    "exp": dc.exp,
    "log": lambda x: dc.log(dc.square(x) + 0.5),
    "softplus": dc.softplus,
    "softmax": lambda x: dc.softmax(x) * Tensor(np.arange(1.0, 5.0)),
    "logsumexp": lambda x: dc.logsumexp(x),
    "square": dc.square,
    "sqrt": lambda x: dc.sqrt(dc.square(x) + 0.3),
    "mean": lambda x: dc.mean(x, axis=0),
    "clamp": lambda x: dc.clamp(x, -0.9, 1.1),
    "norm": lambda x: dc.norm(dc.reshape(x, (2, 2)), axis=1),
    "slice": lambda x: x[1:3],
    "transpose": lambda x: dc.transpose(dc.reshape(x, (2, 2))) * Tensor([[1.0, 2.0], [3.0, 4.0]]),
    "concat": lambda x: dc.concat([x, dc.square(x)], axis=0),
    "stack": lambda x: dc.stack([x, dc.tanh(x)], axis=1),
    "broadcast_to": lambda x: dc.broadcast_to(dc.reshape(x, (1, 4)), (3, 4)) * Tensor(np.arange(12.0).reshape(3, 4)),
}

BINARY = {
    "add": dc.add,
    "sub": dc.sub,
    "mul": dc.mul,
    "div": lambda a, b: dc.div(a, dc.square(b) + 1.0),
    "minimum": dc.minimum,
    "matmul": lambda a, b: dc.matmul(dc.reshape(a, (2, 2)), dc.reshape(b, (2, 2))),
    "scalar_broadcast": lambda a, b: a * b[0],
}


def _weighted(y):
    w = Tensor(np.linspace(0.3, 1.7, y.size).reshape(y.shape))
    return dc.sum(y * w)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_central_differences(name):
    fn = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        point = rng.uniform(-2, 2, size=4)
        if name == "clamp":  # keep away from the kinks
            point = np.where(np.abs(np.abs(point - 0.1) - 1.0) < 0.05, 0.0, point)
        assert dc.grad_check(lambda x: _weighted(fn(x)), point, 1e-6) < 1e-4


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_match_central_differences(name):
    fn = BINARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        a0, b0 = rng.uniform(-2, 2, size=4), rng.uniform(-2, 2, size=4)
        if name == "minimum":
            b0 = np.where(np.abs(a0 - b0) < 0.05, b0 + 0.2, b0)
        assert dc.grad_check(lambda a: _weighted(fn(a, Tensor(b0))), a0) < 1e-4
        assert dc.grad_check(lambda b: _weighted(fn(Tensor(a0), b)), b0) < 1e-4


def test_grad_check_quadratic_example():
    assert dc.grad_check(lambda x: dc.sum(x * x), [1.5], eps=1e-5) < 1e-6


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        dc.grad_check(lambda x: dc.sum(x), [1.0], eps=0.0)


# ------------------------------------------------------------------ properties


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-2, 2)), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear(x0, a, b):
    x = leaf(x0)
    f = dc.sum(dc.tanh(x) * x)
    g = dc.sum(dc.exp(dc.scale(x, 0.5)))
    combo = dc.scale(f, a) + dc.scale(g, b)
    gf, gg, gc = (dc.grad(r, [x])[0].data for r in (f, g, combo))
    np.testing.assert_allclose(gc, a * gf + b * gg, rtol=0, atol=1e-12)


def test_double_backward_of_gradient_norm():
    def penalty(x):
        f = dc.sum(dc.square(dc.tanh(x)))
        (g,) = dc.grad(f, [x], create_graph=True)
        return dc.sum(dc.square(g))

    rng = np.random.default_rng(0)
    for _ in range(5):
        assert dc.grad_check(penalty, rng.uniform(-2, 2, size=6), 1e-6) < 1e-3


def test_double_backward_through_network_like_graph():
    rng = np.random.default_rng(1)
    W = leaf(rng.normal(size=(3, 4)))
    x0 = rng.normal(size=(2, 3))

    def pen(Wt):
        x = Tensor(x0, requires_grad=True)
        out = dc.sum(dc.tanh(dc.matmul(x, Wt)))
        (gx,) = dc.grad(out, [x], create_graph=True)
        return dc.sum(dc.square(dc.norm(gx, axis=1) - 1.0))

    assert dc.grad_check(pen, W.data) < 1e-3


def test_replay_is_bit_exact():
    rng = np.random.default_rng(2)
    x = leaf(rng.normal(size=(3, 3)))
    with dc.Record() as rec:
        y = dc.softmax(dc.matmul(x, dc.tanh(x)))
        z = dc.logsumexp(dc.sum(y, axis=0))
    replayed = rec.replay()
    assert [e.output.uid for e in rec.entries][-1] == z.uid
    for e, v in zip(rec.entries, replayed):
        assert np.array_equal(e.output.data, v)


def test_record_is_topologically_ordered():
    x = leaf([0.5, -0.5])
    with dc.Record() as rec:
        dc.sum(dc.exp(dc.square(x)) * x)
    produced = set()
    for e in rec.entries:
        for t in e.inputs:
            assert t.entry is None or t.uid in produced
        produced.add(e.output.uid)


def test_no_grad_skips_recording():
    x = leaf([1.0])
    with dc.Record() as rec, dc.no_grad():
        y = dc.exp(x)
    assert len(rec) == 0 and not y.requires_grad


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(dc.softmax(Tensor(x)).data.sum(axis=-1), 1.0, atol=1e-12)
