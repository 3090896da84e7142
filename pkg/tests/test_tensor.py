import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv2d_loop, finite_diff, rel_err
from vvpit import tensor as T
from vvpit.tensor import GradTape, ShapeError, Tensor


def test_conv_constant_case():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 4.0))


def test_conv_single_pixel():
    out = T.conv2d(Tensor([[[1.5]]]), Tensor([[[[-2.0]]]]))
    assert out.shape == (1, 1, 1) and out.data[0, 0, 0] == -3.0


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, k = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k)).data, conv2d_loop(x, k), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(1, 3), o=st.integers(1, 3), h=st.integers(1, 8), w=st.integers(1, 8),
    kh=st.integers(1, 4), kw=st.integers(1, 4), stride=st.integers(1, 3),
    padding=st.integers(0, 2), seed=st.integers(0, 2**31),
)
def test_conv_oracle_property(c, o, h, w, kh, kw, stride, padding, seed):
    if h + 2 * padding < kh or w + 2 * padding < kw:
        return
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(c, h, w)), rng.normal(size=(o, c, kh, kw)), rng.normal(size=o)
    got = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, padding).data
    np.testing.assert_allclose(got, conv2d_loop(x, k, b, stride, padding), atol=1e-9)


def test_conv_batched_equals_per_item():
    rng = np.random.default_rng(2)
    x, k = rng.normal(size=(4, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3))
    batch = T.conv2d(Tensor(x), Tensor(k), padding=1).data
    for i in range(4):
        np.testing.assert_allclose(batch[i], conv2d_loop(x[i], k, padding=1), atol=1e-9)


def test_conv_errors_name_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 3, 3\).*\(3, 5, 5\)"):
        T.conv2d(Tensor(np.zeros((3, 5, 5))), Tensor(np.zeros((1, 2, 3, 3))))
    with pytest.raises(ShapeError, match="non-positive output"):
        T.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_ewise_examples():
    np.testing.assert_array_equal(T.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])
    np.testing.assert_array_equal(T.div(Tensor([2, 4]), Tensor([2, 2])).data, [1, 2])
    a = np.random.default_rng(3).normal(size=(3, 4))
    np.testing.assert_array_equal(T.mul(Tensor(a), Tensor(np.ones((3, 4)))).data, a)
    np.testing.assert_array_equal(T.ewise("max", Tensor([1, 5]), Tensor([3, 2])).data, [3, 5])


def test_ewise_scalar_broadcast_only():
    np.testing.assert_array_equal((Tensor([1.0, 2.0]) * 3.0).data, [3.0, 6.0])
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))


def test_division_guard():
    with pytest.raises(ZeroDivisionError):
        T.div(Tensor([1.0]), Tensor([1e-31]))


def test_reduce_examples():
    assert T.reduce("sum", Tensor([1, 2, 3]), axes={0}).item() == 6
    np.testing.assert_array_equal(T.reduce("max", Tensor([[1, 5], [3, 2]]), axes={1}).data, [5, 3])
    a = np.random.default_rng(4).normal(size=(4, 4))
    acc = 0.0
    for v in a.ravel():
        acc += v
    assert abs(T.reduce("mean", Tensor(a), axes={0, 1}).item() - acc / 16) < 1e-12


def test_reduce_errors():
    with pytest.raises(ValueError):
        T.reduce("sum", Tensor(np.zeros((0,))))
    with pytest.raises(ValueError):
        T.reduce("sum", Tensor(np.zeros((2, 2))), axes={2})


def test_backward_linear_and_square():
    x = np.array([0.5, -1.0, 2.0])
    w = Tensor.param([1.0, 2.0, 3.0])
    with GradTape() as tape:
        loss = T.reduce("sum", w * Tensor(x))
    np.testing.assert_array_equal(T.backward(tape, loss)[w.uid].data, x)

    w = Tensor.param([1.0, 2.0])
    with GradTape() as tape:
        loss = T.reduce("sum", T.square(w))
    np.testing.assert_array_equal(T.backward(tape, loss)[w.uid].data, [2.0, 4.0])


def test_backward_only_parameters_and_errors():
    w = Tensor.param([1.0, 2.0])
    with GradTape() as tape:
        mid = w * 2.0
        loss = T.reduce("sum", mid)
    grads = T.backward(tape, loss)
    assert set(grads) == {w.uid}
    with pytest.raises(ShapeError):
        T.backward(tape, mid)
    with pytest.raises(ValueError, match="empty"):
        T.backward(GradTape(), Tensor(1.0))


def test_tape_replays_in_reverse_order():
    w = Tensor.param([1.0])
    order = []
    with GradTape() as tape:
        a = w * 2.0
        b = a + 1.0
        loss = T.reduce("sum", b)
    for out, _, _ in tape.nodes:
        order.append(out.uid)
    seen = []
    for out, inputs, vjp in reversed(tape.nodes):
        seen.append(out.uid)
    assert seen == order[::-1] == [loss.uid, b.uid, a.uid]


def _unary_cases():
    return {
        "exp": lambda a: T.exp(a),
        "log": lambda a: T.log(T.exp(a)),
        "sigmoid": T.sigmoid,
        "softplus": T.softplus,
        "leaky": lambda a: T.leaky_relu(a, 0.1),
        "square": T.square,
        "neg": T.neg,
    }


@pytest.mark.parametrize("name", sorted(_unary_cases()))
def test_unary_gradients(name):
    fn = _unary_cases()[name]
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.05] += 0.2  # keep clear of the leaky kink
    weights = rng.normal(size=(3, 4))
    p = Tensor.param(x)

    def f():
        return float(np.sum(fn(Tensor(p.data)).data * weights))

    with GradTape() as tape:
        loss = T.reduce("sum", fn(p) * Tensor(weights))
    g = T.backward(tape, loss)[p.uid].data
    assert rel_err(g, finite_diff(f, [p.data])[0]) < 1e-4


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "max"])
def test_binary_gradients(op):
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 3)), rng.uniform(0.5, 1.5, size=(2, 3))
    a[np.abs(a - b) < 0.1] += 0.3
    wts = rng.normal(size=(2, 3))
    pa, pb = Tensor.param(a), Tensor.param(b)

    def f():
        return float(np.sum(T.ewise(op, Tensor(pa.data), Tensor(pb.data)).data * wts))

    with GradTape() as tape:
        loss = T.reduce("sum", T.ewise(op, pa, pb) * Tensor(wts))
    g = T.backward(tape, loss)
    fa, fb = finite_diff(f, [pa.data, pb.data])
    assert rel_err(g[pa.uid].data, fa) < 1e-4
    assert rel_err(g[pb.uid].data, fb) < 1e-4


@pytest.mark.parametrize("op", ["sum", "mean", "min", "max"])
def test_reduce_gradients(op):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 4))
    wts = rng.normal(size=(2, 4))
    p = Tensor.param(x)

    def f():
        return float(np.sum(T.reduce(op, Tensor(p.data), axes=(1,)).data * wts))

    with GradTape() as tape:
        loss = T.reduce("sum", T.reduce(op, p, axes=(1,)) * Tensor(wts))
    g = T.backward(tape, loss)[p.uid].data
    assert rel_err(g, finite_diff(f, [p.data])[0]) < 1e-4


def test_shape_op_gradients():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3))
    wts = rng.normal(size=(4, 2, 3))
    p = Tensor.param(x)

    def build(t):
        e = T.expand(T.reshape(t, (1, 2, 3)), (2, 2, 3))
        s = T.concat([e, T.stack([t, T.neg(t)])], axis=0)
        return T.narrow(s, 0, 0, 4) * Tensor(wts) + T.expand(T.take(s, 3), (4, 2, 3))

    def f():
        return float(T.reduce("sum", build(Tensor(p.data))).item())

    with GradTape() as tape:
        loss = T.reduce("sum", build(p))
    g = T.backward(tape, loss)[p.uid].data
    assert rel_err(g, finite_diff(f, [p.data])[0]) < 1e-4


def test_two_layer_conv_net_gradient():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(2, 6, 6)))
    k1 = Tensor.param(rng.normal(size=(3, 2, 3, 3)) * 0.5)
    b1 = Tensor.param(rng.normal(size=3))
    k2 = Tensor.param(rng.normal(size=(2, 3, 2, 2)) * 0.5)

    def net(k1_, b1_, k2_):
        h = T.leaky_relu(T.conv2d(x, k1_, b1_, padding=1), 0.1)
        return T.reduce("sum", T.square(T.conv2d(h, k2_, stride=2)))

    def f():
        return net(Tensor(k1.data), Tensor(b1.data), Tensor(k2.data)).item()

    with GradTape() as tape:
        loss = net(k1, b1, k2)
    g = T.backward(tape, loss)
    fd = finite_diff(f, [k1.data, b1.data, k2.data])
    for t, ref in zip((k1, b1, k2), fd):
        assert rel_err(g[t.uid].data, ref) < 1e-4


def test_conv_input_gradient():
    rng = np.random.default_rng(10)
    xp = Tensor.param(rng.normal(size=(2, 4, 5)))
    k = Tensor(rng.normal(size=(2, 2, 3, 2)))

    def f():
        return float(np.sum(T.conv2d(Tensor(xp.data), k, stride=2, padding=1).data ** 2))

    with GradTape() as tape:
        loss = T.reduce("sum", T.square(T.conv2d(xp, k, stride=2, padding=1)))
    g = T.backward(tape, loss)[xp.uid].data
    assert rel_err(g, finite_diff(f, [xp.data])[0]) < 1e-4


def test_operations_are_deterministic():
    rng = np.random.default_rng(11)
    x, k = rng.normal(size=(3, 9, 9)), rng.normal(size=(4, 3, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(k), padding=1).data
    b = T.conv2d(Tensor(x), Tensor(k), padding=1).data
    assert a.tobytes() == b.tobytes()


def test_softplus_is_stable():
    out = T.softplus(Tensor([-800.0, 0.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert out[2] == 800.0 and abs(out[1] - np.log(2)) < 1e-15
