import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_error
from pgbn import ops
from pgbn.errors import ConfigurationError, ShapeError
from pgbn.tensor import NonFiniteError, Tensor, backward, grad, no_grad


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_hand_value():
    out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    a_arr = rng.standard_normal((3, 4))
    b_arr = rng.standard_normal((4, 2))
    a = Tensor(a_arr, requires_grad=True)
    b = Tensor(b_arr, requires_grad=True)
    backward(ops.reduce_sum(ops.matmul(a, b)))
    num = numeric_grad(lambda: float(np.sum(a.data @ b_arr)), a.data)
    assert rel_error(a.grad, num) < 1e-5


def test_conv3d_full_scale_shape():
    x = Tensor(np.zeros((32, 4, 96, 84, 8)))
    k = Tensor(np.zeros((1, 1, 7, 8, 8)))
    assert ops.conv3d(x, k, (1, 1, 7)).shape == (32, 4, 96, 12, 8)


def test_conv3d_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 4, 5, 1))
    out = ops.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))), (1, 1, 1))
    np.testing.assert_array_equal(out.data, x)


def test_conv3d_rejects_inexact_tiling():
    x = Tensor(np.zeros((1, 4, 10, 84, 8)))
    with pytest.raises(ConfigurationError):
        ops.conv3d(x, Tensor(np.zeros((1, 3, 1, 8, 8))), (1, 3, 1))


def test_conv3d_kernel_gradient_finite_differences(rng):
    x_arr = rng.standard_normal((1, 2, 2, 2, 1))
    k_arr = rng.standard_normal((1, 2, 1, 1, 2))
    w = rng.standard_normal((1, 2, 1, 2, 2))
    k = Tensor(k_arr, requires_grad=True)
    backward(ops.reduce_sum(ops.mul(ops.conv3d(Tensor(x_arr), k, (1, 1, 1)), Tensor(w))))

    def f():
        return float(np.sum(ops.conv3d(Tensor(x_arr), Tensor(k_arr), (1, 1, 1)).data * w))

    assert rel_error(k.grad, numeric_grad(f, k_arr)) < 1e-5


def test_transconv3d_time_growth_shape():
    y = Tensor(np.ones((2, 4, 1, 1, 8)))
    k = Tensor(np.ones((1, 3, 1, 8, 8)))
    assert ops.transconv3d(y, k, (1, 3, 1)).shape == (2, 4, 3, 1, 8)


def test_transconv3d_unit_weight_is_identity(rng):
    y = rng.standard_normal((2, 3, 2, 2, 1))
    out = ops.transconv3d(Tensor(y), Tensor(np.ones((1, 1, 1, 1, 1))), (1, 1, 1))
    np.testing.assert_array_equal(out.data, y)


def test_transconv3d_equals_conv3d_input_gradient(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 4, 3)), requires_grad=True)
    k_arr = rng.standard_normal((1, 2, 2, 3, 5))
    y = ops.conv3d(x, Tensor(k_arr), (1, 2, 2))
    upstream = rng.standard_normal(y.shape)
    (gx,) = grad(ops.reduce_sum(ops.mul(y, Tensor(upstream))), [x])
    direct = ops.transconv3d(Tensor(upstream), Tensor(k_arr), (1, 2, 2))
    np.testing.assert_allclose(direct.data, gx.data, rtol=1e-6, atol=1e-12)


def test_elementwise_examples():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    c = Tensor(np.full((3, 4), 2.5))
    assert ops.reduce_mean(c).item() == 2.5
    x = Tensor(0.0, requires_grad=True)
    backward(ops.sigmoid(x))
    assert x.grad == pytest.approx(0.25)


def test_sigmoid_is_stable_for_large_inputs():
    out = ops.sigmoid(Tensor([-1000.0, 1000.0]))
    np.testing.assert_array_equal(out.data, [0.0, 1.0])


def test_broadcast_rules():
    a = Tensor(np.ones((2, 3)))
    assert (a + 1.0).shape == (2, 3)
    assert (a * Tensor(2.0)).shape == (2, 3)
    with pytest.raises(ShapeError):
        a + Tensor(np.ones(3))
    with pytest.raises(ShapeError):
        ops.reshape(a, (4, 2))


def test_backward_sum_gives_ones(rng):
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    backward(ops.reduce_sum(w))
    np.testing.assert_array_equal(w.grad, np.ones((3, 2)))


def test_backward_square_at_three():
    w = Tensor(3.0, requires_grad=True)
    backward(ops.reduce_sum(ops.square(w)))
    assert w.grad == 6.0


def test_backward_accumulates_until_reset():
    w = Tensor(3.0, requires_grad=True)
    backward(ops.square(w))
    backward(ops.square(w))
    assert w.grad == 12.0
    w.zero_grad()
    backward(ops.square(w))
    assert w.grad == 6.0


def test_backward_rejects_non_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ops.mul(w, 2.0))


def test_nonfinite_rejected_at_creation():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_shared_subexpression_visited_once():
    # y = x*x + x*x reuses x along several paths; d/dx = 4x
    x = Tensor(1.5, requires_grad=True)
    sq = ops.mul(x, x)
    backward(ops.add(sq, sq))
    assert x.grad == pytest.approx(6.0)


def test_second_order_gradient():
    # d/dx (d/dx x^3) = 6x
    x = Tensor(2.0, requires_grad=True)
    (g,) = grad(ops.mul(ops.square(x), x), [x], create_graph=True)
    assert g.item() == pytest.approx(12.0)
    (gg,) = grad(g, [x])
    assert gg.item() == pytest.approx(12.0)


def test_no_grad_records_nothing():
    x = Tensor(2.0, requires_grad=True)
    with no_grad():
        y = ops.square(x)
    assert not y.requires_grad


def _check_op_gradient(op, *arrays, tol=1e-4):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    weight = np.random.default_rng(7).standard_normal(out.shape)
    backward(ops.reduce_sum(ops.mul(out, Tensor(weight))))
    for t, arr in zip(tensors, arrays):
        def f():
            with no_grad():
                return float(np.sum(op(*[Tensor(a) for a in arrays]).data * weight))

        assert rel_error(t.grad, numeric_grad(f, arr)) < tol


@pytest.mark.parametrize(
    "name, op, shapes",
    [
        ("add", ops.add, [(3, 4), (3, 4)]),
        ("sub", ops.sub, [(3, 4), (3, 4)]),
        ("mul", ops.mul, [(3, 4), (3, 4)]),
        ("div", lambda a, b: ops.div(a, ops.add(ops.square(b), 1.0)), [(3, 4), (3, 4)]),
        ("sigmoid", ops.sigmoid, [(5,)]),
        ("leaky_relu", lambda a: ops.leaky_relu(a, 0.2), [(6,)]),
        ("sqrt", lambda a: ops.sqrt(ops.add(ops.square(a), 0.5)), [(4,)]),
        ("square", ops.square, [(4,)]),
        ("abs", ops.abs, [(4,)]),
        ("reduce_mean", lambda a: ops.reduce_mean(a, (0, 2)), [(2, 3, 4)]),
        ("reduce_sum", lambda a: ops.reduce_sum(a, 1, keepdims=True), [(2, 3, 4)]),
        ("reshape", lambda a: ops.reshape(a, (4, 6)), [(2, 3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=1), [(2, 3), (2, 5)]),
        ("slice", lambda a: ops.slice_axis(a, 1, 1, 3), [(2, 4, 3)]),
        ("pad", lambda a: ops.pad(a, [(1, 0), (2, 1)]), [(2, 3)]),
        ("broadcast", lambda a: ops.broadcast_to(a, (3, 2, 4)), [(2, 1)]),
        ("transpose", lambda a: ops.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    ],
)
def test_elementwise_suite_gradients(name, op, shapes):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    arrays = [rng.standard_normal(s) + (0.3 if name in ("abs", "leaky_relu") else 0.0) for s in shapes]
    _check_op_gradient(op, *arrays)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    k=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
    s=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
    out=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
    cin=st.integers(1, 3),
    cout=st.integers(1, 3),
)
def test_conv_transconv_adjointness(seed, k, s, out, cin, cout):
    rng = np.random.default_rng(seed)
    spatial = tuple((o - 1) * ss + kk for o, ss, kk in zip(out, s, k))
    x = rng.standard_normal((2,) + spatial + (cin,))
    kern = rng.standard_normal(k + (cin, cout))
    y = rng.standard_normal((2,) + out + (cout,))
    lhs = np.sum(ops.conv3d(Tensor(x), Tensor(kern), s).data * y)
    rhs = np.sum(x * ops.transconv3d(Tensor(y), Tensor(kern), s).data)
    assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs), 1.0)


def test_determinism_bit_identical(rng):
    x = rng.standard_normal((2, 4, 6, 4, 3))
    k = rng.standard_normal((1, 2, 2, 3, 3))
    a = ops.conv3d(Tensor(x), Tensor(k), (1, 2, 2)).data
    b = ops.conv3d(Tensor(x), Tensor(k), (1, 2, 2)).data
    assert a.tobytes() == b.tobytes()
