import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skimba import tensor as T
from skimba.tensor import Tensor


def test_add_small_vectors():
    np.testing.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_mul_by_zero_gives_zero_value_and_gradient():
    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
    y = x * 0.0
    y.sum().backward()
    assert not y.data.any()
    assert not x.grad.any()


def test_exp_log_roundtrip(rng):
    x = Tensor(rng.uniform(0.1, 5.0, (4, 3)))
    np.testing.assert_allclose(T.log(T.exp(x)).data, x.data, atol=1e-6)


def test_broadcast_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(4))


def test_default_dtype_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with T.default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_identity_matmul(rng):
    m = rng.standard_normal((3, 4)).astype(np.float32)
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]])
    np.testing.assert_array_equal((a @ b).data, [[58.0, 64.0], [139.0, 154.0]])


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv3d_identity_kernel(rng):
    x = Tensor(rng.standard_normal((1, 1, 3, 4, 5)))
    w = Tensor(np.ones((1, 1, 1, 1, 1)))
    np.testing.assert_array_equal(T.conv3d(x, w, Tensor(np.zeros(1))).data, x.data)


def test_conv3d_impulse_is_mirrored_kernel(rng):
    x = np.zeros((1, 1, 5, 5, 5))
    x[0, 0, 2, 2, 2] = 1.0
    k = rng.standard_normal((1, 1, 3, 3, 3))
    y = T.conv3d(Tensor(x), Tensor(k), padding=1).data[0, 0, 1:4, 1:4, 1:4]
    np.testing.assert_allclose(y, k[0, 0, ::-1, ::-1, ::-1], atol=1e-6)


@pytest.mark.parametrize("n,k,s,p,d", [(7, 3, 1, 0, 1), (8, 3, 2, 1, 1), (9, 3, 1, 2, 2), (6, 1, 3, 0, 1)])
def test_conv3d_output_extent(n, k, s, p, d):
    y = T.conv3d(Tensor(np.ones((1, 1, n, n, n))), Tensor(np.ones((1, 1, k, k, k))), stride=s, padding=p, dilation=d)
    assert y.shape[2:] == ((n + 2 * p - d * (k - 1) - 1) // s + 1,) * 3


def test_conv3d_rejects_nonpositive_extent():
    with pytest.raises(ValueError):
        T.conv3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 3, 3, 3))))


def test_conv_transpose_is_adjoint(rng, f64):
    x = Tensor(rng.standard_normal((2, 3, 4, 4, 2)))
    y = Tensor(rng.standard_normal((2, 5, 8, 8, 4)))
    w = Tensor(rng.standard_normal((3, 5, 2, 2, 2)))   # transpose layout (Cin, Cout) == conv layout (O, C)
    lhs = float((T.conv_transpose3d(x, w, stride=2) * y).sum().data)
    rhs = float((x * T.conv3d(y, w, stride=2)).sum().data)
    assert abs(lhs - rhs) / abs(rhs) < 1e-5


def test_conv_transpose_doubles_extent():
    y = T.conv_transpose3d(Tensor(np.ones((1, 2, 4, 4, 4))), Tensor(np.ones((2, 3, 2, 2, 2))), stride=2)
    assert y.shape == (1, 3, 8, 8, 8)


def test_layer_norm_constant_input_is_zero():
    assert not T.layer_norm(Tensor(np.full((3, 8), 2.5)), 1).data.any()


def test_layer_norm_moments(rng, f64):
    y = T.layer_norm(Tensor(rng.standard_normal((16, 64)) * 3 + 1), 1).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-5)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)


def test_instance_norm_constant_and_moments(rng, f64):
    assert not T.instance_norm(Tensor(np.full((2, 3, 2, 2, 2), -4.0))).data.any()
    y = T.instance_norm(Tensor(rng.standard_normal((2, 3, 6, 6, 4)) * 5 - 2)).data
    np.testing.assert_allclose(y.mean((2, 3, 4)), 0, atol=1e-5)
    np.testing.assert_allclose(y.var((2, 3, 4)), 1, atol=1e-4)


def test_activation_values():
    assert T.leaky_relu(Tensor([-1.0]), 0.01).data[0] == pytest.approx(-0.01)
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(4)), 0).data, [0.25] * 4)


def test_softmax_rows_sum_to_one(rng, f64):
    p = T.softmax(Tensor(rng.standard_normal((32, 7)) * 10), axis=1).data
    np.testing.assert_allclose(p.sum(1), 1, atol=1e-7)


def test_backward_of_sum_is_ones(rng):
    x = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_backward_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    first = x.grad.copy()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_mlp_gradient_at_default_precision(rng):
    """float32 graph vs float64 central differences of the same function."""
    from skimba.gradcheck import max_rel_error, numerical_grad
    w1 = Tensor(rng.standard_normal((4, 6)) * 0.5, requires_grad=True)
    w2 = Tensor(rng.standard_normal((6, 1)) * 0.5, requires_grad=True)
    x = Tensor(rng.standard_normal((5, 4)))
    loss = lambda: (T.silu(x @ w1) @ w2).mean()
    loss().backward()
    with T.default_dtype(np.float64):
        w64 = Tensor(w1.data.astype(np.float64))
        f = lambda: (T.silu(Tensor(x.data.astype(np.float64)) @ w64) @ Tensor(w2.data.astype(np.float64))).mean()
        num = numerical_grad(f, w64)
    assert max_rel_error(w1.grad.astype(np.float64), num) < 1e-3


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with T.no_grad():
        y = x * 2
    assert not y.requires_grad


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2 ** 16))
def test_broadcast_grad_matches_shape(shape, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal((2,) + tuple(shape)), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    np.testing.assert_allclose(a.grad, b.data.sum(0), rtol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_ops_stay_finite(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 5)) * 30)
    for y in (T.softmax(x, 1), T.log_softmax(x, 1), T.softplus(x), T.silu(x), T.sigmoid(x), T.layer_norm(x, 1)):
        assert np.all(np.isfinite(y.data))
