"""64-bit central finite-difference checks of every differentiable operation."""
import numpy as np
import pytest

from grad_cases import CASES, run_case
from skimba import tensor as T
from skimba.gradcheck import check_gradients, max_rel_error
from skimba.ssm import selective_scan
from skimba.tensor import Tensor

TOL = 1e-4


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_case(name):
    assert run_case(name, seed=1) < TOL


def _shapes(rng, n=3):
    return [tuple(int(v) for v in rng.integers(2, 5, size=3)) for _ in range(n)]


@pytest.mark.parametrize("op", ["conv3d", "conv_transpose3d", "layer_norm", "instance_norm", "softmax",
                                "matmul", "selective_scan"])
def test_core_ops_on_random_shapes(op, f64):
    rng = np.random.default_rng(11)
    for L, W, H in _shapes(rng):
        t = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)
        if op == "conv3d":
            x, w = t(1, 2, L + 2, W + 2, H + 2), t(2, 2, 3, 3, 3)
            fn, ins = (lambda: (T.conv3d(x, w, padding=1) ** 2).sum()), [x, w]
        elif op == "conv_transpose3d":
            x, w = t(1, 2, L, W, H), t(2, 3, 2, 2, 2)
            fn, ins = (lambda: (T.conv_transpose3d(x, w, stride=2) ** 2).sum()), [x, w]
        elif op == "layer_norm":
            x, g = t(L, W * H), t(W * H)
            fn, ins = (lambda: (T.layer_norm(x, 1, g) ** 3).sum()), [x, g]
        elif op == "instance_norm":
            x = t(1, 2, L, W, H)
            fn, ins = (lambda: (T.instance_norm(x) ** 3).sum()), [x]
        elif op == "softmax":
            x = t(L, W, H)
            fn, ins = (lambda: (T.softmax(x, 1) * Tensor(np.arange(W * 1.0)[:, None])).sum()), [x]
        elif op == "matmul":
            a, b = t(L, W), t(W, H)
            fn, ins = (lambda: ((a @ b) ** 2).sum()), [a, b]
        else:
            S, C, N = L + W, H, 2
            u, B, Cm = t(1, S, C), t(1, S, N), t(1, S, N)
            delta = Tensor(rng.uniform(0.1, 1.0, (1, S, C)), requires_grad=True)
            A = Tensor(-rng.uniform(0.2, 2.0, (C, N)), requires_grad=True)
            D = t(C)
            fn, ins = (lambda: (selective_scan(u, delta, A, B, Cm, D) ** 2).sum()), [u, delta, A, B, Cm, D]
        assert check_gradients(fn, ins, max_entries=16) < TOL


def test_max_rel_error_floor():
    assert max_rel_error(np.array([0.0]), np.array([5e-7])) < TOL
    assert max_rel_error(np.array([1.0]), np.array([1.001])) > TOL
