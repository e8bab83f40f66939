"""
Shared fixtures: seeded generators, small network configs and a finite-difference gradient checker.
"""

import numpy as np
import pytest

from prior_net import NetConfig
from tensor_core import DiffTensor, backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net_cfg():
    """One-scale network small enough for finite differences on 8x8 inputs."""
    return NetConfig(scales=1, base_channels=2, kernel_size=3, input_mode="stacked", seed=3)


def numerical_gradient(f, x, eps=1e-6):
    """Central differences of the scalar function f() w.r.t. every entry of the array x (mutated in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + eps
        f_plus = f()
        x[idx] = original - eps
        f_minus = f()
        x[idx] = original
        grad[idx] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


@pytest.fixture
def gradcheck():
    """
    Compare backward() against central differences.

    The returned function takes build(*tensors) -> scalar DiffTensor and the leaf arrays,
    and returns the largest relative error over all leaves.
    """
    def check(build, *arrays, eps=1e-6):
        leaves = [DiffTensor(a.copy(), requires_grad=True) for a in arrays]
        backward(build(*leaves))
        worst = 0.0
        for leaf in leaves:
            values = leaf.values

            def f():
                return build(*[DiffTensor(l.values) for l in leaves]).item()

            numeric = numerical_gradient(f, values, eps)
            worst = max(worst, relative_error(leaf.grad, numeric))
        return worst

    return check
