import numpy as np

from ddad.gradcheck import grad_check
from ddad.tensor import Tensor, _make, mean, square, tsum


def test_corrupted_backward_rule_fails():
    def bad_square(a):
        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (4.0 * a.data))  # deliberately 2x the true rule

        return _make(a.data * a.data, (a,), backward)

    x = Tensor(np.array([0.5, 1.5]), requires_grad=True)
    rep = grad_check(lambda x: tsum(bad_square(x)), x)
    assert not rep.passed


def test_constant_function_zero_gradients():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    rep = grad_check(lambda x: mean(square(x)) * 0.0, x)
    assert rep.passed
    assert rep.max_rel_err == 0.0


def test_report_carries_tolerance():
    x = Tensor(np.array([0.25, 0.75]), requires_grad=True)
    rep = grad_check(lambda x: mean(square(x)), x, tol=1e-6)
    assert rep.tol == 1e-6
    assert rep.passed and rep.max_rel_err <= 1e-6
