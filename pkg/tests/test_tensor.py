import numpy as np
import pytest

from ddad.errors import DomainError, GraphError, ShapeError
from ddad.tensor import (
    Tensor,
    absolute,
    div,
    elementwise,
    mean,
    mul,
    reduce,
    relu,
    reshape,
    square,
    sub,
    tsum,
)


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestElementwise:
    def test_square(self):
        assert square(t([1, -2, 3])).data.tolist() == [1, 4, 9]

    def test_abs_of_zero_difference(self):
        a = t([0.3, 0.7])
        assert absolute(sub(a, t([0.3, 0.7]))).data.tolist() == [0, 0]

    def test_divide(self):
        assert div(t([1, 2]), t([2, 4])).data.tolist() == [0.5, 0.5]

    def test_dispatch_matches_direct(self):
        a, b = t([1.0, 4.0]), t([2.0, 2.0])
        assert elementwise("div", a, b).data.tolist() == [0.5, 2.0]
        assert elementwise("sqrt", t([4.0])).data.tolist() == [2.0]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            elementwise("frobnicate", t([1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sub(t([1, 2, 3]), t([1, 2]))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            elementwise("log", t([1.0, -1.0]))

    def test_sqrt_domain(self):
        with pytest.raises(DomainError):
            elementwise("sqrt", t([-4.0]))

    def test_scalar_operand_broadcasts(self):
        assert (t([1.0, 2.0]) * 3.0).data.tolist() == [3.0, 6.0]


class TestReluReduceReshape:
    def test_relu(self):
        assert relu(t([-1, 0, 2])).data.tolist() == [0, 0, 2]

    def test_mean(self):
        assert mean(t([1, 2, 3])).item() == 2

    def test_reshape_row_major(self):
        a = t(np.arange(6).reshape(2, 3))
        assert reshape(a, (3, 2)).data.tolist() == [[0, 1], [2, 3], [4, 5]]

    def test_reshape_element_count(self):
        with pytest.raises(ShapeError):
            reshape(t([1, 2, 3]), (2, 2))

    def test_reduce_axes(self):
        a = t(np.arange(6, dtype=float).reshape(2, 3))
        assert tsum(a, axes=0).data.tolist() == [3, 5, 7]
        assert mean(a, axes=1).data.tolist() == [1, 4]

    def test_reduce_unknown_kind(self):
        with pytest.raises(ValueError):
            reduce("max", t([1.0]))


class TestBackward:
    def test_sum_of_squares(self):
        x = t([1, -2], grad=True)
        tsum(square(x)).backward()
        assert x.grad.tolist() == [2, -4]

    def test_mean_squared_error(self):
        x = t([3.0], grad=True)
        mean(square(sub(x, t([1.0])))).backward()
        assert x.grad.tolist() == [4.0]

    def test_fanout_accumulates(self):
        x = t([1.0, 5.0], grad=True)
        tsum(x + x).backward()
        assert x.grad.tolist() == [2.0, 2.0]

    def test_two_consumers_sum_of_single_paths(self):
        def single(path):
            x = t([0.3, 0.8], grad=True)
            y = square(x) if path == 0 else mul(x, 3.0)
            tsum(y).backward()
            return x.grad

        x = t([0.3, 0.8], grad=True)
        tsum(square(x) + mul(x, 3.0)).backward()
        np.testing.assert_allclose(x.grad, single(0) + single(1))

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(GraphError):
            t([1.0, 2.0], grad=True).backward()

    def test_unreached_grad_untouched(self):
        x = t([1.0], grad=True)
        y = t([2.0], grad=True)
        tsum(square(x)).backward()
        assert y.grad is None

    def test_relu_subgradient_zero_at_kink(self):
        x = t([0.0, -1.0, 2.0], grad=True)
        tsum(relu(x)).backward()
        assert x.grad.tolist() == [0.0, 0.0, 1.0]

    def test_abs_subgradient_zero_at_zero(self):
        x = t([0.0, -3.0, 3.0], grad=True)
        tsum(absolute(x)).backward()
        assert x.grad.tolist() == [0.0, -1.0, 1.0]


class TestDeterminism:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 4))
        out1 = square(mul(Tensor(a), 1.7)).data
        out2 = square(mul(Tensor(a), 1.7)).data
        assert np.array_equal(out1, out2)
