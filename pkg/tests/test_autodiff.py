import numpy as np
import pytest

from cyclehash import autodiff as ad
from cyclehash.autodiff import (
    ContractError,
    DomainError,
    ShapeError,
    Tape,
    Tensor,
)


def finite_diff(f, x, h=1e-5):
    """Central finite differences of scalar f at matrix x."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestMatmul:
    def test_identity(self):
        tape = Tape()
        a = Tensor([[1, 2], [3, 4]])
        out = ad.matmul(tape, a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])

    def test_identity_times_column(self):
        tape = Tape()
        out = ad.matmul(tape, Tensor(np.eye(2)), Tensor([[5], [7]]))
        np.testing.assert_array_equal(out.value, [[5], [7]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-1, 1, (3, 4))
        b = rng.uniform(-1, 1, (4, 2))
        out = ad.matmul(Tape(), Tensor(a), Tensor(b))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(out.value, expected, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tape(), Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associativity(self):
        rng = np.random.default_rng(1)
        a, b, c = (Tensor(rng.uniform(-1, 1, (4, 4))) for _ in range(3))
        tape = Tape()
        left = ad.matmul(tape, ad.matmul(tape, a, b), c)
        right = ad.matmul(tape, a, ad.matmul(tape, b, c))
        np.testing.assert_allclose(left.value, right.value, atol=1e-9)


class TestElementwise:
    def test_known_values(self):
        tape = Tape()
        assert ad.tanh(tape, Tensor(0.0)).item() == 0.0
        assert ad.sigmoid(tape, Tensor(0.0)).item() == 0.5
        np.testing.assert_array_equal(
            ad.square(tape, Tensor([[2.0, -3.0]])).value, [[4.0, 9.0]]
        )

    def test_log_domain_error_locates_entry(self):
        with pytest.raises(DomainError, match=r"\(1, 0\)"):
            ad.log(Tape(), Tensor([[1.0, 2.0], [-0.5, 3.0]]))

    def test_log_sigmoid_gradient_at_zero(self):
        # d/dx log(sigmoid(x)) at 0 is 0.5
        tape = Tape()
        x = Tensor(0.0)
        loss = ad.reduce_sum(tape, ad.log(tape, ad.sigmoid(tape, x)))
        g = ad.backward(loss, tape).get(x)
        fd = finite_diff(lambda v: np.log(1 / (1 + np.exp(-v[0, 0]))), x.value)
        assert abs(g[0, 0] - 0.5) < 1e-9
        np.testing.assert_allclose(g, fd, rtol=1e-6)

    def test_relu_and_clip(self):
        tape = Tape()
        out = ad.relu(tape, Tensor([[-1.0, 2.0]]))
        np.testing.assert_array_equal(out.value, [[0.0, 2.0]])
        out = ad.clip(tape, Tensor([[-1.0, 0.5, 2.0]]), 0.0, 1.0)
        np.testing.assert_array_equal(out.value, [[0.0, 0.5, 1.0]])

    def test_broadcast_bias_gradient(self):
        tape = Tape()
        x = Tensor(np.ones((3, 2)))
        b = Tensor([[1.0, -1.0]])
        loss = ad.reduce_sum(tape, ad.add(tape, x, b))
        g = ad.backward(loss, tape).get(b)
        np.testing.assert_array_equal(g, [[3.0, 3.0]])

    def test_mismatched_shapes_raise(self):
        with pytest.raises(ShapeError):
            ad.add(Tape(), Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2))))
        with pytest.raises(ShapeError):
            ad.mul(Tape(), Tensor(np.ones((2, 2))), Tensor(np.ones((1, 2))))


class TestReductions:
    def test_sum_of_zeros(self):
        assert ad.reduce_sum(Tape(), Tensor(np.zeros((3, 3)))).item() == 0.0

    def test_mean(self):
        assert ad.reduce_mean(Tape(), Tensor([[1, 2], [3, 4]])).item() == 2.5

    def test_sum_gradient_is_ones(self):
        tape = Tape()
        x = Tensor(np.arange(6.0).reshape(2, 3))
        g = ad.backward(ad.reduce_sum(tape, x), tape).get(x)
        np.testing.assert_array_equal(g, np.ones((2, 3)))


class TestBackward:
    def test_sum_square_analytic(self):
        tape = Tape()
        w = Tensor([[1.0, -2.0]])
        loss = ad.reduce_sum(tape, ad.square(tape, w))
        g = ad.backward(loss, tape).get(w)
        np.testing.assert_array_equal(g, [[2.0, -4.0]])

    def test_off_tape_parameter_gets_exact_zeros(self):
        tape = Tape()
        w = Tensor([[1.0]])
        other = Tensor([[5.0, 6.0]])
        loss = ad.reduce_sum(tape, ad.square(tape, w))
        g = ad.backward(loss, tape).get(other)
        assert (g == 0.0).all()

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = Tensor(np.ones((2, 2)))
        y = ad.square(tape, x)
        with pytest.raises(ContractError):
            ad.backward(y, tape)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(3)
        tape = Tape()
        x = Tensor(rng.uniform(-1, 1, (4, 4)))
        w = Tensor(rng.uniform(-0.5, 0.5, (4, 4)))
        loss = ad.reduce_mean(
            tape, ad.square(tape, ad.tanh(tape, ad.matmul(tape, x, w)))
        )
        g1 = ad.backward(loss, tape).get(w)
        g2 = ad.backward(loss, tape).get(w)
        assert (g1 == g2).all()

    def test_composed_expression_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        xv = rng.uniform(-1, 1, (3, 4))
        wv = rng.uniform(-0.5, 0.5, (4, 2))

        def value(w):
            h = np.tanh(xv @ w)
            s = 1 / (1 + np.exp(-h))
            return np.log(s).mean()

        tape = Tape()
        w = Tensor(wv)
        out = ad.log(
            tape, ad.sigmoid(tape, ad.tanh(tape, ad.matmul(tape, Tensor(xv), w)))
        )
        loss = ad.reduce_mean(tape, out)
        g = ad.backward(loss, tape).get(w)
        fd = finite_diff(value, wv)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)

    def test_gradient_accumulates_over_reuse(self):
        tape = Tape()
        x = Tensor([[3.0]])
        loss = ad.reduce_sum(tape, ad.mul(tape, x, x))
        g = ad.backward(loss, tape).get(x)
        np.testing.assert_array_equal(g, [[6.0]])
