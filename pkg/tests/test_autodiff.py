import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavecop import autodiff as ad
from wavecop.errors import DomainError, InvalidInputError, NonFiniteError

rng = np.random.default_rng(42)

UNARY = {
    "exp": (ad.exp, lambda: rng.normal(size=5)),
    "log": (ad.log, lambda: rng.uniform(0.5, 3, 5)),
    "sqrt": (ad.sqrt, lambda: rng.uniform(0.5, 3, 5)),
    "square": (ad.square, lambda: rng.normal(size=5)),
    "sigmoid": (ad.sigmoid, lambda: rng.normal(size=5)),
    "tanh": (ad.tanh, lambda: rng.normal(size=5)),
    "softplus": (ad.softplus, lambda: rng.normal(size=5) * 3),
    "normal_cdf": (ad.normal_cdf, lambda: rng.normal(size=5)),
    "normal_quantile": (ad.normal_quantile, lambda: rng.uniform(0.1, 0.9, 5)),
    "neg": (ad.neg, lambda: rng.normal(size=5)),
    "cumulative_sum": (ad.cumulative_sum, lambda: rng.normal(size=5)),
    "clip": (lambda x: ad.clip(x, -0.5, 0.5), lambda: np.array([-2.0, -0.3, 0.1, 0.4, 3.0])),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    fn, sample = UNARY[name]
    weights = rng.normal(size=5)
    assert ad.gradient_check(lambda x: ad.sum(ad.mul(weights, fn(x))), sample()) < 1e-6


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_gradients_with_broadcasting(op):
    b = rng.uniform(1, 2, (3, 1))

    def f(x):
        return ad.sum(op(ad.reshape(x, (3, 4)), b))

    assert ad.gradient_check(f, rng.uniform(1, 2, 12)) < 1e-6
    # and with respect to the broadcast operand
    a = rng.uniform(1, 2, (3, 4))
    assert ad.gradient_check(lambda x: ad.sum(op(a, ad.reshape(x, (3, 1)))), b.ravel()) < 1e-6


def test_matmul_and_reductions():
    A = rng.normal(size=(3, 4))

    def f(x):
        X = ad.reshape(x, (4, 2))
        return ad.sum(ad.square(ad.mean(ad.matmul(A, X), axis=0)))

    assert ad.gradient_check(f, rng.normal(size=8)) < 1e-6
    v = rng.normal(size=4)
    assert ad.gradient_check(lambda x: ad.dot(x, v) + ad.sum(ad.matvec(A, x)), rng.normal(size=4)) < 1e-6


def test_cholesky_logdet_and_solve():
    B = rng.normal(size=(3, 3))
    base = B @ B.T + 3 * np.eye(3)
    b = rng.normal(size=3)

    def f(x):
        S = ad.add(base, ad.reshape(x, (3, 3)))
        S = ad.mul(0.5, ad.add(S, ad.transpose(S)))
        L = ad.cholesky(S)
        return ad.add(ad.logdet_from_cholesky(L), ad.sum(ad.triangular_solve(L, b)))

    assert ad.gradient_check(f, 0.1 * rng.normal(size=9)) < 1e-6
    L = np.linalg.cholesky(base)
    assert float(ad.logdet_from_cholesky(L)) == pytest.approx(np.linalg.slogdet(base)[1], rel=1e-12)


def test_indexing_and_shapes():
    idx = np.array([[2, 0], [1, 1]])

    def f(x):
        X = ad.reshape(x, (2, 3))
        picked = ad.take_along(X, idx)
        stacked = ad.stack([ad.getitem(X, 0), ad.getitem(X, 1)], axis=0)
        joined = ad.concatenate([ad.getitem(X, (slice(None), 0)), ad.getitem(X, (slice(None), 2))])
        spread = ad.scatter(joined, ([0, 1, 2, 3],), (6,))
        return ad.sum(ad.square(picked)) + ad.sum(ad.exp(stacked)) + ad.sum(ad.square(spread))

    assert ad.gradient_check(f, rng.normal(size=6)) < 1e-6


def test_take_along_matches_numpy():
    a = rng.normal(size=(2, 5))
    idx = np.array([[4, 0, 0], [1, 2, 3]])
    np.testing.assert_array_equal(ad.take_along(a, idx), np.take_along_axis(a, idx, -1))


def test_linear_interpolate_values_and_gradients():
    xp = np.array([0.0, 1.0, 3.0])
    fp = np.array([0.0, 2.0, 3.0])
    np.testing.assert_allclose(ad.linear_interpolate(np.array([-1.0, 0.5, 2.0, 5.0]), xp, fp), [0, 1, 2.5, 3])

    def f(z):
        x, knots, vals = z[:3], z[3:6], z[6:]
        return ad.sum(ad.linear_interpolate(x, ad.cumulative_sum(ad.exp(knots)), vals))

    z = np.concatenate([[1.1, 2.3, 3.4], np.log([1.0, 1.5, 1.2]), [0.3, -1.0, 2.0]])
    assert ad.gradient_check(f, z) < 1e-6


def test_backward_docstring_example():
    tape = ad.Tape()
    x, y = tape.var(2.0), tape.var(3.0)
    gx, gy = ad.backward(x * y, [x, y])
    assert (float(gx), float(gy)) == (3.0, 2.0)


def test_backward_all_leaves_and_unreachable():
    tape = ad.Tape()
    x, y = tape.var(1.0), tape.var(2.0)
    tape.var(5.0)  # a leaf that never reaches the output
    gx, gy, gz = ad.backward(ad.add(ad.mul(x, x), y))
    assert float(gx) == 2.0 and float(gy) == 1.0 and float(gz) == 0.0


def test_fan_out_accumulates():
    tape = ad.Tape()
    x = tape.var(3.0)
    y = x * x * x
    (g,) = ad.backward(y, [x])
    assert float(g) == pytest.approx(27.0)


def test_plain_arrays_bypass_the_tape():
    out = ad.exp(np.array([0.0, 1.0]))
    assert isinstance(out, np.ndarray)


def test_errors():
    with pytest.raises(DomainError):
        ad.log(np.array([-1.0]))
    with pytest.raises(DomainError):
        ad.normal_quantile(np.array([1.5]))
    with pytest.raises(NonFiniteError):
        ad.exp(np.array([1000.0]))
    tape = ad.Tape()
    with pytest.raises(InvalidInputError):
        ad.backward(tape.var([1.0, 2.0]))
    with pytest.raises(InvalidInputError):
        ad.add(ad.Tape().var(1.0), tape.var(1.0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_polynomial_gradient_property(xs):
    x = np.array(xs)
    tape = ad.Tape()
    v = tape.var(x)
    (g,) = ad.backward(ad.sum(ad.mul(v, ad.square(v))), [v])
    np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-12, atol=1e-12)
