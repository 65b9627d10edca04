import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from la3p.losses import (
    LossKind, bias_condition, clipped_priority, expected_gradient_identity_check, huber,
    loss_and_grad, mse, pal, pal_xi,
)

H = 1e-6


def central_diff(f, x):
    return (f(x + H) - f(x - H)) / (2 * H)


@pytest.mark.parametrize("delta, loss, grad", [(0.5, 0.125, 0.5), (2.0, 2.0, 1.0), (0.0, 0.0, 0.0),
                                               (-3.0, 3.0, -1.0), (1.0, 0.5, 1.0)])
def test_huber_examples(delta, loss, grad):
    assert huber(delta) == (loss, grad)


def test_nan_rejected():
    for fn in (mse, huber, lambda d: pal(d, 1.0, 0.4)):
        with pytest.raises(ValueError):
            fn(np.nan)


def test_pal_xi_examples():
    assert pal_xi([0.5, 2.0], 0.4) == pytest.approx(1.15975, abs=5e-6)
    assert pal_xi([0.5, 2.0], 0.4) == pytest.approx((1 + 2 ** 0.4) / 2, rel=1e-15)
    assert pal_xi([0.1, -0.9, 1.0], 0.7) == 1.0
    assert pal_xi([3.0], 1.0) == 3.0
    with pytest.raises(ValueError):
        pal_xi([], 0.4)


def test_pal_examples():
    assert pal(0.5, 1.0, 0.4)[0] == 0.125
    xi = 1.15975
    loss, _ = pal(2.0, xi, 0.4)
    # the quoted 1.6255 is rounded from 1.62536
    assert loss == pytest.approx(1.6255, abs=1e-3)
    assert loss == pytest.approx(2 ** 1.4 / (1.4 * xi), rel=1e-14)
    for sign in (-1.0, 1.0):
        below = pal(sign * 1.0, xi, 0.4)[1]
        above = pal(sign * np.nextafter(1.0, 2.0), xi, 0.4)[1]
        assert below == pytest.approx(sign / xi)
        assert above == pytest.approx(sign / xi)


@pytest.mark.parametrize("xi", [0.0, -1.0, np.nan])
def test_pal_rejects_bad_xi(xi):
    with pytest.raises(ValueError):
        pal(1.0, xi, 0.4)


def test_pal_small_errors_match_huber_and_mse():
    d = np.linspace(-1, 1, 41)
    np.testing.assert_array_equal(pal(d, 1.0, 0.3)[0], huber(d)[0])
    np.testing.assert_array_equal(pal(d, 1.0, 0.3)[1], mse(d)[1])


def test_clipped_priority():
    np.testing.assert_array_equal(clipped_priority([0.5, -2.0, 0.0], 0.4), [1.0, 2 ** 0.4, 1.0])


@pytest.mark.parametrize("alpha", [0.1, 0.4, 1.0])
def test_gradients_match_finite_differences(alpha, rng):
    d = rng.uniform(-10, 10, 400)
    d = d[np.abs(np.abs(d) - 1.0) > 1e-3]
    xi = 1.7
    cases = [mse, huber, lambda x: pal(x, xi, alpha)]
    for fn in cases:
        num = central_diff(lambda x: fn(x)[0], d)
        np.testing.assert_allclose(fn(d)[1], num, rtol=1e-4, atol=1e-8)


def test_identity_examples():
    lhs, rhs = expected_gradient_identity_check([0.5, 2.0], 0.4)
    assert abs(lhs - rhs) < 1e-12
    d = np.array([0.3, -0.8, 1.0, 0.1])
    lhs, rhs = expected_gradient_identity_check(d, 0.6)
    assert lhs == pytest.approx(d.mean(), abs=1e-15)
    assert rhs == pytest.approx(d.mean(), abs=1e-15)
    with pytest.raises(ValueError):
        expected_gradient_identity_check([], 0.4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=256), st.floats(1e-3, 1.0))
def test_identity_property(deltas, alpha):
    lhs, rhs = expected_gradient_identity_check(deltas, alpha)
    assert abs(lhs - rhs) < 1e-9


@pytest.mark.parametrize("rho, alpha, beta, expected", [
    (2, 0.6, 0.4, 2.36), (1, 0.4, 1.0, 1.0), (1, 0.4, 0.0, 1.4), (2, 0.7, 1.0, 2.0),
])
def test_bias_condition_examples(rho, alpha, beta, expected):
    assert bias_condition(rho, alpha, beta) == pytest.approx(expected, abs=1e-12)


def test_bias_condition_l1_interval():
    assert 1.0 <= bias_condition(1, 0.4, 1.0) <= 2.0
    assert bias_condition(2, 0.6, 0.4) > 2.0


def test_loss_and_grad_dispatch():
    assert loss_and_grad(LossKind.MSE, 2.0) == (2.0, 2.0)
    assert loss_and_grad(LossKind.HUBER, 2.0) == (2.0, 1.0)
    with pytest.raises(ValueError):
        loss_and_grad(LossKind.PAL, 2.0)
    assert loss_and_grad(LossKind.PAL, 0.5, xi=2.0)[0] == 0.0625
