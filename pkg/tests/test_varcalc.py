import math

import numpy as np
import pytest

from hjblab.errors import EvalError, InvalidInput
from hjblab.measures import moment
from hjblab.varcalc import (
    MeasureFunctional,
    lions_derivative_fd,
    mixture,
    pushforward,
    second_var_fd,
    var_derivative_fd,
)

from .conftest import random_measure


def bump(x):
    return np.exp(-(x[:, 0] ** 2) / 2.0)


def bump_grad(x):
    return -x[:, 0:1] * np.exp(-(x[:, 0:1] ** 2) / 2.0)


class TestMixture:
    def test_weights_scale(self, rng):
        mu, nu = random_measure(rng, n=3), random_measure(rng, n=2)
        mix = mixture(mu, [(0.25, nu)])
        assert len(mix) == 5
        assert mix.weights[:3] == pytest.approx(0.75 * mu.weights)
        assert mix.weights[3:] == pytest.approx(0.25 * nu.weights)

    def test_duplicates_not_merged(self, rng):
        m = random_measure(rng, n=4)
        mix = mixture(m, [(0.5, m)])
        assert len(mix) == 8

    def test_invalid_coefficients(self, rng):
        mu, nu = random_measure(rng), random_measure(rng)
        with pytest.raises(InvalidInput):
            mixture(mu, [(0.7, nu), (0.6, nu)])
        with pytest.raises(InvalidInput):
            mixture(mu, [(-0.1, nu)])


class TestVarDerivativeFD:
    def test_linear_functional_exact(self, rng):
        func = MeasureFunctional(lambda m: m.integrate(bump), "mu(phi)")
        for _ in range(5):
            mu, nu = random_measure(rng), random_measure(rng)
            fd = var_derivative_fd(func, mu, nu)
            want = nu.integrate(bump) - mu.integrate(bump)
            assert fd.slope == pytest.approx(want, abs=1e-12)
            assert fd.richardson == pytest.approx(want, abs=1e-12)

    def test_square_of_linear(self, rng):
        func = MeasureFunctional(lambda m: m.integrate(bump) ** 2, "sq")
        for _ in range(5):
            mu, nu = random_measure(rng), random_measure(rng)
            fd = var_derivative_fd(func, mu, nu)
            want = 2.0 * mu.integrate(bump) * (nu.integrate(bump) - mu.integrate(bump))
            assert fd.richardson == pytest.approx(want, abs=1e-10)

    def test_second_order_convergence(self, rng):
        # base slopes converge at second order: halving the step shrinks
        # the error by at least 3x on a smooth nonlinear functional
        func = MeasureFunctional(lambda m: math.sin(m.integrate(bump)) ** 3, "smooth")
        mu, nu = random_measure(rng), random_measure(rng)
        exact = var_derivative_fd(func, mu, nu, steps=(1e-4, 5e-5)).richardson
        s1 = var_derivative_fd(func, mu, nu, steps=(2e-2,)).slope
        s2 = var_derivative_fd(func, mu, nu, steps=(1e-2,)).slope
        assert abs(s1 - exact) / abs(s2 - exact) >= 3.0

    def test_eval_error_propagates(self, rng):
        func = MeasureFunctional(lambda m: math.nan, "bad")
        with pytest.raises(EvalError):
            var_derivative_fd(func, random_measure(rng), random_measure(rng))

    def test_dim_mismatch(self, rng):
        func = MeasureFunctional(lambda m: 0.0, "zero")
        with pytest.raises(InvalidInput):
            var_derivative_fd(func, random_measure(rng, dim=1), random_measure(rng, dim=2))


class TestLionsDerivativeFD:
    def test_linear_constant_field(self, rng):
        func = MeasureFunctional(lambda m: m.integrate(bump), "mu(phi)")
        mu = random_measure(rng)
        fd = lions_derivative_fd(func, mu, lambda x: np.ones_like(x))
        want = float(mu.weights @ bump_grad(mu.points)[:, 0])
        assert fd.richardson == pytest.approx(want, abs=1e-9)

    def test_second_moment_dilation(self, rng):
        func = MeasureFunctional(lambda m: moment(m, 2), "m2")
        mu = random_measure(rng)
        fd = lions_derivative_fd(func, mu, lambda x: x)
        assert fd.richardson == pytest.approx(2.0 * moment(mu, 2), abs=1e-9)


class TestSecondVarFD:
    def test_linear_vanishes(self, rng):
        func = MeasureFunctional(lambda m: m.integrate(bump), "mu(phi)")
        mu, nu1, nu2 = (random_measure(rng) for _ in range(3))
        fd = second_var_fd(func, mu, nu1, nu2)
        assert abs(fd.richardson) <= 1e-9

    def test_square_of_linear(self, rng):
        func = MeasureFunctional(lambda m: m.integrate(bump) ** 2, "sq")
        for _ in range(4):
            mu, nu1, nu2 = (random_measure(rng) for _ in range(3))
            fd = second_var_fd(func, mu, nu1, nu2)
            want = 2.0 * (nu1.integrate(bump) - mu.integrate(bump)) * (
                nu2.integrate(bump) - mu.integrate(bump)
            )
            assert fd.richardson == pytest.approx(want, abs=1e-9)

    def test_symmetry_in_directions(self, rng):
        func = MeasureFunctional(
            lambda m: math.tanh(m.integrate(bump)) * m.integrate(bump), "smooth"
        )
        mu, nu1, nu2 = (random_measure(rng) for _ in range(3))
        a = second_var_fd(func, mu, nu1, nu2).richardson
        b = second_var_fd(func, mu, nu2, nu1).richardson
        assert a == pytest.approx(b, rel=1e-8, abs=1e-10)


class TestPushforward:
    def test_translation(self, rng):
        mu = random_measure(rng)
        shifted = pushforward(mu, lambda x: x + 1.0)
        assert np.allclose(shifted.points, mu.points + 1.0)
        assert np.array_equal(shifted.weights, mu.weights)
