import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multiquery.models import FunctionModel, GradientSpec, register_function_model
from multiquery.optimize import (
    OptimizationError,
    StochasticOptimizerConfig,
    levenberg_marquardt,
    make_stepper,
    stochastic_minimize,
)

A = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]])
B = np.array([1.0, -2.0, 3.0])


def linear(x):
    return A @ x - B


def assert_monotone(result):
    assert len(result.trace_f) == result.iterations + 1
    assert np.all(np.diff(result.trace_f) <= 0)


def test_lm_linear_least_squares():
    # the iteration budget of this example is checked in the acceptance suite
    res = levenberg_marquardt(linear, [0.0, 0.0])
    oracle = np.linalg.solve(A.T @ A, A.T @ B)
    np.testing.assert_allclose(res.x, oracle, atol=1e-8)
    assert_monotone(res)


def test_lm_rosenbrock():
    model = register_function_model("rosenbrock_residuals")
    res = levenberg_marquardt(model, [-1.2, 1.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert_monotone(res)


def test_lm_zero_residual_start():
    res = levenberg_marquardt(lambda x: A @ x - A @ [1.0, 2.0], [1.0, 2.0])
    assert res.iterations == 0 and res.reason == "gradient_tol"
    assert res.trace_f == [0.0]


def test_lm_analytic_matches_central_differences():
    analytic = levenberg_marquardt(linear, [0.3, -0.7], jacobian=lambda x: A.T)
    central = levenberg_marquardt(linear, [0.3, -0.7], gradient_spec=GradientSpec("central"))
    np.testing.assert_allclose(analytic.x, central.x, atol=1e-6)
    assert_monotone(analytic)
    assert_monotone(central)


def test_lm_stalls_with_misleading_jacobian():
    res = levenberg_marquardt(linear, [0.3, -0.7], jacobian=lambda x: -A.T)
    assert res.reason == "stalled" and res.iterations == 0


def test_lm_residual_failure_raises():
    def r(x):
        if x[0] > 0.5:
            raise RuntimeError("diverged")
        return np.array([x[0] - 2.0, x[1]])

    with pytest.raises(OptimizationError):
        levenberg_marquardt(r, [1.0, 0.0])


def test_lm_underdetermined_warns():
    with pytest.warns(RuntimeWarning, match="fewer residuals"):
        levenberg_marquardt(lambda x: np.array([x[0] + x[1] - 1.0]), [0.0, 0.0])


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_lm_trace_monotone_property(x0):
    assert_monotone(levenberg_marquardt(register_function_model("rosenbrock_residuals"), x0, max_iter=30))


# stochastic ----------------------------------------------------------------


@pytest.mark.parametrize("g", [np.array([0.3, -2.0, 1e-3]), np.array([5.0, -1e-6, 0.7])])
def test_adam_first_step(g):
    cfg = StochasticOptimizerConfig("adam")
    step = make_stepper(cfg, 3).step(g)
    expected = -cfg.step_size * g / (np.abs(g) + cfg.eps)
    np.testing.assert_allclose(step, expected, rtol=0, atol=1e-12)
    assert np.all(np.abs(step) <= cfg.step_size)


@pytest.mark.parametrize("g", [np.array([0.3, -2.0, 1e-3])])
def test_adamax_first_step(g):
    cfg = StochasticOptimizerConfig("adamax")
    step = make_stepper(cfg, 3).step(g)
    np.testing.assert_allclose(step, -cfg.step_size * g / (np.abs(g) + cfg.eps), rtol=0, atol=1e-12)


@pytest.mark.parametrize("g", [np.array([0.3, -2.0, 1e-3])])
def test_rmsprop_first_step(g):
    cfg = StochasticOptimizerConfig("rmsprop", rho=0.9)
    step = make_stepper(cfg, 3).step(g)
    np.testing.assert_allclose(step, -cfg.step_size * g / np.sqrt(0.1 * g * g + cfg.eps), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["adam", "adamax", "rmsprop"])
def test_zero_gradient_is_a_fixed_point(kind):
    res = stochastic_minimize(lambda x: 1.0, [0.4, -0.2], StochasticOptimizerConfig(kind),
                              gradient=lambda x: np.zeros(2))
    assert res.iterations == 1 and res.reason == "gradient_tol"
    np.testing.assert_array_equal(res.x, [0.4, -0.2])


@pytest.mark.parametrize("kind", ["adam", "adamax", "rmsprop"])
def test_sphere_convergence(kind):
    sphere = register_function_model("sphere", input_dim=3)
    x0 = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)
    res = stochastic_minimize(sphere, x0, StochasticOptimizerConfig(kind, max_iter=10_000))
    assert np.linalg.norm(res.x) < 1e-2
    assert len(res.trace_f) == res.iterations + 1


def test_finite_difference_gradient_route():
    res = stochastic_minimize(lambda x: float((x[0] - 0.5) ** 2), [0.0],
                              StochasticOptimizerConfig("adam", step_size=0.01, max_iter=3000))
    assert abs(res.x[0] - 0.5) < 1e-2


def test_non_finite_gradient_raises():
    with pytest.raises(OptimizationError, match="non-finite gradient"):
        stochastic_minimize(lambda x: 0.0, [1.0], gradient=lambda x: np.array([np.nan]))


@pytest.mark.parametrize("kw", [dict(step_size=0.0), dict(beta1=1.0), dict(eps=0.0), dict(kind="sgd")])
def test_config_validation(kw):
    with pytest.raises(OptimizationError):
        StochasticOptimizerConfig(**kw)
