import numpy as np
import pytest

from hysteresis_id.errors import ConfigurationError, NumericalError
from hysteresis_id.levmar import (
    LMConfig,
    column_scale,
    cost_of,
    levenberg_marquardt,
    lm_step,
    solve_damped,
)


def rosenbrock(x):
    return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])


def rosenbrock_jacobian(x):
    return np.array([[-20 * x[0], 10.0], [-1.0, 0.0]])


def test_rosenbrock_minimum():
    x, trace = levenberg_marquardt(np.array([-1.2, 1.0]), rosenbrock, rosenbrock_jacobian)

    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)
    assert trace.stop_reason != "max_iter"
    assert trace.entries[0]["iteration"] == 0


@pytest.mark.parametrize("scale_columns", [True, False])
def test_linear_least_squares_matches_lstsq(scale_columns):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(40, 5)) * np.array([1.0, 10.0, 100.0, 0.1, 1.0])
    b = rng.normal(size=40)

    x, _ = levenberg_marquardt(
        np.zeros(5),
        lambda x: a @ x - b,
        lambda x: a,
        LMConfig(scale_columns=scale_columns),
    )
    expected = np.linalg.lstsq(a, b, rcond=None)[0]
    np.testing.assert_allclose(x, expected, rtol=1e-6, atol=1e-9)


def test_accepted_costs_never_increase():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 50)
    y = 2.0 * np.exp(-3.0 * t) + 0.01 * rng.normal(size=t.size)

    def residuals(p):
        return p[0] * np.exp(-p[1] * t) - y

    def jacobian(p):
        e = np.exp(-p[1] * t)
        return np.column_stack([e, -p[0] * t * e])

    _, trace = levenberg_marquardt(np.array([0.5, 0.1]), residuals, jacobian)
    costs = trace.accepted_costs()
    assert len(costs) > 1
    assert np.all(np.diff(costs) <= 0)

    frame = trace.to_frame()
    assert {"iteration", "cost", "damping", "accepted"} <= set(frame.columns)


def test_divergent_candidate_is_rejected():
    x = np.array([1.0, 2.0])
    jac = np.eye(2)
    r = np.array([1.0, 1.0])

    result = lm_step(x, jac, r, 1e-2, lambda p: None)

    assert not result.accepted
    np.testing.assert_array_equal(result.params, x)
    assert result.damping == pytest.approx(1e-1)
    assert result.cost == cost_of(r)


def test_accepted_step_lowers_damping():
    x = np.array([3.0])
    result = lm_step(x, np.eye(1), np.array([3.0]), 1.0, lambda p: p)

    assert result.accepted
    assert result.cost < 9.0
    assert result.damping == pytest.approx(0.1)


def test_damped_solution_shrinks_with_damping():
    jac = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    r = np.array([1.0, -1.0, 0.5])
    small = solve_damped(jac, r, 1e-8)
    large = solve_damped(jac, r, 1e4)

    np.testing.assert_allclose(small, -np.linalg.lstsq(jac, r, rcond=None)[0], rtol=1e-6)
    assert np.linalg.norm(large) < 1e-3 * np.linalg.norm(small)


def test_monitor_values_are_stored_on_accepted_entries():
    _, trace = levenberg_marquardt(
        np.array([-1.2, 1.0]),
        rosenbrock,
        rosenbrock_jacobian,
        LMConfig(max_iter=5),
        monitor=lambda x: {"distance": float(np.linalg.norm(x - 1))},
    )
    accepted = [e for e in trace.entries if e["accepted"]]
    assert all("distance" in e for e in accepted)


def test_cost_of_divergent_residuals_is_infinite():
    assert cost_of(None) == np.inf
    assert cost_of(np.array([np.nan, 1.0])) == np.inf
    assert cost_of(np.array([3.0, 4.0])) == 25.0


def test_non_finite_initial_cost_raises():
    with pytest.raises(NumericalError):
        levenberg_marquardt(np.zeros(2), lambda x: None, lambda x: np.eye(2))


@pytest.mark.parametrize(
    "kwargs",
    [{"max_iter": -1}, {"damping_increase": 1.0}, {"damping_decrease": 1.5}, {"max_rejections": 0}],
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        LMConfig(**kwargs)


def test_step_is_shared_with_the_nonlinear_fit():
    from hysteresis_id import pnlss

    assert pnlss.lm_step is lm_step


def badly_scaled_problem():
    rng = np.random.default_rng(8)
    jac = rng.normal(size=(30, 4)) * np.array([1.0, 50.0, 0.02, 3.0])
    return np.zeros(4), jac, rng.normal(size=30)


def test_heavy_damping_steps_down_the_gradient():
    x, jac, r = badly_scaled_problem()
    gradient = jac.T @ r

    result = lm_step(x, jac, r, 1e10, lambda p: jac @ p + r)

    cosine = -(result.step @ gradient) / (np.linalg.norm(result.step) * np.linalg.norm(gradient))
    assert cosine > 0.999


@pytest.mark.parametrize("scaled", [False, True])
def test_light_damping_takes_the_gauss_newton_step(scaled):
    x, jac, r = badly_scaled_problem()
    scale = column_scale(jac) if scaled else None

    result = lm_step(x, jac, r, 1e-12, lambda p: jac @ p + r, scale)

    assert result.accepted
    np.testing.assert_allclose(result.step, -np.linalg.lstsq(jac, r, rcond=None)[0], rtol=1e-8)
