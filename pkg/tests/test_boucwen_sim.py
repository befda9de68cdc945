import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hysteresis_id import boucwen_sim
from hysteresis_id.boucwen_sim import (
    BoucWenParameters,
    NewmarkConfig,
    SimState,
    Trajectory,
    acquire,
    decimation_ratio,
    hysteresis_loop,
    linearized_modal,
    loop_area,
    newmark_simulate,
    restoring_force,
    steady_state_record,
)
from hysteresis_id.errors import ConfigurationError
from hysteresis_id.signals import ExcitationSpec, design_multisine, generate_multisine, rms


def test_linearized_modal_parameters():
    modal = linearized_modal(BoucWenParameters())

    assert modal.natural_frequency_hz == pytest.approx(35.59, abs=0.01)
    assert 100 * modal.damping_ratio == pytest.approx(1.12, abs=0.01)
    assert not modal.overdamped
    # the hysteretic state adds a pole at the origin
    assert np.min(np.abs(modal.poles)) < 1e-9


def test_overdamped_linearisation_is_flagged():
    modal = linearized_modal(BoucWenParameters(c_l=1e4))
    assert modal.overdamped
    assert modal.damping_ratio > 1


@pytest.mark.parametrize("kwargs", [{"nu": 0.5}, {"m_l": 0.0}])
def test_invalid_parameters_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        BoucWenParameters(**kwargs)


def test_invalid_newmark_config_rejected():
    with pytest.raises(ConfigurationError):
        NewmarkConfig(b=0.0)


def test_restoring_force_scalar_and_array():
    params = BoucWenParameters()
    r, z_dot = restoring_force(SimState(y=1e-3, ydot=0.1, z=20.0), params)

    assert r == pytest.approx(params.k_l * 1e-3 + params.c_l * 0.1)
    expected = params.alpha * 0.1 - params.beta * (
        params.gamma * 0.1 * 20.0 + params.delta * 0.1 * 20.0
    )
    assert z_dot == pytest.approx(expected)

    states = SimState(
        y=np.array([1e-3, -1e-3]), ydot=np.array([0.1, -0.1]), z=np.array([20.0, -20.0])
    )
    r_arr, z_dot_arr = restoring_force(states, params)
    np.testing.assert_allclose(r_arr, [r, -r])
    np.testing.assert_allclose(z_dot_arr, [z_dot, -z_dot])


def _short_multisine(step_hz: float, duration_s: float = 0.5):
    spec = ExcitationSpec(750.0, 1024, 5.0, 150.0, 50.0)
    design = design_multisine(spec, 2)
    ratio = int(round(step_hz / spec.sample_rate_hz))
    samples = int(round(duration_s * step_hz))
    return design, design.sample(oversampling=ratio)[:samples]


def _oracle(params: BoucWenParameters, design, t: np.ndarray) -> np.ndarray:
    def rhs(time, state):
        y, v, z = state
        r, z_dot = restoring_force(SimState(y=y, ydot=v, z=z), params)
        return [v, (design.evaluate(time)[0] - r - z) / params.m_l, z_dot]

    sol = solve_ivp(
        rhs, (0.0, t[-1]), [0.0, 0.0, 0.0], method="DOP853", t_eval=t, rtol=1e-11, atol=1e-14
    )
    assert sol.success
    return sol.y[0]


def test_newmark_agrees_with_an_ode_oracle_and_converges_at_second_order():
    params = BoucWenParameters()
    errors = []
    for step_hz in (15000.0, 30000.0):
        design, u = _short_multisine(step_hz)
        trajectory = newmark_simulate(params, NewmarkConfig(step_hz=step_hz), u)
        exact = _oracle(params, design, np.arange(len(u)) / step_hz)
        errors.append(rms(trajectory.y - exact) / rms(exact))

    assert errors[0] < 5e-3
    assert errors[0] / errors[1] > 2.5


def test_newmark_satisfies_the_equation_of_motion(fast_newmark):
    params = BoucWenParameters()
    _, u = _short_multisine(fast_newmark.step_hz, 0.3)
    trajectory = newmark_simulate(params, fast_newmark, u)

    residual = trajectory.equilibrium_residual(params)
    assert np.max(np.abs(residual)) < 1e-8 * np.max(np.abs(u))
    assert len(trajectory) == len(u)


def test_newmark_is_odd_in_the_input(fast_newmark):
    params = BoucWenParameters()
    _, u = _short_multisine(fast_newmark.step_hz, 0.2)
    plus = newmark_simulate(params, fast_newmark, u)
    minus = newmark_simulate(params, fast_newmark, -u)

    np.testing.assert_allclose(minus.y, -plus.y, rtol=0, atol=1e-15 * np.max(np.abs(plus.y)))
    np.testing.assert_allclose(minus.z, -plus.z, rtol=0, atol=1e-15 * np.max(np.abs(plus.z)))


def test_newmark_starts_from_the_given_state(fast_newmark):
    params = BoucWenParameters()
    state = SimState(y=1e-3, ydot=0.0, z=50.0)
    trajectory = newmark_simulate(params, fast_newmark, np.zeros(100), initial_state=state)

    assert trajectory.y[0] == state.y
    assert trajectory.z[0] == state.z
    expected_acc = (0.0 - params.k_l * state.y - params.c_l * state.ydot - state.z) / params.m_l
    assert trajectory.yddot[0] == pytest.approx(expected_acc)


def test_decimation_ratio():
    assert decimation_ratio(15000.0, 750.0) == 20
    with pytest.raises(ConfigurationError):
        decimation_ratio(15000.0, 700.0)


def _sine_trajectory(step_hz: float = 7500.0, samples: int = 30000) -> Trajectory:
    t = np.arange(samples) / step_hz
    u = 10.0 * np.sin(2 * np.pi * 10.0 * t)
    y = 1e-4 * np.sin(2 * np.pi * 10.0 * t - 0.3)
    zeros = np.zeros(samples)
    return Trajectory(u, y, zeros, zeros, zeros, zeros, step_hz)


def test_acquire_adds_noise_at_the_requested_snr():
    trajectory = _sine_trajectory()
    clean = acquire(trajectory, 750.0)
    noisy = acquire(trajectory, 750.0, snr_db=40.0, noise_seed=7)

    assert clean.noise_sigma == 0.0
    assert noisy.noise_sigma == pytest.approx(rms(clean.output) / 100, rel=1e-12)
    assert rms(noisy.output - clean.output) == pytest.approx(noisy.noise_sigma, rel=0.1)
    np.testing.assert_array_equal(noisy.input, trajectory.u[::10])

    again = acquire(trajectory, 750.0, snr_db=40.0, noise_seed=7)
    np.testing.assert_array_equal(noisy.output, again.output)
    other = acquire(trajectory, 750.0, snr_db=40.0, noise_seed=8)
    assert np.any(other.output != noisy.output)


def test_acquire_keeps_in_band_content():
    trajectory = _sine_trajectory()
    record = acquire(trajectory, 750.0)
    # 10 Hz lies far below the 300 Hz anti-alias cut-off
    np.testing.assert_allclose(record.output[300:-300], trajectory.y[::10][300:-300], atol=1e-8)


def test_steady_state_record_layout(small_spec, fast_newmark):
    spec = dataclasses.replace(small_spec, num_samples_per_period=256)
    design = design_multisine(spec, 1)
    record = steady_state_record(
        BoucWenParameters(),
        fast_newmark,
        design.sample(),
        spec.sample_rate_hz,
        total_periods=4,
        discard_periods=2,
        excited_lines=design.lines,
    )

    assert record.periods == 2
    assert record.samples_per_period == 256
    assert len(record.output) == 512
    np.testing.assert_allclose(record.input[:256], design.sample(), atol=1e-9)
    assert record.transient_level_db < 0
    assert record.metadata["discard_periods"] == 2
    np.testing.assert_array_equal(record.excited_lines, design.lines)


def test_steady_state_needs_a_discarded_period(small_spec, fast_newmark):
    u = generate_multisine(small_spec, 0)
    with pytest.raises(ConfigurationError):
        steady_state_record(BoucWenParameters(), fast_newmark, u, 750.0, 2, 0)


def test_time_record_rejects_inconsistent_lengths():
    with pytest.raises(ConfigurationError):
        boucwen_sim.TimeRecord(np.zeros(10), np.zeros(10), 750.0, 2, 4)


def test_hysteresis_loop_encloses_area_only_with_hysteresis(fast_newmark):
    params = BoucWenParameters()
    u, y = hysteresis_loop(params, fast_newmark)
    u_lin, y_lin = hysteresis_loop(dataclasses.replace(params, beta=0.0), fast_newmark)

    assert len(u) == 7500
    assert loop_area(u, y) > 10 * loop_area(u_lin, y_lin)
    assert np.max(np.abs(u)) == pytest.approx(120.0, rel=1e-6)


def test_loop_area_of_an_ellipse():
    theta = np.linspace(0, 2 * np.pi, 10000, endpoint=False)
    assert loop_area(3 * np.cos(theta), 2 * np.sin(theta)) == pytest.approx(6 * np.pi, rel=1e-6)


@pytest.mark.slow
def test_transient_has_died_out_in_a_full_size_record():
    spec = ExcitationSpec(750.0, 8192, 5.0, 150.0, 50.0)
    design = design_multisine(spec, 1)
    record = steady_state_record(
        BoucWenParameters(), NewmarkConfig(), design.sample(), 750.0, 4, 1
    )
    assert record.transient_level_db < -250.0
