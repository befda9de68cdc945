import numpy as np
import pytest

from hysteresis_id.errors import ConfigurationError
from hysteresis_id.signals import (
    ExcitationSpec,
    GridKind,
    LineClass,
    SweepSpec,
    classify_lines,
    design_multisine,
    dft,
    excited_lines,
    generate_multisine,
    generate_odd_detection_multisine,
    generate_sweep,
    idft,
    in_band_bins,
    period_spectra,
    rms,
)


def test_excited_line_count_for_the_reference_grid():
    spec = ExcitationSpec(750.0, 8192, 5.0, 150.0, 50.0)
    labels = classify_lines(spec)

    assert len(labels) == 4097
    assert np.count_nonzero(labels == LineClass.EXCITED.value) == 1584
    assert in_band_bins(spec)[0] == 55
    assert in_band_bins(spec)[-1] == 1638


def test_band_edges_on_a_bin_are_included():
    # f0 = 1 Hz, so 5 Hz and 20 Hz fall exactly on bins 5 and 20
    spec = ExcitationSpec(100.0, 100, 5.0, 20.0, 1.0)
    np.testing.assert_array_equal(in_band_bins(spec), np.arange(5, 21))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"band_high_hz": 400.0},
        {"band_low_hz": 0.0},
        {"band_low_hz": 160.0},
        {"target_rms_n": 0.0},
        {"grid_kind": "random"},
    ],
)
def test_invalid_excitation_rejected(small_spec, kwargs):
    with pytest.raises(ConfigurationError):
        ExcitationSpec(**{**small_spec.to_dict(), **kwargs})


def test_band_without_lines_rejected():
    spec = ExcitationSpec(100.0, 100, 5.2, 5.8, 1.0)
    with pytest.raises(ConfigurationError):
        generate_multisine(spec, 0)


def test_multisine_reaches_target_rms_on_excited_lines_only(small_spec):
    u = generate_multisine(small_spec, phase_seed=3)
    assert len(u) == small_spec.num_samples_per_period
    assert rms(u) == pytest.approx(small_spec.target_rms_n, rel=1e-12)

    spectrum = np.abs(np.fft.rfft(u))
    lines = excited_lines(classify_lines(small_spec))
    off = np.setdiff1d(np.arange(len(spectrum)), lines)
    assert spectrum[off].max() < 1e-10 * spectrum[lines].max()
    # flat amplitude spectrum
    np.testing.assert_allclose(spectrum[lines], spectrum[lines][0], rtol=1e-9)


def test_phase_seed_controls_the_realisation(small_spec):
    a = generate_multisine(small_spec, 1)
    np.testing.assert_array_equal(a, generate_multisine(small_spec, 1))
    assert np.max(np.abs(a - generate_multisine(small_spec, 2))) > 1.0


def test_design_evaluates_the_sampled_signal_in_continuous_time(small_spec):
    design = design_multisine(small_spec, 5)
    t = np.arange(small_spec.num_samples_per_period) / small_spec.sample_rate_hz
    np.testing.assert_allclose(design.evaluate(t), design.sample(), atol=1e-9)

    fine = design.sample(oversampling=4)
    np.testing.assert_allclose(fine[::4], design.sample(), atol=1e-9)


def test_odd_grid_has_one_detection_line_per_group(odd_spec):
    labels = classify_lines(odd_spec)
    bins = in_band_bins(odd_spec)
    odd = bins[bins % 2 == 1]

    assert np.all(labels[bins[bins % 2 == 0]] == LineClass.EVEN_DETECTION.value)
    n_groups = len(odd) // odd_spec.group_size
    for g in range(n_groups):
        group = labels[odd[g * 3 : g * 3 + 3]]
        assert np.count_nonzero(group == LineClass.ODD_DETECTION.value) == 1
        assert np.count_nonzero(group == LineClass.ODD_EXCITED.value) == 2

    # an incomplete trailing group stays excited
    trailing = labels[odd[n_groups * 3 :]]
    assert np.all(trailing == LineClass.ODD_EXCITED.value)


def test_detection_lines_depend_only_on_the_grid_seed(odd_spec):
    first = classify_lines(odd_spec)
    np.testing.assert_array_equal(first, classify_lines(odd_spec))
    other = ExcitationSpec(**{**odd_spec.to_dict(), "rng_seed": odd_spec.rng_seed + 1})
    assert np.any(first != classify_lines(other))


def test_odd_detection_multisine_leaves_detection_lines_empty(odd_spec):
    u, labels = generate_odd_detection_multisine(odd_spec, phase_seed=9)
    spectrum = np.abs(np.fft.rfft(u))
    excited = np.isin(labels, [LineClass.ODD_EXCITED.value])
    detection = np.isin(labels, [LineClass.ODD_DETECTION.value, LineClass.EVEN_DETECTION.value])

    assert spectrum[detection].max() < 1e-10 * spectrum[excited].max()
    assert rms(u) == pytest.approx(odd_spec.target_rms_n, rel=1e-12)


def test_odd_detection_multisine_needs_an_odd_grid(small_spec):
    with pytest.raises(ConfigurationError):
        generate_odd_detection_multisine(small_spec)


def test_sweep_follows_the_linear_frequency_law():
    spec = SweepSpec(20.0, 50.0, 600.0, 2.0, 750.0)
    u = generate_sweep(spec)

    assert spec.duration_s == pytest.approx(3.0)
    assert len(u) == 2250
    assert u[0] == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(u)) <= spec.amplitude_n

    t = np.arange(len(u)) / spec.sample_rate_hz
    idx = np.flatnonzero(np.sign(u[:-1]) * np.sign(u[1:]) < 0)
    # linear interpolation of the zero crossings
    crossings = t[idx] - u[idx] * (t[idx + 1] - t[idx]) / (u[idx + 1] - u[idx])
    window = crossings[(crossings > 1.3) & (crossings < 1.7)]
    measured = (len(window) - 1) / (2 * (window[-1] - window[0]))
    expected = spec.instantaneous_frequency_hz(0.5 * (window[0] + window[-1]))
    assert measured == pytest.approx(expected, rel=0.01)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"f_start_hz": 50.0, "f_end_hz": 20.0},
        {"f_end_hz": 400.0},
        {"rate_hz_per_min": 0.0},
        {"amplitude_n": -1.0},
    ],
)
def test_invalid_sweep_rejected(kwargs):
    base = {
        "f_start_hz": 20.0,
        "f_end_hz": 50.0,
        "rate_hz_per_min": 10.0,
        "amplitude_n": 1.0,
        "sample_rate_hz": 750.0,
    }
    with pytest.raises(ConfigurationError):
        SweepSpec(**{**base, **kwargs})


def test_dft_scaling_preserves_energy():
    x = np.random.default_rng(0).normal(size=512)
    spectrum = dft(x, sample_rate_hz=750.0)

    assert np.sum(np.abs(spectrum.values) ** 2) == pytest.approx(np.sum(x**2), rel=1e-12)
    assert spectrum.f0_hz == pytest.approx(750.0 / 512)
    np.testing.assert_allclose(idft(spectrum), x, atol=1e-12)


def test_period_spectra_shape_and_length_check():
    x = np.random.default_rng(1).normal(size=3 * 64)
    assert period_spectra(x, 64).shape == (3, 33)

    with pytest.raises(ConfigurationError):
        period_spectra(x[:-1], 64)


def test_full_grid_labels_every_in_band_bin(small_spec):
    labels = classify_lines(small_spec)
    assert small_spec.grid_kind is GridKind.FULL
    np.testing.assert_array_equal(excited_lines(labels), in_band_bins(small_spec))
    assert labels[0] == LineClass.OUT_OF_BAND.value
