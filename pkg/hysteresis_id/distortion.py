"""
Nonparametric distortion analysis with detection lines.

The output of an odd random-phase multisine experiment is averaged coherently
over its P steady-state periods. Output energy at odd detection lines comes from
odd nonlinearities, at even detection lines from even ones; the period-to-period
standard deviation (divided by sqrt(P)) gives the noise level of the mean.
All levels are in dB re 1 m.
"""
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from hysteresis_id import boucwen_sim
from hysteresis_id.boucwen_sim import BoucWenParameters, NewmarkConfig, TimeRecord
from hysteresis_id.errors import ConfigurationError
from hysteresis_id.signals import (
    DETECTION_CLASSES,
    EXCITED_CLASSES,
    ExcitationSpec,
    LineClass,
    db,
    generate_odd_detection_multisine,
    period_spectra,
    rms,
)

log = logging.getLogger(__name__)

INPUT_LEAKAGE_TOLERANCE = 1e-8


@dataclass
class DistortionReport:
    frequencies_hz: np.ndarray
    labels: np.ndarray
    output_at_excited: np.ndarray
    odd_distortion: np.ndarray
    even_distortion: np.ndarray
    noise_level: np.ndarray
    rms_input_n: float

    def levels(self) -> np.ndarray:
        """Output level at every bin whatever its class, NaN out of band."""
        out = np.full(len(self.labels), np.nan)
        for arr in (self.output_at_excited, self.odd_distortion, self.even_distortion):
            mask = ~np.isnan(arr)
            out[mask] = arr[mask]
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "bin": np.arange(len(self.labels)),
                "frequency_hz": self.frequencies_hz,
                "class": self.labels,
                "level_db": self.levels(),
                "noise_db": self.noise_level,
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, rms_input_n: float) -> "DistortionReport":
        labels = frame["class"].to_numpy(dtype=str)
        level = frame["level_db"].to_numpy(dtype=float)

        def select(classes):
            return np.where(np.isin(labels, classes), level, np.nan)

        return cls(
            frequencies_hz=frame["frequency_hz"].to_numpy(dtype=float),
            labels=labels,
            output_at_excited=select(EXCITED_CLASSES),
            odd_distortion=select([LineClass.ODD_DETECTION.value]),
            even_distortion=select([LineClass.EVEN_DETECTION.value]),
            noise_level=frame["noise_db"].to_numpy(dtype=float),
            rms_input_n=rms_input_n,
        )


def _masked_db(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.full(len(values), np.nan)
    out[mask] = db(values[mask])
    return out


def analyze_distortions(record: TimeRecord, labels: np.ndarray) -> DistortionReport:
    if record.periods < 2:
        raise ConfigurationError(
            f"At least 2 periods are needed to estimate the noise level, got {record.periods}"
        )
    n_bins = record.samples_per_period // 2 + 1
    if len(labels) != n_bins:
        raise ConfigurationError(
            f"Line classification has {len(labels)} bins, the record has {n_bins}"
        )

    u_spec = period_spectra(record.input, record.samples_per_period).mean(axis=0)
    y_periods = period_spectra(record.output, record.samples_per_period)

    excited = np.isin(labels, EXCITED_CLASSES)
    detection = np.isin(labels, DETECTION_CLASSES)
    u_peak = np.abs(u_spec[excited]).max() if excited.any() else 0.0
    if detection.any() and np.abs(u_spec[detection]).max() > INPUT_LEAKAGE_TOLERANCE * u_peak:
        raise ConfigurationError("The input excites detection lines")

    y_mean = y_periods.mean(axis=0)
    noise = y_periods.std(axis=0, ddof=1) / np.sqrt(record.periods)
    in_band = excited | detection

    return DistortionReport(
        frequencies_hz=np.arange(n_bins) * record.sample_rate_hz / record.samples_per_period,
        labels=np.asarray(labels),
        output_at_excited=_masked_db(np.abs(y_mean), excited),
        odd_distortion=_masked_db(np.abs(y_mean), labels == LineClass.ODD_DETECTION.value),
        even_distortion=_masked_db(np.abs(y_mean), labels == LineClass.EVEN_DETECTION.value),
        noise_level=_masked_db(noise, in_band),
        rms_input_n=rms(record.input),
    )


def mean_level_db(
    levels_db: np.ndarray,
    frequencies_hz: np.ndarray,
    band: Optional[tuple[float, float]] = None,
) -> float:
    """Power average of a NaN-masked dB array, optionally restricted to a band."""
    mask = ~np.isnan(levels_db)
    if band is not None:
        mask &= (frequencies_hz >= band[0]) & (frequencies_hz <= band[1])
    if not mask.any():
        return np.nan
    return float(10 * np.log10(np.mean(10 ** (levels_db[mask] / 10))))


@dataclass(frozen=True)
class DistortionExperiment:
    params: BoucWenParameters
    newmark: NewmarkConfig
    spec: ExcitationSpec
    total_periods: int
    discard_periods: int
    snr_db: Optional[float] = None
    noise_seed: int = 0
    phase_seed: int = 0


def run_distortion_experiment(experiment: DistortionExperiment) -> DistortionReport:
    u, labels = generate_odd_detection_multisine(experiment.spec, experiment.phase_seed)
    record = boucwen_sim.steady_state_record(
        experiment.params,
        experiment.newmark,
        u,
        experiment.spec.sample_rate_hz,
        experiment.total_periods,
        experiment.discard_periods,
        snr_db=experiment.snr_db,
        noise_seed=experiment.noise_seed,
    )
    return analyze_distortions(record, labels)


def distortion_sweep(
    amplitudes: Sequence[float], experiment: DistortionExperiment, workers: int = 1
) -> list[DistortionReport]:
    """One report per RMS amplitude; grid, phases and seeds are shared."""
    if any(a <= 0 for a in amplitudes):
        raise ConfigurationError(f"Amplitudes must be positive, got {list(amplitudes)}")

    experiments = [
        dataclasses.replace(experiment, spec=experiment.spec.with_rms(a)) for a in amplitudes
    ]
    if workers > 1 and len(experiments) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_distortion_experiment, experiments))
    else:
        reports = [run_distortion_experiment(e) for e in experiments]

    for a, report in zip(amplitudes, reports):
        log.info(
            f"{a} N RMS: odd {mean_level_db(report.odd_distortion, report.frequencies_hz):.1f} dB, "
            f"even {mean_level_db(report.even_distortion, report.frequencies_hz):.1f} dB, "
            f"noise {mean_level_db(report.noise_level, report.frequencies_hz):.1f} dB"
        )
    return reports
