"""
Model validation on held-out multisines and on sine sweeps.

Multisine validation compares the steady-state model output with the
period-averaged measured output. Sweep validation compares a zero-initial-state
model simulation with the exact Bouc-Wen response, integrated at the Newmark
rate and decimated to the model rate like the training data.
"""
import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import signal as sps

from hysteresis_id import boucwen_sim
from hysteresis_id.boucwen_sim import BoucWenParameters, NewmarkConfig, TimeRecord
from hysteresis_id.errors import ConfigurationError
from hysteresis_id.linear_id import LinearModel
from hysteresis_id.pnlss import PeriodicData, PnlssModel, pnlss_simulate, steady_state_simulate
from hysteresis_id.signals import DFT_SCALING, SweepSpec, db, generate_sweep, rms

log = logging.getLogger(__name__)

Model = Union[LinearModel, PnlssModel]

SWEEP_WARMUP_FRACTION = 0.01
ERROR_BAND_HZ = (5.0, 200.0)


@dataclass
class ValidationReport:
    model_id: str
    rms_error_db: Optional[float]
    rms_error_m: Optional[float]
    relative_error_pct: Optional[float]
    diverged: bool = False
    divergence_time_s: Optional[float] = None
    output_rms_m: Optional[float] = None
    error_frequencies_hz: np.ndarray = field(default_factory=lambda: np.empty(0))
    error_spectrum_db: np.ndarray = field(default_factory=lambda: np.empty(0))
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "rms_error_db": self.rms_error_db,
            "rms_error_m": self.rms_error_m,
            "relative_error_pct": self.relative_error_pct,
            "diverged": self.diverged,
            "divergence_time_s": self.divergence_time_s,
            "output_rms_m": self.output_rms_m,
            "error_frequencies_hz": self.error_frequencies_hz,
            "error_spectrum_db": self.error_spectrum_db,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ValidationReport":
        return cls(
            model_id=data["model_id"],
            rms_error_db=data["rms_error_db"],
            rms_error_m=data["rms_error_m"],
            relative_error_pct=data["relative_error_pct"],
            diverged=data["diverged"],
            divergence_time_s=data["divergence_time_s"],
            output_rms_m=data["output_rms_m"],
            error_frequencies_hz=np.asarray(data["error_frequencies_hz"], dtype=float),
            error_spectrum_db=np.asarray(data["error_spectrum_db"], dtype=float),
            metadata=dict(data["metadata"]),
        )

    def spectrum_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"frequency_hz": self.error_frequencies_hz, "error_db": self.error_spectrum_db}
        )


def simulate(model: Model, u: np.ndarray) -> tuple[np.ndarray, Optional[int]]:
    """Zero-initial-state output and the divergence sample, if any."""
    if isinstance(model, LinearModel):
        system = (model.A, model.B, model.C, model.D, 1.0 / model.sample_rate_hz)
        _, y, _ = sps.dlsim(system, u)
        return y[:, 0], None
    result = pnlss_simulate(model, u)
    return result.y, result.divergence_index


def _steady_state_output(model: Model, data: PeriodicData) -> Optional[np.ndarray]:
    if isinstance(model, LinearModel):
        return model.periodic_response(data.u_period)
    return steady_state_simulate(model, data.u_period).y_period


def error_spectrum(
    model_output: np.ndarray,
    exact_output: np.ndarray,
    sample_rate_hz: float,
    band: tuple[float, float] = ERROR_BAND_HZ,
) -> tuple[np.ndarray, np.ndarray]:
    """DFT magnitude (dB) of the output difference over ``band``."""
    model_output = np.asarray(model_output)
    exact_output = np.asarray(exact_output)
    if model_output.shape != exact_output.shape:
        raise ConfigurationError(
            f"Outputs differ in length: {len(model_output)} and {len(exact_output)}"
        )
    spec = np.fft.rfft(model_output - exact_output, norm=DFT_SCALING)
    freqs = np.fft.rfftfreq(len(model_output), 1.0 / sample_rate_hz)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    return freqs[mask], db(spec[mask])


def validate_multisine(
    model: Model,
    record: TimeRecord,
    model_id: str = "",
    band: tuple[float, float] = ERROR_BAND_HZ,
) -> ValidationReport:
    data = PeriodicData.from_record(record, lines=np.empty(0, dtype=int))
    y_model = _steady_state_output(model, data)
    output_rms = rms(data.y_period)

    if y_model is None:
        log.warning(f"Model {model_id} diverged on the validation multisine")
        return ValidationReport(
            model_id, None, None, None, diverged=True, output_rms_m=output_rms
        )

    err = y_model - data.y_period
    error_m = rms(err)
    freqs, spectrum = error_spectrum(y_model, data.y_period, record.sample_rate_hz, band)
    report = ValidationReport(
        model_id=model_id,
        rms_error_db=float(db(error_m)),
        rms_error_m=error_m,
        relative_error_pct=100 * error_m / output_rms,
        output_rms_m=output_rms,
        error_frequencies_hz=freqs,
        error_spectrum_db=spectrum,
        metadata={"samples_per_period": record.samples_per_period, **record.metadata},
    )
    log.info(f"Validation {model_id}: {report.rms_error_db:.2f} dB ({1e3 * error_m:.4f} mm)")
    return report


def exact_sweep_response(
    params: BoucWenParameters, newmark: NewmarkConfig, sweep: SweepSpec
) -> TimeRecord:
    """Bouc-Wen response to the sweep at the integration rate, decimated to the sweep rate."""
    fine = generate_sweep(sweep.with_sample_rate(newmark.step_hz))
    trajectory = boucwen_sim.newmark_simulate(params, newmark, fine)
    record = boucwen_sim.acquire(trajectory, sweep.sample_rate_hz)
    record.metadata["amplitude_n"] = sweep.amplitude_n
    return record


@dataclass
class SweepPoint:
    model_id: str
    amplitude_n: float
    relative_error_pct: Optional[float]
    diverged: bool
    divergence_time_s: Optional[float]
    exact_rms_m: float


def compare_sweep(model: Model, exact: TimeRecord, model_id: str = "") -> SweepPoint:
    y_model, divergence = simulate(model, exact.input)
    amplitude = exact.metadata.get("amplitude_n", float(np.max(np.abs(exact.input))))
    start = int(np.ceil(SWEEP_WARMUP_FRACTION * len(exact.output)))
    exact_rms = rms(exact.output[start:])

    if divergence is not None:
        time_s = divergence / exact.sample_rate_hz
        log.info(f"{model_id} diverged at {amplitude} N (t = {time_s:.2f} s)")
        return SweepPoint(model_id, amplitude, None, True, time_s, exact_rms)

    error = 100 * rms(y_model[start:] - exact.output[start:]) / exact_rms
    return SweepPoint(model_id, amplitude, error, False, None, exact_rms)


def _sweep_at(
    amplitude: float,
    models: Mapping[str, Model],
    params: BoucWenParameters,
    newmark: NewmarkConfig,
    sweep: SweepSpec,
) -> list[SweepPoint]:
    exact = exact_sweep_response(params, newmark, sweep.with_amplitude(amplitude))
    return [compare_sweep(model, exact, model_id) for model_id, model in models.items()]


def validate_sweep(
    models: Union[Model, Mapping[str, Model]],
    params: BoucWenParameters,
    newmark: NewmarkConfig,
    sweep: SweepSpec,
    amplitudes: Sequence[float],
    workers: int = 1,
) -> pd.DataFrame:
    """
    Relative sweep error of every model at every amplitude. Divergent runs are
    reported with ``diverged`` set and no error value.
    """
    if any(a <= 0 for a in amplitudes):
        raise ConfigurationError(f"Amplitudes must be positive, got {list(amplitudes)}")
    if not isinstance(models, Mapping):
        models = {"model": models}

    run = functools.partial(_sweep_at, models=models, params=params, newmark=newmark, sweep=sweep)
    if workers > 1 and len(amplitudes) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run, amplitudes))
    else:
        points = [run(a) for a in amplitudes]

    rows = [vars(p) for per_amplitude in points for p in per_amplitude]
    return pd.DataFrame(
        rows,
        columns=[
            "model_id",
            "amplitude_n",
            "relative_error_pct",
            "diverged",
            "divergence_time_s",
            "exact_rms_m",
        ],
    )


def first_divergent_amplitude(table: pd.DataFrame, model_id: str) -> Optional[float]:
    rows = table[(table["model_id"] == model_id) & table["diverged"]]
    return None if rows.empty else float(rows["amplitude_n"].min())


def summary_row(model_id: str, model: Model, report: ValidationReport) -> dict:
    """One line of the model comparison table."""
    degrees = list(model.degrees) if isinstance(model, PnlssModel) else []
    count = (
        model.parameter_count
        if isinstance(model, PnlssModel)
        else int(sum(m.size for m in (model.A, model.B, model.C, model.D)))
    )
    return {
        "model_id": model_id,
        "degrees": "-".join(str(d) for d in degrees) or "linear",
        "parameter_count": count,
        "rms_error_db": report.rms_error_db,
        "rms_error_mm": None if report.rms_error_m is None else 1e3 * report.rms_error_m,
        "diverged": report.diverged,
    }
