"""
Excitation signals and DFT conventions.

Multisines are periodic sums of harmonically related cosines with random phases
drawn uniformly on [0, 2π). Two frequency grids are supported:

    full                 every bin with band_low <= k*f0 <= band_high is excited
    odd_with_detection   only odd bins are candidates; in every group of
                         `group_size` consecutive odd in-band bins one bin is
                         left unexcited (odd detection line) and all even
                         in-band bins are unexcited (even detection lines)

All spectra use the symmetric 1/sqrt(N) scaling (numpy ``norm="ortho"``), so
``sum(|x|**2) == sum(|X|**2)`` for a full-length DFT.
"""
import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional

import numpy as np
import pandas as pd
from scipy import signal as sps

from hysteresis_id.errors import ConfigurationError

log = logging.getLogger(__name__)

DFT_SCALING = "ortho"


class GridKind(str, Enum):
    FULL = "full"
    ODD_WITH_DETECTION = "odd_with_detection"


class LineClass(str, Enum):
    EXCITED = "excited"
    ODD_EXCITED = "odd_excited"
    ODD_DETECTION = "odd_detection"
    EVEN_DETECTION = "even_detection"
    OUT_OF_BAND = "out_of_band"


EXCITED_CLASSES = (LineClass.EXCITED.value, LineClass.ODD_EXCITED.value)
DETECTION_CLASSES = (LineClass.ODD_DETECTION.value, LineClass.EVEN_DETECTION.value)


@dataclass(frozen=True)
class ExcitationSpec:
    sample_rate_hz: float
    num_samples_per_period: int
    band_low_hz: float
    band_high_hz: float
    target_rms_n: float
    grid_kind: GridKind = GridKind.FULL
    group_size: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "grid_kind", GridKind(self.grid_kind))
        except ValueError:
            raise ConfigurationError(f"Unknown grid kind {self.grid_kind!r}")

        if self.sample_rate_hz <= 0:
            raise ConfigurationError("sample_rate_hz must be positive")
        if int(self.num_samples_per_period) != self.num_samples_per_period or (
            self.num_samples_per_period <= 0
        ):
            raise ConfigurationError("num_samples_per_period must be a positive integer")
        if not 0 < self.band_low_hz < self.band_high_hz < self.sample_rate_hz / 2:
            raise ConfigurationError(
                f"Band [{self.band_low_hz}, {self.band_high_hz}] Hz must satisfy "
                f"0 < low < high < {self.sample_rate_hz / 2} Hz"
            )
        if self.target_rms_n <= 0:
            raise ConfigurationError("target_rms_n must be positive")
        if self.group_size < 2:
            raise ConfigurationError("group_size must be at least 2")

    @property
    def f0_hz(self) -> float:
        return self.sample_rate_hz / self.num_samples_per_period

    @property
    def num_bins(self) -> int:
        return self.num_samples_per_period // 2 + 1

    def with_rms(self, target_rms_n: float) -> "ExcitationSpec":
        return dataclasses.replace(self, target_rms_n=target_rms_n)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["grid_kind"] = self.grid_kind.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExcitationSpec":
        return cls(**data)


@dataclass(frozen=True)
class SweepSpec:
    f_start_hz: float
    f_end_hz: float
    rate_hz_per_min: float
    amplitude_n: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.f_start_hz <= 0 or self.f_end_hz <= 0:
            raise ConfigurationError("Sweep frequencies must be positive")
        if self.f_start_hz >= self.f_end_hz:
            raise ConfigurationError(
                f"Sweep must increase in frequency, got {self.f_start_hz} -> {self.f_end_hz} Hz"
            )
        if self.rate_hz_per_min <= 0 or self.amplitude_n <= 0 or self.sample_rate_hz <= 0:
            raise ConfigurationError("Sweep rate, amplitude and sample rate must be positive")
        if self.f_end_hz >= self.sample_rate_hz / 2:
            raise ConfigurationError("Sweep end frequency must lie below the Nyquist frequency")

    @property
    def duration_s(self) -> float:
        return (self.f_end_hz - self.f_start_hz) / (self.rate_hz_per_min / 60.0)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def instantaneous_frequency_hz(self, t: np.ndarray) -> np.ndarray:
        return self.f_start_hz + (self.f_end_hz - self.f_start_hz) * np.asarray(t) / self.duration_s

    def with_amplitude(self, amplitude_n: float) -> "SweepSpec":
        return dataclasses.replace(self, amplitude_n=amplitude_n)

    def with_sample_rate(self, sample_rate_hz: float) -> "SweepSpec":
        return dataclasses.replace(self, sample_rate_hz=sample_rate_hz)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepSpec":
        return cls(**data)


@dataclass(frozen=True)
class SpectrumRecord:
    values: np.ndarray
    f0_hz: float
    scaling: str = DFT_SCALING

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.f0_hz

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "index": np.arange(len(self.values)),
                "frequency_hz": self.frequencies_hz,
                "re": self.values.real,
                "im": self.values.imag,
            }
        )


@dataclass(frozen=True)
class MultisineDesign:
    """Sum of cosines ``amplitude * sum_k cos(2*pi*k*f0*t + phase_k)``."""

    lines: np.ndarray
    phases: np.ndarray
    amplitude: float
    num_samples: int
    sample_rate_hz: float

    @property
    def f0_hz(self) -> float:
        return self.sample_rate_hz / self.num_samples

    def sample(self, oversampling: int = 1) -> np.ndarray:
        """One period sampled at ``oversampling * sample_rate_hz``."""
        n = self.num_samples * oversampling
        spectrum = np.zeros(n // 2 + 1, dtype=complex)
        spectrum[self.lines] = np.exp(1j * self.phases) * n / 2
        return self.amplitude * np.fft.irfft(spectrum, n)

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        arg = 2 * np.pi * self.f0_hz * np.outer(t, self.lines) + self.phases
        return self.amplitude * np.cos(arg).sum(axis=1)


def in_band_bins(spec: ExcitationSpec) -> np.ndarray:
    k = np.arange(1, spec.num_samples_per_period // 2)
    freq = k * spec.f0_hz
    # inclusive edges, guarded against rounding in k*f0
    eps = 1e-9 * spec.f0_hz
    return k[(freq >= spec.band_low_hz - eps) & (freq <= spec.band_high_hz + eps)]


def classify_lines(spec: ExcitationSpec) -> np.ndarray:
    """Per-bin labels of the one-sided DFT grid (length N//2 + 1)."""
    labels = np.full(spec.num_bins, LineClass.OUT_OF_BAND.value, dtype="<U14")
    bins = in_band_bins(spec)

    if spec.grid_kind is GridKind.FULL:
        labels[bins] = LineClass.EXCITED.value
        return labels

    odd = bins[bins % 2 == 1]
    even = bins[bins % 2 == 0]
    if len(odd) < spec.group_size:
        raise ConfigurationError(
            f"Only {len(odd)} odd lines in band, need at least group_size={spec.group_size}"
        )

    labels[even] = LineClass.EVEN_DETECTION.value
    labels[odd] = LineClass.ODD_EXCITED.value

    # an incomplete trailing group stays fully excited
    n_groups = len(odd) // spec.group_size
    rng = np.random.default_rng(spec.rng_seed)
    picks = rng.integers(0, spec.group_size, size=n_groups)
    detection = odd[np.arange(n_groups) * spec.group_size + picks]
    labels[detection] = LineClass.ODD_DETECTION.value

    log.debug(f"Odd grid: {len(odd) - n_groups} excited, {n_groups} odd detection lines")
    return labels


def excited_lines(labels: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.isin(labels, EXCITED_CLASSES))


def design_multisine(
    spec: ExcitationSpec, phase_seed: int, lines: Optional[np.ndarray] = None
) -> MultisineDesign:
    if lines is None:
        lines = excited_lines(classify_lines(spec))
    lines = np.asarray(lines, dtype=int)
    if len(lines) == 0:
        raise ConfigurationError(
            f"No excited line in [{spec.band_low_hz}, {spec.band_high_hz}] Hz "
            f"with f0 = {spec.f0_hz} Hz"
        )

    rng = np.random.default_rng(phase_seed)
    phases = rng.uniform(0, 2 * np.pi, size=len(lines))

    unit = MultisineDesign(
        lines, phases, 1.0, spec.num_samples_per_period, spec.sample_rate_hz
    )
    amplitude = spec.target_rms_n / rms(unit.sample())
    return dataclasses.replace(unit, amplitude=amplitude)


def generate_multisine(spec: ExcitationSpec, phase_seed: int) -> np.ndarray:
    return design_multisine(spec, phase_seed).sample()


def generate_odd_detection_multisine(
    spec: ExcitationSpec, phase_seed: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    if spec.grid_kind is not GridKind.ODD_WITH_DETECTION:
        raise ConfigurationError("An odd_with_detection grid is required")

    labels = classify_lines(spec)
    seed = spec.rng_seed if phase_seed is None else phase_seed
    design = design_multisine(spec, seed, excited_lines(labels))
    return design.sample(), labels


def generate_sweep(spec: SweepSpec) -> np.ndarray:
    t = np.arange(spec.num_samples) / spec.sample_rate_hz
    # phi=-90 turns the cosine chirp into a sine starting at zero
    return spec.amplitude_n * sps.chirp(
        t,
        f0=spec.f_start_hz,
        t1=spec.duration_s,
        f1=spec.f_end_hz,
        method="linear",
        phi=-90,
    )


def dft(x: np.ndarray, sample_rate_hz: float = 1.0) -> SpectrumRecord:
    x = np.asarray(x)
    return SpectrumRecord(np.fft.fft(x, norm=DFT_SCALING), sample_rate_hz / len(x))


def idft(spectrum: SpectrumRecord) -> np.ndarray:
    return np.fft.ifft(spectrum.values, norm=DFT_SCALING).real


def period_spectra(x: np.ndarray, samples_per_period: int) -> np.ndarray:
    """One-sided DFT of every period, shape (P, N//2 + 1)."""
    x = np.asarray(x, dtype=float)
    if len(x) % samples_per_period:
        raise ConfigurationError(
            f"Record length {len(x)} is not a multiple of the period {samples_per_period}"
        )
    return np.fft.rfft(x.reshape(-1, samples_per_period), axis=1, norm=DFT_SCALING)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(np.abs(x)))))


def db(x) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 20 * np.log10(np.abs(x))
