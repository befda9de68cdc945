"""
Single-degree-of-freedom Bouc-Wen oscillator.

    m_l * y'' + k_l * y + c_l * y' + z = u
    z' = alpha * y' - beta * (gamma * |y'| * |z|**(nu - 1) * z + delta * y' * |z|**nu)

The equations are integrated with a Newmark scheme at ``NewmarkConfig.step_hz``;
every step predicts (y, y', z) from the unknown accelerations (y'', z') and
corrects them with Newton-Raphson on the equilibrium and hysteresis residuals.
The acquisition chain then low-pass filters, decimates and adds output noise.
"""
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np
import pandas as pd
from scipy import signal as sps

from hysteresis_id import artifacts
from hysteresis_id.errors import ConfigurationError, IntegrationError, NumericalError
from hysteresis_id.signals import db, rms

log = logging.getLogger(__name__)

ANTI_ALIAS_ORDER = 8
ANTI_ALIAS_CUTOFF = 0.4

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class BoucWenParameters:
    m_l: float = 2.0
    c_l: float = 10.0
    k_l: float = 5e4
    alpha: float = 5e4
    beta: float = 1e3
    gamma: float = 0.8
    delta: float = -1.1
    nu: float = 1.0

    def __post_init__(self):
        if self.m_l <= 0:
            raise ConfigurationError("m_l must be positive")
        # |z|**(nu - 1) is singular at z = 0 below nu = 1
        if self.nu < 1:
            raise ConfigurationError(f"nu must be >= 1, got {self.nu}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BoucWenParameters":
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class NewmarkConfig:
    a: float = 0.5
    b: float = 0.25
    c: float = 0.5
    step_hz: float = 15000.0
    nr_tolerance: float = 1e-12
    nr_max_iter: int = 50

    def __post_init__(self):
        for name in ("a", "b", "c"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigurationError(f"Newmark parameter {name} must lie in (0, 1]")
        if self.step_hz <= 0:
            raise ConfigurationError("step_hz must be positive")
        if self.nr_tolerance <= 0 or self.nr_max_iter < 1:
            raise ConfigurationError(
                "Newton-Raphson tolerance and iteration count must be positive"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NewmarkConfig":
        return cls(**data)


@dataclass(frozen=True)
class SimState:
    y: float = 0.0
    ydot: float = 0.0
    yddot: float = 0.0
    z: float = 0.0


@dataclass(frozen=True)
class ModalParameters:
    natural_frequency_hz: float
    damping_ratio: float
    poles: np.ndarray
    overdamped: bool = False


@dataclass(frozen=True)
class Trajectory:
    """States of a Newmark run, one entry per integration step."""

    u: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    yddot: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    step_hz: float

    def __len__(self):
        return len(self.y)

    def slice(self, start: int, stop: Optional[int] = None) -> "Trajectory":
        s = np.s_[start:stop]
        return Trajectory(
            self.u[s], self.y[s], self.ydot[s], self.yddot[s], self.z[s], self.zdot[s], self.step_hz
        )

    def equilibrium_residual(self, params: BoucWenParameters) -> np.ndarray:
        r, _ = restoring_force(self, params)
        return params.m_l * self.yddot + r + self.z - self.u


@dataclass
class TimeRecord:
    input: np.ndarray
    output: np.ndarray
    sample_rate_hz: float
    periods: int
    samples_per_period: int
    noise_sigma: float = 0.0
    excited_lines: Optional[np.ndarray] = None
    transient_level_db: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=float)
        self.output = np.asarray(self.output, dtype=float)
        expected = self.periods * self.samples_per_period
        if len(self.input) != expected or len(self.output) != expected:
            raise ConfigurationError(
                f"Record holds {len(self.input)}/{len(self.output)} samples, "
                f"expected {self.periods} x {self.samples_per_period}"
            )

    @property
    def time_s(self) -> np.ndarray:
        return np.arange(len(self.input)) / self.sample_rate_hz

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time_s": self.time_s, "input": self.input, "output": self.output})

    def sidecar(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "periods": self.periods,
            "samples_per_period": self.samples_per_period,
            "noise_sigma": self.noise_sigma,
            "excited_lines": None if self.excited_lines is None else self.excited_lines,
            "transient_level_db": self.transient_level_db,
            "metadata": self.metadata,
        }

    @classmethod
    def from_artifacts(cls, frame: pd.DataFrame, sidecar: Mapping[str, Any]) -> "TimeRecord":
        lines = sidecar.get("excited_lines")
        return cls(
            input=frame["input"].to_numpy(),
            output=frame["output"].to_numpy(),
            sample_rate_hz=sidecar["sample_rate_hz"],
            periods=sidecar["periods"],
            samples_per_period=sidecar["samples_per_period"],
            noise_sigma=sidecar["noise_sigma"],
            excited_lines=None if lines is None else np.asarray(lines, dtype=int),
            transient_level_db=sidecar.get("transient_level_db"),
            metadata=dict(sidecar.get("metadata", {})),
        )


def save_record(record: TimeRecord, directory: str, name: str):
    artifacts.write_frame(os.path.join(directory, f"{name}.csv"), record.to_frame())
    artifacts.write_json(os.path.join(directory, f"{name}.json"), record.sidecar())


def load_record(directory: str, name: str) -> TimeRecord:
    frame = artifacts.read_frame(os.path.join(directory, f"{name}.csv"))
    sidecar = artifacts.read_json(os.path.join(directory, f"{name}.json"))
    return TimeRecord.from_artifacts(frame, sidecar)


def restoring_force(state, params: BoucWenParameters):
    """Linear restoring force and hysteretic rate; ``state`` may hold arrays."""
    y = np.asarray(state.y, dtype=float)
    ydot = np.asarray(state.ydot, dtype=float)
    z = np.asarray(state.z, dtype=float)

    r = params.k_l * y + params.c_l * ydot
    abs_z = np.abs(z)
    z_dot = params.alpha * ydot - params.beta * (
        params.gamma * np.abs(ydot) * abs_z ** (params.nu - 1) * z
        + params.delta * ydot * abs_z**params.nu
    )
    if r.ndim == 0:
        return float(r), float(z_dot)
    return r, z_dot


def _hysteresis_terms(ydot, z, alpha, beta, gamma, delta, nu):
    """Hysteretic rate g(y', z) and its partial derivatives."""
    abs_z = abs(z)
    abs_z_nm1 = abs_z ** (nu - 1)
    sign_v = (ydot > 0) - (ydot < 0)
    sign_z = (z > 0) - (z < 0)

    g = alpha * ydot - beta * (gamma * abs(ydot) * abs_z_nm1 * z + delta * ydot * abs_z**nu)
    dg_dydot = alpha - beta * (gamma * sign_v * abs_z_nm1 * z + delta * abs_z**nu)
    dg_dz = -beta * nu * abs_z_nm1 * (gamma * abs(ydot) + delta * ydot * sign_z)
    return g, dg_dydot, dg_dz


def newmark_simulate(
    params: BoucWenParameters,
    config: NewmarkConfig,
    u: np.ndarray,
    initial_state: Optional[SimState] = None,
) -> Trajectory:
    """
    Integrate the oscillator over ``u`` sampled at ``config.step_hz``.

    The initial accelerations are made consistent with the equations of motion
    at ``u[0]``, whatever ``initial_state.yddot`` holds.
    """
    u = np.asarray(u, dtype=float)
    n = len(u)
    initial_state = initial_state or SimState()

    m, cl, k = params.m_l, params.c_l, params.k_l
    alpha, beta, gamma, delta, nu = params.alpha, params.beta, params.gamma, params.delta, params.nu
    a, b, c = config.a, config.b, config.c
    h = 1.0 / config.step_hz
    tol = config.nr_tolerance
    max_iter = config.nr_max_iter

    ah, bh2, ch = a * h, b * h * h, c * h
    j11 = m + cl * ah + k * bh2

    ys = [0.0] * n
    vs = [0.0] * n
    accs = [0.0] * n
    zs = [0.0] * n
    zds = [0.0] * n
    if n == 0:
        return Trajectory(u, *(np.empty(0) for _ in range(5)), config.step_hz)

    uu = u.tolist()
    y, v, z = initial_state.y, initial_state.ydot, initial_state.z
    acc = (uu[0] - k * y - cl * v - z) / m
    zd = _hysteresis_terms(v, z, alpha, beta, gamma, delta, nu)[0]
    ys[0], vs[0], accs[0], zs[0], zds[0] = y, v, acc, z, zd

    for i in range(1, n):
        u1 = uu[i]
        v_pred = v + (1 - a) * h * acc
        y_pred = y + h * v + (0.5 - b) * h * h * acc
        z_pred = z + (1 - c) * h * zd

        acc1, zd1 = acc, zd
        for _ in range(max_iter):
            v1 = v_pred + ah * acc1
            y1 = y_pred + bh2 * acc1
            z1 = z_pred + ch * zd1
            g, g_v, g_z = _hysteresis_terms(v1, z1, alpha, beta, gamma, delta, nu)

            r1 = m * acc1 + cl * v1 + k * y1 + z1 - u1
            r2 = ch * (zd1 - g)
            # the residuals cannot drop below the rounding floor of their terms
            floor1 = 8 * _EPS * (abs(m * acc1) + abs(cl * v1) + abs(k * y1) + abs(z1) + abs(u1))
            floor2 = 8 * _EPS * ch * (abs(zd1) + abs(g))
            if abs(r1) <= max(tol, floor1) and abs(r2) <= max(tol, floor2):
                break

            j21 = -g_v * ah
            j22 = 1 - g_z * ch
            det = j11 * j22 - ch * j21
            if det == 0 or not math.isfinite(det):
                raise IntegrationError("Singular Newton-Raphson system", step=i, time_s=i * h)
            r2 = zd1 - g
            acc1 -= (r1 * j22 - ch * r2) / det
            zd1 -= (j11 * r2 - j21 * r1) / det
        else:
            raise IntegrationError(
                f"Newton-Raphson did not converge in {max_iter} iterations",
                step=i,
                time_s=i * h,
            )

        y, v, acc, z, zd = y1, v1, acc1, z1, zd1
        ys[i], vs[i], accs[i], zs[i], zds[i] = y, v, acc, z, zd

    return Trajectory(
        u,
        np.array(ys),
        np.array(vs),
        np.array(accs),
        np.array(zs),
        np.array(zds),
        config.step_hz,
    )


def decimation_ratio(step_hz: float, target_rate_hz: float) -> int:
    ratio = step_hz / target_rate_hz
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ConfigurationError(
            f"Integration rate {step_hz} Hz is not an integer multiple of {target_rate_hz} Hz"
        )
    return int(round(ratio))


def _anti_alias(x: np.ndarray, step_hz: float, target_rate_hz: float, period: Optional[int]):
    sos = sps.butter(
        ANTI_ALIAS_ORDER, ANTI_ALIAS_CUTOFF * target_rate_hz, fs=step_hz, output="sos"
    )
    if period is None:
        return sps.sosfiltfilt(sos, x)

    # wrap one period on both sides so the filter sees a periodic signal
    padded = np.concatenate([x[-period:], x, x[:period]])
    return sps.sosfiltfilt(sos, padded, padtype=None)[period:-period]


def acquire(
    trajectory: Trajectory,
    target_rate_hz: float,
    snr_db: Optional[float] = None,
    noise_seed: int = 0,
    samples_per_period: Optional[int] = None,
) -> TimeRecord:
    """
    Filter, decimate and add output noise.

    ``samples_per_period`` (at ``target_rate_hz``) marks the trajectory as
    periodic steady state; the record then holds ``len // samples_per_period``
    periods. ``snr_db`` of None or infinity stores the clean output.
    """
    ratio = decimation_ratio(trajectory.step_hz, target_rate_hz)
    fine_period = None if samples_per_period is None else samples_per_period * ratio

    output = trajectory.y
    if ratio > 1:
        output = _anti_alias(output, trajectory.step_hz, target_rate_hz, fine_period)
    output = output[::ratio]
    # the input is band limited already
    inp = trajectory.u[::ratio]

    sigma = 0.0
    if snr_db is not None and math.isfinite(snr_db):
        sigma = rms(output) / 10 ** (snr_db / 20)
        output = output + np.random.default_rng(noise_seed).normal(0.0, sigma, len(output))

    if samples_per_period is None:
        samples_per_period = len(output)
    periods = len(output) // samples_per_period

    log.debug(f"Acquired {len(output)} samples at {target_rate_hz} Hz, noise sigma {sigma:.3e} m")
    return TimeRecord(
        input=inp,
        output=output,
        sample_rate_hz=target_rate_hz,
        periods=periods,
        samples_per_period=samples_per_period,
        noise_sigma=sigma,
        metadata={"snr_db": snr_db, "noise_seed": noise_seed, "step_hz": trajectory.step_hz},
    )


def upsample_periodic(x: np.ndarray, ratio: int) -> np.ndarray:
    if ratio == 1:
        return np.asarray(x, dtype=float)
    return sps.resample(x, len(x) * ratio)


def steady_state_record(
    params: BoucWenParameters,
    config: NewmarkConfig,
    u_period: np.ndarray,
    sample_rate_hz: float,
    total_periods: int,
    discard_periods: int,
    snr_db: Optional[float] = None,
    noise_seed: int = 0,
    excited_lines: Optional[np.ndarray] = None,
) -> TimeRecord:
    if not total_periods > discard_periods >= 1:
        raise ConfigurationError(
            f"Need total_periods > discard_periods >= 1, got {total_periods} and {discard_periods}"
        )

    n = len(u_period)
    ratio = decimation_ratio(config.step_hz, sample_rate_hz)
    fine = upsample_periodic(u_period, ratio)
    fine_n = len(fine)

    trajectory = newmark_simulate(params, config, np.tile(fine, total_periods))

    last = trajectory.y[-fine_n:]
    previous = trajectory.y[-2 * fine_n : -fine_n]
    transient_db = float(db(np.max(np.abs(last - previous)) / rms(last)))
    log.debug(f"Residual transient after {total_periods} periods: {transient_db:.1f} dB")

    record = acquire(
        trajectory.slice(discard_periods * fine_n),
        sample_rate_hz,
        snr_db=snr_db,
        noise_seed=noise_seed,
        samples_per_period=n,
    )
    record.transient_level_db = transient_db
    record.excited_lines = excited_lines
    record.metadata.update({"total_periods": total_periods, "discard_periods": discard_periods})
    return record


def continuous_state_matrix(params: BoucWenParameters) -> np.ndarray:
    """Linearisation about the origin in the states (y, y', z)."""
    m, c, k, alpha = params.m_l, params.c_l, params.k_l, params.alpha
    return np.array(
        [
            [0.0, 1.0, 0.0],
            [-k / m, -c / m, -1.0 / m],
            [0.0, alpha, 0.0],
        ]
    )


def linearized_modal(params: BoucWenParameters) -> ModalParameters:
    if params.k_l <= 0:
        raise ConfigurationError("k_l must be positive")

    poles = np.linalg.eigvals(continuous_state_matrix(params))
    # the z row is a pure integrator, the oscillating pair is the largest in magnitude
    pair = poles[np.argsort(np.abs(poles))[-2:]]
    omega_sq = float(np.real(pair[0] * pair[1]))
    if omega_sq <= 0:
        raise NumericalError(f"Linearised system has no oscillating pair, poles {poles}")

    omega = math.sqrt(omega_sq)
    zeta = float(-np.real(pair.sum()) / (2 * omega))
    overdamped = bool(np.all(np.abs(pair.imag) < 1e-12 * omega)) and zeta > 1
    if overdamped:
        log.warning(f"Linearised system is overdamped (zeta = {zeta:.3f})")

    return ModalParameters(omega / (2 * math.pi), zeta, poles, overdamped)


def hysteresis_loop(
    params: BoucWenParameters,
    config: NewmarkConfig,
    frequency_hz: float = 1.0,
    amplitude_n: float = 120.0,
    cycles: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Input force and displacement over the last of ``cycles`` sine cycles."""
    samples = int(round(config.step_hz / frequency_hz))
    t = np.arange(samples * cycles) / config.step_hz
    u = amplitude_n * np.sin(2 * np.pi * frequency_hz * t)
    trajectory = newmark_simulate(params, config, u)
    return u[-samples:], trajectory.y[-samples:]


def loop_area(u: np.ndarray, y: np.ndarray) -> float:
    """Area enclosed by a closed input-displacement curve (shoelace formula)."""
    return 0.5 * abs(float(np.dot(u, np.roll(y, -1)) - np.dot(y, np.roll(u, -1))))
