"""
Best Linear Approximation and linear state-space fitting.

The BLA is averaged over M random-phase experiments of P periods each. A
discrete-time model of order n is obtained from it by frequency-domain
subspace identification and refined by weighted Levenberg-Marquardt on

    V_L = sum_k |G_L(z_k) - G_BLA(k)|**2 / var_BLA(k)

over the excited lines, with ``z_k = exp(2j*pi*k/N)``.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from hysteresis_id.artifacts import complex_from_dict, complex_to_dict
from hysteresis_id.boucwen_sim import TimeRecord
from hysteresis_id.errors import ConfigurationError, NumericalError
from hysteresis_id.levmar import LMConfig, LMTrace, levenberg_marquardt
from hysteresis_id.signals import db, period_spectra, rms

log = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12
WEIGHT_CAP_PERCENTILE = 99


@dataclass
class FrfEstimate:
    g_bla: np.ndarray
    total_variance: np.ndarray
    noise_variance: np.ndarray
    excited_lines: np.ndarray
    samples_per_period: int
    sample_rate_hz: float
    experiments: int
    periods: int

    @property
    def M(self) -> int:
        return self.experiments

    @property
    def P(self) -> int:
        return self.periods

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.excited_lines * self.sample_rate_hz / self.samples_per_period

    @property
    def z(self) -> np.ndarray:
        return np.exp(2j * np.pi * self.excited_lines / self.samples_per_period)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "line": self.excited_lines,
                "frequency_hz": self.frequencies_hz,
                "re": self.g_bla.real,
                "im": self.g_bla.imag,
                "total_variance": self.total_variance,
                "noise_variance": self.noise_variance,
            }
        )

    def to_dict(self) -> dict:
        return {
            "g_bla": complex_to_dict(self.g_bla),
            "total_variance": self.total_variance,
            "noise_variance": self.noise_variance,
            "excited_lines": self.excited_lines,
            "samples_per_period": self.samples_per_period,
            "sample_rate_hz": self.sample_rate_hz,
            "experiments": self.experiments,
            "periods": self.periods,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FrfEstimate":
        return cls(
            g_bla=complex_from_dict(data["g_bla"]),
            total_variance=np.asarray(data["total_variance"], dtype=float),
            noise_variance=np.asarray(data["noise_variance"], dtype=float),
            excited_lines=np.asarray(data["excited_lines"], dtype=int),
            samples_per_period=data["samples_per_period"],
            sample_rate_hz=data["sample_rate_hz"],
            experiments=data["experiments"],
            periods=data["periods"],
        )


@dataclass
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        self.D = np.asarray(self.D, dtype=float).reshape(self.C.shape[0], self.B.shape[1])
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def transfer(self, z: np.ndarray) -> np.ndarray:
        """Single-input single-output transfer function at the points ``z``."""
        z = np.atleast_1d(z)
        n = self.order
        pencil = z[:, None, None] * np.eye(n) - self.A
        x = np.linalg.solve(pencil, np.broadcast_to(self.B, (len(z), n, self.B.shape[1])))
        return (self.C @ x)[:, 0, 0] + self.D[0, 0]

    def frequency_response(self, frequencies_hz: np.ndarray) -> np.ndarray:
        return self.transfer(np.exp(2j * np.pi * np.asarray(frequencies_hz) / self.sample_rate_hz))

    def periodic_response(self, u_period: np.ndarray) -> np.ndarray:
        """Steady-state output over one period of a periodic input."""
        n = len(u_period)
        u_spec = np.fft.rfft(u_period)
        # rounding noise on unexcited bins is not input
        lines = np.flatnonzero(np.abs(u_spec) > 1e-10 * np.abs(u_spec).max())
        y_spec = np.zeros_like(u_spec)
        y_spec[lines] = self.transfer(np.exp(2j * np.pi * lines / n)) * u_spec[lines]
        return np.fft.irfft(y_spec, n)

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def modal_report(self) -> pd.DataFrame:
        """Continuous-time frequency and damping of every discrete pole."""
        s = np.log(self.poles().astype(complex)) * self.sample_rate_hz
        wn = np.abs(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            zeta = np.where(wn > 0, -s.real / wn, 0.0)
        return pd.DataFrame(
            {
                "pole_re": self.poles().real,
                "pole_im": self.poles().imag,
                "frequency_hz": wn / (2 * np.pi),
                "damping_ratio": zeta,
            }
        )

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1))

    def parameters(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in (self.A, self.B, self.C, self.D)])

    def with_parameters(self, theta: np.ndarray) -> "LinearModel":
        n, m, p = self.order, self.B.shape[1], self.C.shape[0]
        sizes = np.cumsum([n * n, n * m, p * n])
        a, b, c, d = np.split(np.asarray(theta, dtype=float), sizes)
        return LinearModel(
            a.reshape(n, n), b.reshape(n, m), c.reshape(p, n), d.reshape(p, m), self.sample_rate_hz
        )

    def to_dict(self) -> dict:
        return {
            "A": self.A,
            "B": self.B,
            "C": self.C,
            "D": self.D,
            "sample_rate_hz": self.sample_rate_hz,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LinearModel":
        return cls(
            np.asarray(data["A"], dtype=float),
            np.asarray(data["B"], dtype=float),
            np.asarray(data["C"], dtype=float),
            np.asarray(data["D"], dtype=float),
            data["sample_rate_hz"],
        )


def _experiment_frf(record: TimeRecord, lines: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Period-averaged FRF of one experiment and its noise variance."""
    u_periods = period_spectra(record.input, record.samples_per_period)[:, lines]
    y_periods = period_spectra(record.output, record.samples_per_period)[:, lines]
    u_mean = u_periods.mean(axis=0)
    y_mean = y_periods.mean(axis=0)

    zero = np.abs(u_mean) <= np.finfo(float).tiny
    if zero.any():
        raise NumericalError(f"Input spectrum is zero at line {int(lines[np.argmax(zero)])}")

    noise = y_periods.var(axis=0, ddof=1) / record.periods / np.abs(u_mean) ** 2
    return y_mean / u_mean, noise


def estimate_bla(
    records: Sequence[TimeRecord], excited_lines: Optional[np.ndarray] = None
) -> FrfEstimate:
    if not records:
        raise ConfigurationError("No experiment to estimate the BLA from")
    first = records[0]
    if excited_lines is None:
        excited_lines = first.excited_lines
    if excited_lines is None:
        raise ConfigurationError("Excited lines are required to estimate the BLA")
    lines = np.asarray(excited_lines, dtype=int)

    for record in records:
        if (
            record.samples_per_period != first.samples_per_period
            or record.periods != first.periods
            or record.sample_rate_hz != first.sample_rate_hz
        ):
            raise ConfigurationError("All experiments must share grid, rate and period count")
    if first.periods < 2:
        raise ConfigurationError(f"At least 2 periods are needed, got {first.periods}")

    g, noise = zip(*(_experiment_frf(r, lines) for r in records))
    g = np.array(g)
    noise = np.array(noise)
    n_exp = len(records)

    g_bla = g.mean(axis=0)
    noise_variance = noise.mean(axis=0) / n_exp
    if n_exp >= 2:
        total_variance = np.sum(np.abs(g - g_bla) ** 2, axis=0) / (n_exp * (n_exp - 1))
    else:
        log.warning("Single experiment: total variance falls back to the noise variance")
        total_variance = noise_variance

    log.info(
        f"Estimated BLA on {len(lines)} lines from {n_exp} experiments x {first.periods} periods"
    )
    return FrfEstimate(
        g_bla,
        total_variance,
        noise_variance,
        lines,
        first.samples_per_period,
        first.sample_rate_hz,
        n_exp,
        first.periods,
    )


def bla_weights(variance: np.ndarray) -> np.ndarray:
    """Inverse-variance weights; zero-variance lines get the 99th percentile weight."""
    variance = np.asarray(variance, dtype=float)
    positive = variance > 0
    if not positive.any():
        return np.ones_like(variance)

    weights = np.empty_like(variance)
    weights[positive] = 1.0 / variance[positive]
    weights[~positive] = np.percentile(weights[positive], WEIGHT_CAP_PERCENTILE)
    return weights


def linear_cost(model: LinearModel, frf: FrfEstimate, normalized: bool = False) -> float:
    err = model.transfer(frf.z) - frf.g_bla
    cost = float(np.sum(bla_weights(frf.total_variance) * np.abs(err) ** 2))
    return cost / len(frf.excited_lines) if normalized else cost


def fit_error_db(model: LinearModel, frf: FrfEstimate) -> np.ndarray:
    return db(model.transfer(frf.z) - frf.g_bla)


def total_distortion_db(frf: FrfEstimate) -> np.ndarray:
    """Standard deviation of the BLA per line (noise plus nonlinear distortion)."""
    with np.errstate(divide="ignore"):
        return 10 * np.log10(frf.total_variance)


def subspace_fit(frf: FrfEstimate, order: int, dimension: int) -> LinearModel:
    """
    Frequency-domain subspace identification from an FRF.

    ``dimension`` is the number of block rows of the data matrices. Lines are
    weighted by the total variance of the BLA when it is available.
    """
    n, i = order, dimension
    if n < 1:
        raise ConfigurationError(f"Model order must be >= 1, got {n}")
    if i <= n:
        raise ConfigurationError(f"Dimensioning parameter i = {i} must exceed the order n = {n}")

    z = frf.z
    g = frf.g_bla
    num_lines = len(z)
    if num_lines < i:
        raise ConfigurationError(f"{num_lines} lines are too few for i = {i}")

    powers = z[None, :] ** np.arange(i)[:, None]
    u_mat = powers
    y_mat = powers * g[None, :]
    data = np.vstack([u_mat, y_mat])
    data = np.hstack([data.real, data.imag])

    # LQ factorisation: the lower-right block holds Y with U projected out
    r = np.linalg.qr(data.T, mode="r")
    l22 = r.T[i:, i:]

    variance = frf.total_variance
    if np.any(variance > 0):
        cov = np.real((powers * variance[None, :]) @ powers.conj().T)
        cov_sqrt = np.real(scipy.linalg.sqrtm(cov))
        cov_isqrt = np.linalg.inv(cov_sqrt)
    else:
        cov_sqrt = cov_isqrt = np.eye(i)

    u_svd, s, _ = np.linalg.svd(cov_isqrt @ l22)
    if s[n - 1] < RANK_TOLERANCE * s[0]:
        rank = int(np.sum(s >= RANK_TOLERANCE * s[0]))
        raise NumericalError(
            f"Data matrix has numerical rank {rank} (block rows i = {i}), "
            f"below the requested order n = {n}"
        )

    observability = cov_sqrt @ u_svd[:, :n]
    c = observability[:1, :]
    a = np.linalg.lstsq(observability[:-1, :], observability[1:, :], rcond=None)[0]

    # B and D are linear in G given A and C
    x = np.linalg.inv(z[:, None, None] * np.eye(n) - a)
    regressor = np.hstack([(c @ x)[:, 0, :], np.ones((num_lines, 1))])
    w = np.sqrt(bla_weights(variance))
    lhs = w[:, None] * regressor
    rhs = w * g
    bd = np.linalg.lstsq(
        np.vstack([lhs.real, lhs.imag]), np.concatenate([rhs.real, rhs.imag]), rcond=None
    )[0]

    model = LinearModel(a, bd[:n].reshape(n, 1), c, bd[n:].reshape(1, 1), frf.sample_rate_hz)
    log.debug(f"Subspace fit n={n}, i={i}: cost {linear_cost(model, frf):.6e}")
    return model


def _linear_jacobian(model: LinearModel, z: np.ndarray) -> np.ndarray:
    """Complex derivative of G(z_k) with respect to [A, B, C, D], one row per line."""
    n = model.order
    x = np.linalg.inv(z[:, None, None] * np.eye(n) - model.A)
    cx = np.einsum("j,fjk->fk", model.C[0], x)
    xb = np.einsum("fjk,k->fj", x, model.B[:, 0])
    d_a = (cx[:, :, None] * xb[:, None, :]).reshape(len(z), n * n)
    return np.hstack([d_a, cx, xb, np.ones((len(z), 1))])


def refine_linear(
    model: LinearModel, frf: FrfEstimate, lm_config: LMConfig = LMConfig()
) -> tuple[LinearModel, LMTrace]:
    sqrt_w = np.sqrt(bla_weights(frf.total_variance))
    z = frf.z

    def residuals(theta):
        candidate = model.with_parameters(theta)
        try:
            err = sqrt_w * (candidate.transfer(z) - frf.g_bla)
        except np.linalg.LinAlgError:
            return None
        return np.concatenate([err.real, err.imag])

    def jacobian(theta):
        jac = sqrt_w[:, None] * _linear_jacobian(model.with_parameters(theta), z)
        return np.vstack([jac.real, jac.imag])

    theta, trace = levenberg_marquardt(model.parameters(), residuals, jacobian, lm_config)
    refined = model.with_parameters(theta)
    log.debug(
        f"Refined n={model.order}: cost {trace.entries[0]['cost']:.6e} -> "
        f"{linear_cost(refined, frf):.6e} ({trace.stop_reason})"
    )
    return refined, trace


def scan_linear_models(
    frf: FrfEstimate,
    orders: Iterable[int],
    dimensions: Iterable[int],
    lm_config: Optional[LMConfig] = LMConfig(),
) -> tuple[pd.DataFrame, dict]:
    """
    Subspace fit (and refinement unless ``lm_config`` is None) on the (n, i)
    grid. Returns the cost table and the models keyed by (n, i).
    """
    rows = []
    models = {}
    num_lines = len(frf.excited_lines)
    for n, i in itertools.product(orders, dimensions):
        row = {"n": n, "i": i, "subspace_cost": np.nan, "refined_cost": np.nan, "status": "ok"}
        try:
            model = subspace_fit(frf, n, i)
            row["subspace_cost"] = linear_cost(model, frf)
            if lm_config is not None:
                model, _ = refine_linear(model, frf, lm_config)
                row["refined_cost"] = linear_cost(model, frf)
            models[(n, i)] = model
        except (ConfigurationError, NumericalError) as e:
            log.warning(f"Skipping n={n}, i={i}: {e}")
            row["status"] = str(e)
        rows.append(row)

    table = pd.DataFrame(rows)
    table["subspace_cost_normalized"] = table["subspace_cost"] / num_lines
    table["refined_cost_normalized"] = table["refined_cost"] / num_lines
    return table, models


def linear_validation_error_db(model: LinearModel, record: TimeRecord) -> float:
    """RMS error (dB re 1 m) of the steady-state response against the period-averaged output."""
    n = record.samples_per_period
    u_period = record.input.reshape(-1, n).mean(axis=0)
    y_period = record.output.reshape(-1, n).mean(axis=0)
    return float(db(rms(model.periodic_response(u_period) - y_period)))


def select_order(models: Mapping[Any, LinearModel], record: TimeRecord) -> tuple[Any, dict]:
    """Key of the model with the lowest validation error, and all errors."""
    if not models:
        raise ConfigurationError("No linear model to select from")
    errors = {key: linear_validation_error_db(m, record) for key, m in models.items()}
    best = min(errors, key=errors.get)
    log.info(f"Selected linear model {best} with validation error {errors[best]:.2f} dB")
    return best, errors
