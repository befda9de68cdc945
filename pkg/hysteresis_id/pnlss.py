"""
Polynomial nonlinear state-space models.

    x(t+1) = A x(t) + B u(t) + E zeta(x(t), u(t))
    y(t)   = C x(t) + D u(t) + F eta(x(t), u(t))

zeta and eta hold all monomials of the selected variables whose total degree is
in the basis degree set. Models work on normalised signals: the input and output
are divided by their RMS and the states are scaled to unit RMS by a diagonal
similarity transform, so that high-degree monomials stay well conditioned.
Matrices stored on a model act on normalised quantities.

Parameters are flattened in the order [A, B, C, D, E, F], each row-major.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import comb

from hysteresis_id.boucwen_sim import TimeRecord
from hysteresis_id.errors import ConfigurationError
from hysteresis_id.levmar import LMConfig, LMTrace, levenberg_marquardt, lm_step  # noqa: F401
from hysteresis_id.linear_id import LinearModel
from hysteresis_id.signals import DFT_SCALING, db, rms

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e6
STEADY_STATE_TOLERANCE = 1e-10
MAX_STEADY_STATE_PERIODS = 50


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    n_states: int
    include_input: bool
    degrees: tuple
    exponents: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.n_states + int(self.include_input)

    @property
    def n_terms(self) -> int:
        return len(self.exponents)

    @cached_property
    def _derivative_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients and lowered exponents of d(monomial)/d(state)."""
        coeff = self.exponents[:, : self.n_states].astype(float)
        lowered = np.repeat(self.exponents[:, :, None], self.n_states, axis=2)
        for k in range(self.n_states):
            lowered[:, k, k] = np.maximum(self.exponents[:, k] - 1, 0)
        return coeff, lowered

    def evaluate(self, v: np.ndarray) -> np.ndarray:
        if not self.n_terms:
            return np.empty(0)
        return np.prod(v**self.exponents, axis=1)

    def state_derivative(self, v: np.ndarray) -> np.ndarray:
        """Derivative of every monomial with respect to every state, (n_terms, n_states)."""
        if not self.n_terms:
            return np.empty((0, self.n_states))
        coeff, lowered = self._derivative_tables
        return coeff * np.prod(v[None, :, None] ** lowered, axis=1)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "include_input": self.include_input,
            "degrees": list(self.degrees),
            "exponents": self.exponents,
        }


def build_basis(n: int, q_included: bool, degrees: Iterable[int]) -> MonomialBasis:
    """All monomials of the states (and the input) with total degree in ``degrees``."""
    degrees = tuple(sorted(set(int(d) for d in degrees)))
    if any(d < 2 for d in degrees):
        raise ConfigurationError(f"Monomial degrees must be >= 2, got {list(degrees)}")
    if n < 1:
        raise ConfigurationError(f"Need at least one state, got {n}")

    n_vars = n + int(q_included)
    rows = [
        np.bincount(np.asarray(c, dtype=int), minlength=n_vars)
        for d in degrees
        for c in combinations_with_replacement(range(n_vars), d)
    ]
    exponents = np.array(rows, dtype=int).reshape(-1, n_vars)
    return MonomialBasis(n, bool(q_included), degrees, exponents)


def full_polynomial_term_count(n: int, q: int, l: int, d: int) -> int:
    """Coefficients of a model holding every monomial of degree 1..d in both equations."""
    return (comb(n + q + d, d, exact=True) - 1) * (n + l)


@dataclass
class SimulationResult:
    y: np.ndarray
    x: np.ndarray
    diverged: bool = False
    divergence_index: Optional[int] = None


@dataclass
class SteadyStateResult:
    y_period: Optional[np.ndarray]
    x_start: Optional[np.ndarray]
    x_end: Optional[np.ndarray]
    residual: float
    converged: bool
    diverged: bool
    periods: int


@dataclass
class PnlssModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    basis: MonomialBasis
    output_basis: Optional[MonomialBasis]
    sample_rate_hz: float
    input_scale: float = 1.0
    output_scale: float = 1.0
    state_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.A.shape[0]
        if self.state_scale is None:
            self.state_scale = np.ones(n)
        self.state_scale = np.asarray(self.state_scale, dtype=float)
        self.E = np.asarray(self.E, dtype=float).reshape(n, self.basis.n_terms)
        n_f = 0 if self.output_basis is None else self.output_basis.n_terms
        self.F = np.asarray(self.F, dtype=float).reshape(self.C.shape[0], n_f)

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def degrees(self) -> tuple:
        return self.basis.degrees

    @property
    def parameter_count(self) -> int:
        n, q, l = self.order, self.B.shape[1], self.C.shape[0]
        return n * n + n * q + l * n + l * q + n * self.E.shape[1] + l * self.F.shape[1]

    @classmethod
    def from_linear(
        cls,
        linear: LinearModel,
        basis: MonomialBasis,
        u_reference: np.ndarray,
        y_reference: np.ndarray,
        output_basis: Optional[MonomialBasis] = None,
    ) -> "PnlssModel":
        """Normalised copy of ``linear`` with zero nonlinear coefficients."""
        if basis.n_states != linear.order:
            raise ConfigurationError(
                f"Basis built for {basis.n_states} states, the linear model has {linear.order}"
            )
        su = rms(u_reference) or 1.0
        sy = rms(y_reference) or 1.0
        sx = _state_rms(linear, u_reference)
        sx[sx == 0] = 1.0

        n_f = 0 if output_basis is None else output_basis.n_terms
        return cls(
            A=linear.A * sx[None, :] / sx[:, None],
            B=linear.B * su / sx[:, None],
            C=linear.C * sx[None, :] / sy,
            D=linear.D * su / sy,
            E=np.zeros((linear.order, basis.n_terms)),
            F=np.zeros((linear.C.shape[0], n_f)),
            basis=basis,
            output_basis=output_basis,
            sample_rate_hz=linear.sample_rate_hz,
            input_scale=su,
            output_scale=sy,
            state_scale=sx,
        )

    def linear_part(self) -> LinearModel:
        """The (A, B, C, D) part in physical units."""
        sx, su, sy = self.state_scale, self.input_scale, self.output_scale
        return LinearModel(
            self.A * sx[:, None] / sx[None, :],
            self.B * sx[:, None] / su,
            self.C * sy / sx[None, :],
            self.D * sy / su,
            self.sample_rate_hz,
        )

    def parameters(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in (self.A, self.B, self.C, self.D, self.E, self.F)])

    def with_parameters(self, theta: np.ndarray) -> "PnlssModel":
        n, q, l = self.order, self.B.shape[1], self.C.shape[0]
        sizes = np.cumsum([n * n, n * q, l * n, l * q, n * self.E.shape[1]])
        a, b, c, d, e, f = np.split(np.asarray(theta, dtype=float), sizes)
        return dataclasses.replace(
            self,
            A=a.reshape(n, n),
            B=b.reshape(n, q),
            C=c.reshape(l, n),
            D=d.reshape(l, q),
            E=e.reshape(n, -1),
            F=f.reshape(l, -1),
        )

    def to_dict(self) -> dict:
        return {
            "A": self.A,
            "B": self.B,
            "C": self.C,
            "D": self.D,
            "E": self.E,
            "F": self.F,
            "basis": self.basis.to_dict(),
            "output_basis": None if self.output_basis is None else self.output_basis.to_dict(),
            "sample_rate_hz": self.sample_rate_hz,
            "input_scale": self.input_scale,
            "output_scale": self.output_scale,
            "state_scale": self.state_scale,
            "parameter_count": self.parameter_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PnlssModel":
        def basis_from(d):
            if d is None:
                return None
            basis = build_basis(d["n_states"], d["include_input"], d["degrees"])
            if not np.array_equal(basis.exponents.reshape(-1), np.ravel(d["exponents"])):
                raise ConfigurationError("Stored exponent table does not match its degree set")
            return basis

        return cls(
            A=np.asarray(data["A"], dtype=float),
            B=np.asarray(data["B"], dtype=float),
            C=np.asarray(data["C"], dtype=float),
            D=np.asarray(data["D"], dtype=float),
            E=np.asarray(data["E"], dtype=float),
            F=np.asarray(data["F"], dtype=float),
            basis=basis_from(data["basis"]),
            output_basis=basis_from(data.get("output_basis")),
            sample_rate_hz=data["sample_rate_hz"],
            input_scale=data["input_scale"],
            output_scale=data["output_scale"],
            state_scale=np.asarray(data["state_scale"], dtype=float),
        )


def _state_rms(linear: LinearModel, u_period: np.ndarray) -> np.ndarray:
    """RMS of every state of the periodic steady-state response."""
    n = len(u_period)
    u_spec = np.fft.rfft(u_period, norm=DFT_SCALING)
    lines = np.flatnonzero(np.abs(u_spec) > 1e-10 * np.abs(u_spec).max())
    z = np.exp(2j * np.pi * lines / n)
    x = np.linalg.solve(
        z[:, None, None] * np.eye(linear.order) - linear.A,
        np.broadcast_to(linear.B, (len(z), linear.order, 1)),
    )[:, :, 0] * u_spec[lines, None]
    # one-sided spectrum: bins other than DC and Nyquist count twice
    weight = np.where((lines == 0) | (2 * lines == n), 1.0, 2.0)
    return np.sqrt(np.sum(weight[:, None] * np.abs(x) ** 2, axis=0) / n)


def _variables(basis: MonomialBasis, x: np.ndarray, u: float) -> np.ndarray:
    return np.append(x, u) if basis.include_input else x


def pnlss_simulate(
    model: PnlssModel, u: np.ndarray, x0: Optional[np.ndarray] = None
) -> SimulationResult:
    """
    Run the recursion over ``u`` (physical units).

    ``x`` holds the normalised states, one row per sample plus the final state.
    When a state leaves the divergence bound or becomes non-finite the run stops;
    outputs from that sample on are NaN.
    """
    u_n = np.asarray(u, dtype=float) / model.input_scale
    n_samples = len(u_n)
    n = model.order

    x = np.full((n_samples + 1, n), np.nan)
    y = np.full(n_samples, np.nan)
    x[0] = np.zeros(n) if x0 is None else x0

    A, B, C, D, E, F = model.A, model.B[:, 0], model.C[0], model.D[0, 0], model.E, model.F[0]
    basis, out_basis = model.basis, model.output_basis
    has_e, has_f = basis.n_terms > 0, out_basis is not None and out_basis.n_terms > 0

    for t in range(n_samples):
        xt, ut = x[t], u_n[t]
        yt = C @ xt + D * ut
        x_next = A @ xt + B * ut
        if has_e:
            x_next += E @ basis.evaluate(_variables(basis, xt, ut))
        if has_f:
            yt += F @ out_basis.evaluate(_variables(out_basis, xt, ut))
        y[t] = yt

        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > DIVERGENCE_BOUND:
            log.debug(f"Simulation diverged at sample {t + 1}")
            return SimulationResult(y * model.output_scale, x, True, t + 1)
        x[t + 1] = x_next

    return SimulationResult(y * model.output_scale, x)


def steady_state_simulate(
    model: PnlssModel,
    u_period: np.ndarray,
    max_periods: int = MAX_STEADY_STATE_PERIODS,
    tolerance: float = STEADY_STATE_TOLERANCE,
    x0: Optional[np.ndarray] = None,
) -> SteadyStateResult:
    """
    Repeat the period until two successive outputs differ by less than
    ``tolerance`` relative to the output RMS.
    """
    x_start = np.zeros(model.order) if x0 is None else np.asarray(x0, dtype=float)
    y_prev = None
    residual = np.inf

    for period in range(1, max_periods + 1):
        result = pnlss_simulate(model, u_period, x_start)
        if result.diverged:
            return SteadyStateResult(None, None, None, np.inf, False, True, period)

        y = result.y
        if y_prev is not None:
            scale = rms(y) or 1.0
            residual = float(np.max(np.abs(y - y_prev)) / scale)
            if residual < tolerance:
                return SteadyStateResult(y, x_start, result.x[-1], residual, True, False, period)
        y_prev = y
        x_start = result.x[-1]

    log.warning(f"No steady state after {max_periods} periods, residual {residual:.3e}")
    return SteadyStateResult(y_prev, result.x[0], result.x[-1], residual, False, False, max_periods)


def odd_symmetry_error(model: PnlssModel, u: np.ndarray) -> float:
    """max |y(u) + y(-u)| relative to the output RMS, from zero initial state."""
    plus = pnlss_simulate(model, u).y
    minus = pnlss_simulate(model, -np.asarray(u)).y
    return float(np.max(np.abs(plus + minus)) / (rms(plus) or 1.0))


@dataclass
class PeriodicData:
    """One steady-state experiment reduced to a single averaged period."""

    u_period: np.ndarray
    y_period: np.ndarray
    lines: np.ndarray

    @classmethod
    def from_record(cls, record: TimeRecord, lines: Optional[np.ndarray] = None) -> "PeriodicData":
        lines = record.excited_lines if lines is None else lines
        if lines is None:
            raise ConfigurationError("Excited lines are required for the nonlinear cost")
        n = record.samples_per_period
        return cls(
            record.input.reshape(-1, n).mean(axis=0),
            record.output.reshape(-1, n).mean(axis=0),
            np.asarray(lines, dtype=int),
        )

    @cached_property
    def y_spectrum(self) -> np.ndarray:
        return np.fft.rfft(self.y_period, norm=DFT_SCALING)[self.lines]


def _as_data(records) -> list[PeriodicData]:
    if isinstance(records, (TimeRecord, PeriodicData)):
        records = [records]
    return [r if isinstance(r, PeriodicData) else PeriodicData.from_record(r) for r in records]


def output_residuals(model: PnlssModel, data: PeriodicData) -> Optional[np.ndarray]:
    """Stacked real and imaginary spectral errors at the excited lines, None on divergence."""
    steady = steady_state_simulate(model, data.u_period)
    if steady.diverged:
        return None
    err = np.fft.rfft(steady.y_period, norm=DFT_SCALING)[data.lines] - data.y_spectrum
    return np.concatenate([err.real, err.imag])


def nonlinear_cost(
    model: PnlssModel, records: Union[TimeRecord, PeriodicData, Sequence]
) -> float:
    """Unit-weighted squared spectral error summed over the excited lines."""
    total = 0.0
    for data in _as_data(records):
        r = output_residuals(model, data)
        if r is None:
            log.warning("Model diverged while evaluating the nonlinear cost")
            return np.inf
        total += float(r @ r)
    return total


def _sensitivities(
    model: PnlssModel, u: np.ndarray, x0: np.ndarray, periodic: bool = False
) -> np.ndarray:
    """
    d y(t) / d theta along a run from ``x0``, (T, n_params).

    The initial state sensitivity is zero, or with ``periodic`` the one that
    repeats after ``len(u)`` samples. The periodic one solves
    (I - Phi) s0 = s_T, where Phi is the state transition over the run and s_T
    the end sensitivity of the zero-start run; ``x0`` must then be a
    steady-state initial state.
    """
    u_n = np.asarray(u, dtype=float) / model.input_scale
    n, n_e = model.order, model.E.shape[1]
    out_basis = model.output_basis
    n_f = model.F.shape[1]
    n_par = model.parameter_count

    off_b = n * n
    off_c = off_b + n
    off_d = off_c + n
    off_e = off_d + 1
    off_f = off_e + n * n_e

    rows_a = np.repeat(np.arange(n), n)
    cols_a = np.arange(n * n)
    rows_e = np.repeat(np.arange(n), n_e)
    cols_e = off_e + np.arange(n * n_e)
    diag = np.arange(n)

    A, B, C, D, E, F = model.A, model.B[:, 0], model.C[0], model.D[0, 0], model.E, model.F[0]
    basis = model.basis

    sens = np.zeros((n, n_par))
    explicit = np.zeros((n, n_par))
    dy = np.zeros((len(u_n), n_par))
    x = np.asarray(x0, dtype=float).copy()
    transition = np.eye(n)
    response = np.zeros((len(u_n), n))

    for t, ut in enumerate(u_n):
        v = _variables(basis, x, ut)
        zeta = basis.evaluate(v)

        row = np.zeros(n_par)
        c_eff = C.copy()
        row[off_c:off_d] = x
        row[off_d] = ut
        if n_f:
            vy = _variables(out_basis, x, ut)
            eta = out_basis.evaluate(vy)
            c_eff += F @ out_basis.state_derivative(vy)
            row[off_f:] = eta
        dy[t] = c_eff @ sens + row
        if periodic:
            response[t] = c_eff @ transition

        a_eff = A + E @ basis.state_derivative(v) if n_e else A
        explicit[rows_a, cols_a] = np.tile(x, n)
        explicit[diag, off_b + diag] = ut
        if n_e:
            explicit[rows_e, cols_e] = np.tile(zeta, n)
        sens = a_eff @ sens + explicit
        if periodic:
            transition = a_eff @ transition

        x = A @ x + B * ut + (E @ zeta if n_e else 0.0)

    if periodic:
        s0 = np.linalg.solve(np.eye(n) - transition, sens)
        dy += response @ s0

    return dy * model.output_scale


def output_jacobian(model: PnlssModel, data: PeriodicData) -> Optional[np.ndarray]:
    """
    Jacobian of ``output_residuals`` with respect to ``model.parameters()``,
    from the periodic sensitivities along the steady-state period.
    """
    steady = steady_state_simulate(model, data.u_period)
    if steady.diverged:
        return None
    dy = _sensitivities(model, data.u_period, steady.x_start, periodic=True)
    spec = np.fft.rfft(dy, axis=0, norm=DFT_SCALING)[data.lines]
    return np.vstack([spec.real, spec.imag])


def steady_state_error_db(model: PnlssModel, data: PeriodicData) -> tuple[float, bool]:
    """Time-domain RMS error (dB re 1 m) over one steady-state period, and divergence."""
    steady = steady_state_simulate(model, data.u_period)
    if steady.diverged:
        return np.nan, True
    return float(db(rms(steady.y_period - data.y_period))), False


class _Objective:
    """Residuals and Jacobian over several experiments, for the LM driver."""

    def __init__(self, model: PnlssModel, data: list[PeriodicData], validation: list[PeriodicData]):
        self.model = model
        self.data = data
        self.validation = validation

    def residuals(self, theta: np.ndarray) -> Optional[np.ndarray]:
        candidate = self.model.with_parameters(theta)
        parts = []
        for d in self.data:
            r = output_residuals(candidate, d)
            if r is None:
                log.debug("Candidate step diverged")
                return None
            parts.append(r)
        return np.concatenate(parts)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        candidate = self.model.with_parameters(theta)
        return np.vstack([output_jacobian(candidate, d) for d in self.data])

    def monitor(self, theta: np.ndarray) -> dict:
        candidate = self.model.with_parameters(theta)
        errors = [steady_state_error_db(candidate, d)[0] for d in self.data]
        entry = {"est_error_db": float(10 * np.log10(np.mean(10 ** (np.array(errors) / 10))))}
        if self.validation:
            val = [steady_state_error_db(candidate, d)[0] for d in self.validation]
            entry["val_error_db"] = float(10 * np.log10(np.mean(10 ** (np.array(val) / 10))))
        return entry


def estimate_pnlss(
    linear: LinearModel,
    basis: MonomialBasis,
    records: Union[TimeRecord, Sequence[TimeRecord]],
    lm_config: LMConfig = LMConfig(),
    validation_record: Optional[TimeRecord] = None,
    output_basis: Optional[MonomialBasis] = None,
) -> tuple[PnlssModel, LMTrace]:
    """
    Fit all of (A, B, C, D, E, F) by Levenberg-Marquardt, starting from the
    linear model and zero nonlinear coefficients.
    """
    data = _as_data(records)
    validation = _as_data(validation_record) if validation_record is not None else []

    initial = PnlssModel.from_linear(
        linear, basis, data[0].u_period, data[0].y_period, output_basis=output_basis
    )
    objective = _Objective(initial, data, validation)
    log.info(
        f"Estimating PNLSS model, degrees {list(basis.degrees)}, "
        f"{initial.parameter_count} parameters"
    )

    theta, trace = levenberg_marquardt(
        initial.parameters(), objective.residuals, objective.jacobian, lm_config, objective.monitor
    )
    if trace.stop_reason == "no decrease":
        log.warning(f"Estimation for degrees {list(basis.degrees)} stalled, keeping best model")
    return initial.with_parameters(theta), trace
