"""
Levenberg-Marquardt on real residual vectors.

The cost is ``sum(r**2)``. Steps solve the damped normal equations on the
column-scaled Jacobian; damping grows tenfold on a rejected step and shrinks
tenfold (down to a floor) on an accepted one.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np
import pandas as pd
import scipy.linalg

from hysteresis_id.errors import ConfigurationError, NumericalError

log = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LMConfig:
    max_iter: int = 150
    initial_damping_factor: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    min_damping: float = 1e-15
    max_damping: float = 1e16
    max_rejections: int = 20
    cost_tolerance: float = 1e-12
    scale_columns: bool = True

    def __post_init__(self):
        if self.max_iter < 0 or self.max_rejections < 1:
            raise ConfigurationError("max_iter must be >= 0 and max_rejections >= 1")
        if not (self.damping_increase > 1 and 0 < self.damping_decrease < 1):
            raise ConfigurationError("Damping must grow on rejection and shrink on acceptance")
        if self.initial_damping_factor <= 0:
            raise ConfigurationError("initial_damping_factor must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LMConfig":
        return cls(**data)


@dataclass
class StepResult:
    params: np.ndarray
    residuals: Optional[np.ndarray]
    cost: float
    damping: float
    accepted: bool
    step: np.ndarray


@dataclass
class LMTrace:
    entries: list = field(default_factory=list)
    stop_reason: str = ""

    def record(self, iteration: int, cost: float, damping: float, accepted: bool, **extras):
        entry = {"iteration": iteration, "cost": cost, "damping": damping, "accepted": accepted}
        self.entries.append({**entry, **extras})

    def accepted_costs(self) -> np.ndarray:
        return np.array([e["cost"] for e in self.entries if e["accepted"]])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries)


def cost_of(residuals: Optional[np.ndarray]) -> float:
    if residuals is None:
        return np.inf
    cost = float(np.dot(residuals, residuals))
    return cost if np.isfinite(cost) else np.inf


def column_scale(jacobian: np.ndarray) -> np.ndarray:
    scale = np.linalg.norm(jacobian, axis=0)
    scale[scale == 0] = 1.0
    return scale


def solve_damped(
    jacobian: np.ndarray,
    residuals: np.ndarray,
    damping: float,
    scale: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solve ``(Js^T Js + damping I) d = -Js^T r`` with ``Js = J / scale``."""
    if scale is None:
        scale = np.ones(jacobian.shape[1])
    js = jacobian / scale
    lhs = js.T @ js + damping * np.eye(js.shape[1])
    rhs = -(js.T @ residuals)
    return scipy.linalg.solve(lhs, rhs, assume_a="sym") / scale


def initial_damping(jacobian: np.ndarray, scale: Optional[np.ndarray], factor: float) -> float:
    js = jacobian if scale is None else jacobian / scale
    diag = np.einsum("ij,ij->j", js, js)
    return factor * float(diag.max()) if diag.size and diag.max() > 0 else factor


def lm_step(
    params: np.ndarray,
    jacobian: np.ndarray,
    residuals: np.ndarray,
    damping: float,
    residual_fn: ResidualFn,
    scale: Optional[np.ndarray] = None,
    config: LMConfig = LMConfig(),
) -> StepResult:
    """
    One damped Gauss-Newton trial from ``params``.

    The candidate is accepted iff its cost is finite and strictly lower than
    the current cost. A singular damped system counts as a rejection.
    """
    cost = cost_of(residuals)
    try:
        step = solve_damped(jacobian, residuals, damping, scale)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        log.debug(f"Singular damped system at damping {damping:.3e}")
        step = None

    if step is not None and np.all(np.isfinite(step)):
        candidate = params + step
        new_residuals = residual_fn(candidate)
        new_cost = cost_of(new_residuals)
        if new_cost < cost:
            damping = max(damping * config.damping_decrease, config.min_damping)
            return StepResult(candidate, new_residuals, new_cost, damping, True, step)
    else:
        step = np.zeros_like(params)

    damping = min(damping * config.damping_increase, config.max_damping)
    return StepResult(params, residuals, cost, damping, False, step)


def levenberg_marquardt(
    x0: np.ndarray,
    residual_fn: ResidualFn,
    jacobian_fn: JacobianFn,
    config: LMConfig = LMConfig(),
    monitor: Optional[Callable[[np.ndarray], dict]] = None,
) -> tuple[np.ndarray, LMTrace]:
    """
    Minimise ``sum(residual_fn(x)**2)`` starting from ``x0``.

    ``monitor`` is called on every accepted point; the values it returns are
    stored alongside the trace entry. The returned parameters are always the
    best accepted ones.
    """
    trace = LMTrace()
    x = np.asarray(x0, dtype=float).copy()
    residuals = residual_fn(x)
    cost = cost_of(residuals)
    if not np.isfinite(cost):
        raise NumericalError("Initial cost is not finite")

    jacobian = jacobian_fn(x)
    scale = column_scale(jacobian) if config.scale_columns else None
    damping = initial_damping(jacobian, scale, config.initial_damping_factor)
    trace.record(0, cost, damping, True, **(monitor(x) if monitor else {}))

    trace.stop_reason = "max_iter"
    for iteration in range(1, config.max_iter + 1):
        for _ in range(config.max_rejections):
            result = lm_step(x, jacobian, residuals, damping, residual_fn, scale, config)
            damping = result.damping
            if result.accepted:
                break
            trace.record(iteration, result.cost, damping, False)
            if damping >= config.max_damping:
                break

        if not result.accepted:
            log.warning(f"No decreasing step at iteration {iteration}, keeping best parameters")
            trace.stop_reason = "no decrease"
            break

        decrease = (cost - result.cost) / cost if cost > 0 else 0.0
        x, residuals, cost = result.params, result.residuals, result.cost
        trace.record(iteration, cost, damping, True, **(monitor(x) if monitor else {}))
        log.debug(f"LM iteration {iteration}: cost {cost:.6e}, damping {damping:.3e}")

        if cost == 0 or decrease < config.cost_tolerance:
            trace.stop_reason = "converged"
            break

        jacobian = jacobian_fn(x)
        if config.scale_columns:
            scale = column_scale(jacobian)

    return x, trace
