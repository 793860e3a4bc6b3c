"""Fixed-step ODE steppers and trajectory drivers.

Inversion integrates forward (``t: 0 -> 1``) and sampling integrates in
reverse (``t: 1 -> 0``). Both reuse the same step functions; the reverse
direction just passes a negative ``dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateFit, InvalidParameter, NonFiniteState, StepOutOfRange
from .flowcore import TimeGrid, VelocityField, as_state

_RANGE_SLACK = 1e-12


class SolverKind(str, Enum):
    EULER = "euler"
    MIDPOINT = "midpoint"
    MIDPOINT_CACHED = "midpoint-cached"

    @classmethod
    def parse(cls, value) -> "SolverKind":
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise InvalidParameter(f"unknown solver {value!r}; expected one of {choices}") from None

    def evals_per_step(self) -> int:
        return 1 if self is SolverKind.EULER else 2


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    direction: Direction
    field_evals: int
    solver: SolverKind
    meta: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def steps(self) -> int:
        return len(self.times) - 1


def _check_step(t: float, dt: float) -> None:
    if dt == 0.0:
        raise StepOutOfRange("dt must be non-zero")
    if not (-_RANGE_SLACK <= t <= 1.0 + _RANGE_SLACK):
        raise StepOutOfRange(f"t={t!r} outside [0, 1]")
    end = t + dt
    if not (-_RANGE_SLACK <= end <= 1.0 + _RANGE_SLACK):
        raise StepOutOfRange(f"t + dt = {end!r} outside [0, 1]")


def _check_half(t: float, dt: float) -> None:
    half = t + 0.5 * dt
    if not (0.0 <= half < 1.0):
        raise StepOutOfRange(f"midpoint time {half!r} outside [0, 1)")


def euler_step(x, t: float, dt: float, field: VelocityField) -> np.ndarray:
    """``x + v(x, t) * dt``."""
    _check_step(t, dt)
    x = as_state(x)
    return x + field(x, t) * dt


def midpoint_step(x, t: float, dt: float, field: VelocityField) -> np.ndarray:
    """Classical explicit midpoint step (two field evaluations)."""
    _check_step(t, dt)
    _check_half(t, dt)
    x = as_state(x)
    x_half = x + field(x, t) * (0.5 * dt)
    return x + field(x_half, t + 0.5 * dt) * dt


def midpoint_cached_step(
    x, t: float, dt: float, field: VelocityField, cache: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint step that reuses the previous midpoint velocity as its first stage.

    Returns ``(x_next, new_cache)``. With ``cache=None`` this is exactly
    :func:`midpoint_step` and costs two evaluations; otherwise it costs one.
    """
    _check_step(t, dt)
    _check_half(t, dt)
    x = as_state(x)
    first = field(x, t) if cache is None else cache
    x_half = x + first * (0.5 * dt)
    v_mid = field(x_half, t + 0.5 * dt)
    return x + v_mid * dt, v_mid


def _step_times(grid: TimeGrid, direction: Direction) -> np.ndarray:
    knots = grid.knots
    return knots.copy() if direction is Direction.FORWARD else knots[::-1].copy()


def integrate(
    x_start,
    grid: TimeGrid,
    direction: Direction | str,
    solver: SolverKind | str,
    field_for_step: Callable[[int], VelocityField],
) -> Trajectory:
    """Driver shared by all trajectory functions; ``field_for_step(k)`` picks the field of step ``k``."""
    direction = Direction(direction)
    solver = SolverKind.parse(solver)
    times = _step_times(grid, direction)
    x = as_state(x_start, "x_start")
    states = np.empty((times.size, x.size))
    states[0] = x
    evals = 0
    cache = None
    for k in range(times.size - 1):
        t, dt = times[k], times[k + 1] - times[k]
        fld = field_for_step(k)
        if solver is SolverKind.EULER:
            x = euler_step(x, t, dt, fld)
            evals += 1
        elif solver is SolverKind.MIDPOINT:
            x = midpoint_step(x, t, dt, fld)
            evals += 2
        else:
            evals += 2 if cache is None else 1
            x, cache = midpoint_cached_step(x, t, dt, fld, cache)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"state left the finite range at step {k} (t={times[k + 1]!r})")
        states[k + 1] = x
    return Trajectory(times, states, direction, evals, solver)


def run_trajectory(
    x_start,
    grid: TimeGrid,
    direction: Direction | str,
    solver: SolverKind | str,
    field: VelocityField,
) -> Trajectory:
    """Integrate ``field`` across every step of ``grid``."""
    return integrate(x_start, grid, direction, solver, lambda k: field)


def matched_steps(solver: SolverKind | str, budget: int) -> int:
    """Largest step count whose trajectory costs at most ``budget`` field evaluations."""
    solver = SolverKind.parse(solver)
    if solver is SolverKind.EULER:
        n = budget
    elif solver is SolverKind.MIDPOINT:
        n = budget // 2
    else:
        n = budget - 1
    if n < 1:
        raise InvalidParameter(f"budget {budget} too small for solver {solver.value}")
    return n


def endpoint_errors(
    field: VelocityField,
    x_start,
    exact_endpoint,
    solver: SolverKind | str,
    n_list: Iterable[int],
    direction: Direction | str = Direction.FORWARD,
) -> list[tuple[int, float, int]]:
    """``(N, ||numerical - exact||, field_evals)`` for each step count."""
    exact_endpoint = as_state(exact_endpoint, "exact_endpoint")
    rows = []
    for n in n_list:
        traj = run_trajectory(x_start, TimeGrid.uniform_grid(n), direction, solver, field)
        rows.append((int(n), float(np.linalg.norm(traj.endpoint - exact_endpoint)), traj.field_evals))
    return rows


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log(ys)`` against ``log(xs)``."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def convergence_order(
    field: VelocityField,
    x_start,
    exact_endpoint,
    solver: SolverKind | str,
    n_list: Sequence[int],
    direction: Direction | str = Direction.FORWARD,
) -> float:
    """Global order: slope of log(endpoint error) against log(1/N).

    Raises :class:`DegenerateFit` when the solver is exact on ``field`` (all
    errors below 1e-14); callers report that as an "exact" sentinel.
    """
    if len(set(n_list)) < 3:
        raise InvalidParameter("need at least three distinct step counts")
    rows = endpoint_errors(field, x_start, exact_endpoint, solver, n_list, direction)
    errors = np.array([err for _, err, _ in rows])
    if np.all(errors < 1e-14):
        raise DegenerateFit("all endpoint errors below 1e-14; integration is exact")
    if np.any(errors == 0.0):
        raise DegenerateFit("some endpoint errors are exactly zero; cannot fit a slope")
    return fit_loglog_slope([1.0 / n for n, _, _ in rows], errors)
