"""LQR-controlled velocity guidance.

The optimal controller that steers a state to a target at the end of the
time interval, with infinite terminal weight, is the straight-line
conditional field. Blending it into a base velocity with strength ``eta``
pulls a trajectory toward an anchor:

* inversion is guided toward a noise-space anchor,
* sampling is guided toward a *dual* target, a point between the original
  source and the previous round's output.

Several quadratic terminal costs collapse onto a single one at their
weighted mean (:func:`weighted_target`), which is why the dual target is an
ordinary anchor for the conditional field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyTargets, InvalidParameter, NonPositiveLambda, TimeSingularity
from .flowcore import (
    T_EPS,
    GuidedField,
    TimeGrid,
    VelocityField,
    as_state,
    check_same_dim,
    eval_conditional_field,
    eval_reverse_conditional_field,
)
from .solvers import Direction, SolverKind, Trajectory, fit_loglog_slope, integrate

DEFAULT_ETA = 0.9
DEFAULT_LAMBDA = 0.7
DEFAULT_STEPS = 15
DEFAULT_GUIDED_STEPS = 4


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance strengths and the step window they apply to.

    ``eta`` and ``lambda_mix`` drive the dual-target sampling pass.
    ``inversion_eta`` is the strength of the inversion pass toward its
    noise anchor; it shares the ``guided_steps`` window.
    """

    eta: float = DEFAULT_ETA
    lambda_mix: float = DEFAULT_LAMBDA
    guided_steps: int = DEFAULT_GUIDED_STEPS
    inversion_eta: float = 0.0

    def __post_init__(self):
        for name in ("eta", "lambda_mix", "inversion_eta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameter(f"{name} must lie in [0, 1], got {value!r}")
        if int(self.guided_steps) != self.guided_steps or self.guided_steps < 0:
            raise InvalidParameter(f"guided_steps must be a non-negative integer, got {self.guided_steps!r}")

    def check_window(self, steps: int) -> None:
        _check_window(self.guided_steps, steps)


def _check_window(guided_steps: int, steps: int) -> None:
    if not 0 <= guided_steps <= steps:
        raise InvalidParameter(f"guided_steps={guided_steps} must lie in [0, {steps}]")


def dual_target(x_source, x_prev, lambda_mix: float) -> np.ndarray:
    """``x_source + lambda_mix * (x_prev - x_source)``."""
    x_source = as_state(x_source, "x_source")
    x_prev = as_state(x_prev, "x_prev")
    check_same_dim(x_source, x_prev)
    return x_source + lambda_mix * (x_prev - x_source)


def weighted_target(targets: Sequence[tuple[np.ndarray, float]]) -> tuple[np.ndarray, float]:
    """Weighted mean of the targets and the total weight."""
    if len(targets) == 0:
        raise EmptyTargets("at least one target is required")
    points = [as_state(x, "target") for x, _ in targets]
    weights = np.array([float(w) for _, w in targets])
    if np.any(weights <= 0.0):
        raise NonPositiveLambda("target weights must be strictly positive")
    for p in points[1:]:
        check_same_dim(points[0], p)
    total = float(weights.sum())
    return (weights @ np.vstack(points)) / total, total


def guided_velocity(
    x, t: float, base: VelocityField, target, eta: float, reverse: bool = False
) -> np.ndarray:
    """Blend ``base(x, t)`` with the conditional field toward ``target``.

    Returns ``v + eta * (v_cond - v)``. With ``reverse=True`` the
    conditional field reaches ``target`` at ``t = 0`` (sampling direction).
    ``eta == 0`` returns the base velocity without touching the
    conditional field.
    """
    x = as_state(x)
    v = base(x, t)
    if eta == 0.0:
        return v
    if reverse:
        v_cond = eval_reverse_conditional_field(x, t, target)
    else:
        v_cond = eval_conditional_field(x, t, target)
    return v + eta * (v_cond - v)


def _gated(base: VelocityField, target, eta: float, guided_steps: int, reverse: bool):
    guided = GuidedField(base, target, eta, reverse=reverse) if eta > 0.0 else base

    def field_for_step(k: int) -> VelocityField:
        return guided if k < guided_steps else base

    return field_for_step


def guided_inversion(
    x0,
    noise_target,
    grid: TimeGrid,
    solver: SolverKind | str,
    base_field: VelocityField,
    eta: float,
    guided_steps: int,
) -> Trajectory:
    """Forward pass (image to noise) guided toward ``noise_target`` for the first ``guided_steps`` steps."""
    _check_window(guided_steps, grid.steps)
    noise_target = as_state(noise_target, "noise_target")
    traj = integrate(x0, grid, Direction.FORWARD, solver, _gated(base_field, noise_target, eta, guided_steps, False))
    traj.meta.update(eta=eta, guided_steps=guided_steps, steps=grid.steps)
    return traj


def guided_sampling(
    x1,
    target,
    grid: TimeGrid,
    solver: SolverKind | str,
    base_field: VelocityField,
    eta: float,
    guided_steps: int,
) -> Trajectory:
    """Reverse pass (noise to image) guided toward a single ``target``."""
    _check_window(guided_steps, grid.steps)
    target = as_state(target, "target")
    traj = integrate(x1, grid, Direction.REVERSE, solver, _gated(base_field, target, eta, guided_steps, True))
    traj.meta.update(eta=eta, guided_steps=guided_steps, steps=grid.steps)
    return traj


def dual_guided_sampling(
    x1,
    x_source,
    x_prev,
    grid: TimeGrid,
    solver: SolverKind | str,
    base_field: VelocityField,
    eta: float = DEFAULT_ETA,
    lambda_mix: float = DEFAULT_LAMBDA,
    guided_steps: int = DEFAULT_GUIDED_STEPS,
) -> Trajectory:
    """Reverse pass guided toward ``dual_target(x_source, x_prev, lambda_mix)``."""
    if not 0.0 <= lambda_mix <= 1.0:
        raise InvalidParameter(f"lambda_mix must lie in [0, 1], got {lambda_mix!r}")
    target = dual_target(x_source, x_prev, lambda_mix)
    traj = guided_sampling(x1, target, grid, solver, base_field, eta, guided_steps)
    traj.meta.update(lambda_mix=lambda_mix, target=target)
    return traj


# --- LQR objective and controllers ----------------------------------------


@dataclass(frozen=True)
class LqrProblem:
    z0: np.ndarray
    targets: tuple = field(default_factory=tuple)
    grid: TimeGrid = field(default_factory=lambda: TimeGrid.uniform_grid(DEFAULT_STEPS))

    def __post_init__(self):
        z0 = as_state(self.z0, "z0")
        object.__setattr__(self, "z0", z0)
        if len(self.targets) == 0:
            raise EmptyTargets("LQR problem needs at least one target")
        cleaned = []
        for x, w in self.targets:
            x = as_state(x, "target")
            check_same_dim(z0, x)
            if not w > 0.0:
                raise NonPositiveLambda(f"target weight must be > 0, got {w!r}")
            cleaned.append((x, float(w)))
        object.__setattr__(self, "targets", tuple(cleaned))


def rollout_controls(z0, controls, grid: TimeGrid) -> np.ndarray:
    """Terminal state of ``Z_{k+1} = Z_k + c_k * dt_k``."""
    z = as_state(z0, "z0")
    controls = np.asarray(controls, dtype=np.float64)
    if controls.shape != (grid.steps, z.size):
        raise DimensionMismatch(f"controls must have shape {(grid.steps, z.size)}, got {controls.shape}")
    return z + np.diff(grid.knots) @ controls


def lqr_objective(controls, problem: LqrProblem) -> float:
    """Control energy plus weighted terminal distances to every target."""
    controls = np.asarray(controls, dtype=np.float64)
    z1 = rollout_controls(problem.z0, controls, problem.grid)
    dts = np.diff(problem.grid.knots)
    running = 0.5 * float(np.sum(dts * np.sum(controls * controls, axis=1)))
    terminal = sum(0.5 * w * float(np.sum((z1 - x) ** 2)) for x, w in problem.targets)
    return running + terminal


def optimal_control_closed_form(z, t: float, mu_hat) -> np.ndarray:
    """Infinite-weight optimal control ``(mu_hat - z) / (1 - t)``."""
    z = as_state(z, "z")
    mu_hat = as_state(mu_hat, "mu_hat")
    check_same_dim(z, mu_hat)
    if t >= 1.0 - T_EPS:
        raise TimeSingularity(f"closed-form control is singular at t={t!r}")
    return (mu_hat - z) / (1.0 - t)


def finite_lambda_control(z, t: float, target, lam: float) -> np.ndarray:
    """Optimal control for terminal weight ``lam``: ``(target - z) / (1/lam + 1 - t)``."""
    if not lam > 0.0:
        raise NonPositiveLambda(f"lam must be > 0, got {lam!r}")
    if not 0.0 <= t < 1.0:
        raise TimeSingularity(f"t={t!r} outside [0, 1)")
    z = as_state(z, "z")
    target = as_state(target, "target")
    check_same_dim(z, target)
    return (target - z) / (1.0 / lam + (1.0 - t))


def lqr_limit_ladder(z, t: float, target, lambdas: Sequence[float]) -> tuple[list[tuple[float, float]], float]:
    """Distance between the finite-weight and limiting controllers for each weight, and the log-log slope."""
    if len(set(lambdas)) < 3:
        raise InvalidParameter("need at least three distinct lambda values")
    limit = optimal_control_closed_form(z, t, target)
    rows = [(float(lam), float(np.linalg.norm(finite_lambda_control(z, t, target, lam) - limit))) for lam in lambdas]
    return rows, fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows])


@dataclass(frozen=True)
class Prop1Report:
    endpoint: np.ndarray
    mu_hat: np.ndarray
    total_weight: float
    gap: float


class _ClosedFormControl:
    kind = "lqr-control"

    def __init__(self, mu_hat):
        self.mu_hat = mu_hat

    def __call__(self, z, t):
        return optimal_control_closed_form(z, t, self.mu_hat)


def verify_proposition1(problem: LqrProblem) -> Prop1Report:
    """Integrate the closed-form controller toward the weighted mean with Euler and report the terminal gap."""
    mu_hat, total = weighted_target(problem.targets)
    traj = integrate(problem.z0, problem.grid, Direction.FORWARD, SolverKind.EULER, lambda k: _ClosedFormControl(mu_hat))
    return Prop1Report(traj.endpoint, mu_hat, total, float(np.linalg.norm(traj.endpoint - mu_hat)))
