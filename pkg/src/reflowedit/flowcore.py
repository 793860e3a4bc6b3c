"""States, time grids and velocity fields.

States are plain 1-D ``float64`` numpy arrays. :func:`as_state` is the single
entry point that validates them (finite, non-empty, one-dimensional).

Four field kinds are provided:

* :class:`ConstantField` -- a fixed velocity, useful for exactness checks.
* :class:`ConditionalField` -- the straight-line field ``(target - x) / (1 - t)``.
* :class:`GaussianMarginalField` -- the exact marginal velocity of the
  independent coupling between two Gaussians; this is the analytic stand-in
  for a trained network.
* :class:`GuidedField` -- a base field blended with a conditional field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidCovariance,
    InvalidGrid,
    InvalidParameter,
    NonFiniteState,
    SingularCovariance,
    TimeSingularity,
    UnsupportedEndpoints,
)

T_EPS = 1e-6
"""Conditional fields refuse to evaluate within this distance of their singular time."""


def as_state(x, name: str = "x") -> np.ndarray:
    """Validate and copy ``x`` into a finite 1-D float64 array."""
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"{name} contains NaN or Inf")
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


@dataclass(frozen=True)
class TimeGrid:
    """Knots ``0 = t_0 < ... < t_N = 1``."""

    knots: np.ndarray
    uniform: bool = False

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        if knots.ndim != 1 or knots.size < 2:
            raise InvalidGrid("a grid needs at least two knots")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise InvalidGrid("grid endpoints must be exactly 0 and 1")
        if not np.all(np.diff(knots) > 0):
            raise InvalidGrid("grid knots must be strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform_grid(cls, steps: int) -> "TimeGrid":
        if int(steps) != steps or steps < 1:
            raise InvalidGrid(f"steps must be a positive integer, got {steps!r}")
        steps = int(steps)
        knots = np.arange(steps + 1, dtype=np.float64) / steps
        return cls(knots, uniform=True)

    @property
    def steps(self) -> int:
        return self.knots.size - 1

    def __len__(self) -> int:
        return self.knots.size


def _check_spd(name: str, sigma: np.ndarray, dim: int) -> np.ndarray:
    sigma = np.array(sigma, dtype=np.float64, copy=True)
    if sigma.ndim == 0:
        sigma = sigma.reshape(1, 1)
    if sigma.shape != (dim, dim):
        raise DimensionMismatch(f"{name} must be {dim}x{dim}, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise InvalidCovariance(f"{name} contains NaN or Inf")
    if np.max(np.abs(sigma - sigma.T)) > 1e-12:
        raise InvalidCovariance(f"{name} is not symmetric")
    if np.min(np.linalg.eigvalsh(sigma)) <= 0.0:
        raise InvalidCovariance(f"{name} is not positive definite")
    sigma.setflags(write=False)
    return sigma


@dataclass(frozen=True)
class GaussianEndpoints:
    """Source (``t = 0``) and noise (``t = 1``) Gaussians of the flow."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray

    def __post_init__(self):
        mu0 = as_state(self.mu0, "mu0")
        mu1 = as_state(self.mu1, "mu1")
        check_same_dim(mu0, mu1)
        d = mu0.size
        for name, mu in (("mu0", mu0), ("mu1", mu1)):
            mu.setflags(write=False)
            object.__setattr__(self, name, mu)
        object.__setattr__(self, "sigma0", _check_spd("sigma0", self.sigma0, d))
        object.__setattr__(self, "sigma1", _check_spd("sigma1", self.sigma1, d))

    @classmethod
    def standard(cls, dim: int) -> "GaussianEndpoints":
        zero = np.zeros(dim)
        return cls(zero, zero, np.eye(dim), np.eye(dim))

    @classmethod
    def diagonal(cls, var0, var1, mu0=None, mu1=None) -> "GaussianEndpoints":
        var0 = np.atleast_1d(np.asarray(var0, dtype=np.float64))
        var1 = np.atleast_1d(np.asarray(var1, dtype=np.float64))
        zero = np.zeros(var0.size)
        return cls(
            zero if mu0 is None else mu0,
            zero if mu1 is None else mu1,
            np.diag(var0),
            np.diag(var1),
        )

    @property
    def dim(self) -> int:
        return self.mu0.size

    def is_diagonal(self) -> bool:
        off0 = self.sigma0 - np.diag(np.diag(self.sigma0))
        off1 = self.sigma1 - np.diag(np.diag(self.sigma1))
        return not (np.any(off0) or np.any(off1))


class VelocityField(Protocol):
    kind: str

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray: ...


def eval_conditional_field(x, t: float, target) -> np.ndarray:
    """Straight-line velocity ``(target - x) / (1 - t)`` that reaches ``target`` at ``t = 1``."""
    x = as_state(x)
    target = as_state(target, "target")
    check_same_dim(x, target)
    if t >= 1.0 - T_EPS:
        raise TimeSingularity(f"conditional field is singular at t={t!r} (needs t < 1 - {T_EPS})")
    return (target - x) / (1.0 - t)


def eval_reverse_conditional_field(x, t: float, target) -> np.ndarray:
    """Straight-line velocity toward ``target`` reached at ``t = 0``.

    Expressed in forward time, so a sampling step with negative ``dt``
    moves the state toward ``target``: ``(x - target) / t``.
    """
    x = as_state(x)
    target = as_state(target, "target")
    check_same_dim(x, target)
    if t <= T_EPS:
        raise TimeSingularity(f"reverse conditional field is singular at t={t!r} (needs t > {T_EPS})")
    return (x - target) / t


def eval_gaussian_marginal_field(x, t: float, ep: GaussianEndpoints) -> np.ndarray:
    """Exact marginal velocity ``E[X1 - X0 | X_t = x]`` for independent Gaussian endpoints.

    Parameters
    ----------
    x : array_like
        State at time ``t``.
    t : float
        Time in ``[0, 1]``.
    ep : GaussianEndpoints
        Source and noise distributions.
    """
    x = as_state(x)
    if x.size != ep.dim:
        raise DimensionMismatch(f"state has dim {x.size}, endpoints have dim {ep.dim}")
    if not 0.0 <= t <= 1.0:
        raise TimeSingularity(f"t={t!r} outside [0, 1]")
    cov_t = t * t * ep.sigma1 + (1.0 - t) ** 2 * ep.sigma0
    cross = t * ep.sigma1 - (1.0 - t) * ep.sigma0
    mean_t = t * ep.mu1 + (1.0 - t) * ep.mu0
    try:
        gain = np.linalg.solve(cov_t, x - mean_t)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"marginal covariance at t={t!r} is singular") from exc
    return (ep.mu1 - ep.mu0) + cross @ gain


def exact_gaussian_trajectory(x0, t: float, ep: GaussianEndpoints) -> np.ndarray:
    """Closed-form solution of the marginal-field ODE for zero-mean diagonal endpoints.

    Each coordinate scales as ``sqrt(t^2 s1^2 + (1-t)^2 s0^2) / s0`` where
    ``s0^2, s1^2`` are the per-axis variances.
    """
    x0 = as_state(x0, "x0")
    if x0.size != ep.dim:
        raise DimensionMismatch(f"state has dim {x0.size}, endpoints have dim {ep.dim}")
    if np.any(ep.mu0) or np.any(ep.mu1):
        raise UnsupportedEndpoints("closed-form trajectory needs zero means")
    if not ep.is_diagonal():
        raise UnsupportedEndpoints("closed-form trajectory needs diagonal covariances")
    var0 = np.diag(ep.sigma0)
    var1 = np.diag(ep.sigma1)
    return x0 * np.sqrt((t * t * var1 + (1.0 - t) ** 2 * var0) / var0)


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Box-Muller transform of PCG64 uniforms; no rejection step, so draws are bitwise reproducible."""
    n_pairs = (size + 1) // 2
    u = rng.random(2 * n_pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * n_pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:size]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_endpoint(
    ep: GaussianEndpoints,
    which: Literal["source", "noise"],
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Draw one state from the source or noise Gaussian.

    ``seed`` may be an integer (fresh PCG64 stream) or an existing generator.
    """
    if which == "source":
        mu, sigma = ep.mu0, ep.sigma0
    elif which == "noise":
        mu, sigma = ep.mu1, ep.sigma1
    else:
        raise InvalidParameter(f"which must be 'source' or 'noise', got {which!r}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    chol = np.linalg.cholesky(sigma)
    return mu + chol @ standard_normal(rng, ep.dim)


# --- field objects ---------------------------------------------------------


@dataclass(frozen=True)
class ConstantField:
    velocity: np.ndarray
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        v = as_state(self.velocity, "velocity")
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)

    @classmethod
    def zeros(cls, dim: int) -> "ConstantField":
        return cls(np.zeros(dim))

    def __call__(self, x, t):
        x = as_state(x)
        check_same_dim(x, self.velocity)
        return self.velocity.copy()


@dataclass(frozen=True)
class ConditionalField:
    """Straight-line field toward ``target``.

    ``reverse=True`` gives the sampling-direction variant that reaches the
    target at ``t = 0``.
    """

    target: np.ndarray
    reverse: bool = False
    kind: str = field(default="conditional", init=False)

    def __post_init__(self):
        target = as_state(self.target, "target")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    def __call__(self, x, t):
        if self.reverse:
            return eval_reverse_conditional_field(x, t, self.target)
        return eval_conditional_field(x, t, self.target)


@dataclass(frozen=True)
class GaussianMarginalField:
    endpoints: GaussianEndpoints
    kind: str = field(default="analytic-gaussian", init=False)

    def __call__(self, x, t):
        return eval_gaussian_marginal_field(x, t, self.endpoints)

    def exact(self, x0, t):
        return exact_gaussian_trajectory(x0, t, self.endpoints)


@dataclass(frozen=True)
class GuidedField:
    """``base + eta * (conditional - base)``; see :func:`reflowedit.guidance.guided_velocity`."""

    base: VelocityField
    target: np.ndarray
    eta: float
    reverse: bool = False
    kind: str = field(default="guided-composite", init=False)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidParameter(f"eta must lie in [0, 1], got {self.eta!r}")
        target = as_state(self.target, "target")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    def __call__(self, x, t):
        from .guidance import guided_velocity

        return guided_velocity(x, t, self.base, self.target, self.eta, reverse=self.reverse)
