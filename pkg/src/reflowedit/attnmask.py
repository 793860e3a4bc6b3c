"""Adaptive attention-mask guidance over stacks of attention maps.

A stack is a ``(K, H, W)`` array holding one nonnegative map per
transformer block. The pipeline

1. rescales every map through ``sigmoid(10 * (minmax(m) - 0.5))``,
2. ranks maps by activation (sum of entries), ascending,
3. averages the maps at sorted positions ``i..j`` (1-based, inclusive),
4. thresholds the average at ``tau`` into a two-valued mask
   (``h_factor`` where ``avg >= tau``, ``r_factor`` elsewhere),
5. multiplies every map of the next step by the mask.

Medium-low activation windows favour blocks that attend to local detail
rather than global layout, which keeps edits localized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, EmptySelection, InvalidParameter, WindowOutOfRange

DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True)
class MaskParams:
    i: int = 10
    j: int = 14
    tau: float = 0.5
    h_factor: float = 2.0
    r_factor: float = 0.8
    sort_on: Literal["rescaled", "raw"] = "rescaled"

    def __post_init__(self):
        if not 1 <= self.i < self.j:
            raise WindowOutOfRange(f"need 1 <= i < j, got i={self.i}, j={self.j}")
        if not self.h_factor > self.r_factor > 0.0:
            raise InvalidParameter(f"need h_factor > r_factor > 0, got {self.h_factor}, {self.r_factor}")
        if self.sort_on not in ("rescaled", "raw"):
            raise InvalidParameter(f"sort_on must be 'rescaled' or 'raw', got {self.sort_on!r}")


def check_map(m, name: str = "map") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0.0):
        raise InvalidParameter(f"{name} entries must be finite and nonnegative")
    return m


def check_stack(stack, min_count: int = 2) -> np.ndarray:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or 0 in stack.shape[1:]:
        raise DimensionMismatch(f"stack must have shape (K, H, W), got {stack.shape}")
    if stack.shape[0] < min_count:
        raise DimensionMismatch(f"stack needs at least {min_count} maps, got {stack.shape[0]}")
    if not np.all(np.isfinite(stack)) or np.any(stack < 0.0):
        raise InvalidParameter("stack entries must be finite and nonnegative")
    return stack


def softmax_attention(q, k, head_dim: int) -> np.ndarray:
    """Row-wise ``softmax(q @ k.T / sqrt(head_dim))``."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    k = np.atleast_2d(np.asarray(k, dtype=np.float64))
    if q.shape[1] != k.shape[1]:
        raise DimensionMismatch(f"query width {q.shape[1]} != key width {k.shape[1]}")
    if head_dim <= 0:
        raise InvalidParameter(f"head_dim must be positive, got {head_dim}")
    logits = q @ k.T / np.sqrt(head_dim)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=1, keepdims=True)


def rescale_map(m) -> np.ndarray:
    """Min-max normalize, then squash through ``sigmoid(10 * (x - 0.5))``.

    A constant map (range below 1e-12) normalizes to 0.5 everywhere.
    """
    m = check_map(m)
    lo, hi = m.min(), m.max()
    if hi - lo < DEGENERATE_RANGE:
        norm = np.full_like(m, 0.5)
    else:
        norm = (m - lo) / (hi - lo)
    return expit(10.0 * (norm - 0.5))


def activation(m) -> float:
    return float(np.sum(m))


def sort_select(stack, i: int, j: int, keys=None) -> tuple[np.ndarray, np.ndarray]:
    """Maps at ascending-activation positions ``i..j`` (1-based, inclusive).

    ``keys`` overrides the ranking values (defaults to the activation of
    each map in ``stack``). Ties keep block order. Returns the selected
    maps and their original indices.
    """
    stack = check_stack(stack)
    n = stack.shape[0]
    if not 1 <= i < j <= n:
        raise WindowOutOfRange(f"window [{i}, {j}] invalid for {n} maps")
    if keys is None:
        keys = stack.sum(axis=(1, 2))
    order = np.argsort(np.asarray(keys, dtype=np.float64), kind="stable")
    picked = order[i - 1 : j]
    return stack[picked], picked


def average_window(selected) -> np.ndarray:
    selected = np.asarray(selected, dtype=np.float64)
    if selected.ndim != 3 or selected.shape[0] == 0:
        raise EmptySelection("nothing to average")
    return selected.mean(axis=0)


def threshold_mask(avg, params: MaskParams) -> np.ndarray:
    avg = np.asarray(avg, dtype=np.float64)
    return np.where(avg >= params.tau, params.h_factor, params.r_factor)


def apply_mask(next_map, mask, bypass: bool = False) -> np.ndarray:
    """Elementwise product; no renormalization afterwards."""
    next_map = np.asarray(next_map, dtype=np.float64)
    if bypass:
        return next_map.copy()
    mask = np.asarray(mask, dtype=np.float64)
    if next_map.shape[-2:] != mask.shape:
        raise DimensionMismatch(f"map shape {next_map.shape[-2:]} != mask shape {mask.shape}")
    return next_map * mask


@dataclass(frozen=True)
class MaskResult:
    mask: np.ndarray
    modulated: np.ndarray
    selected: np.ndarray
    activations: np.ndarray
    h_factor: float = 2.0

    @property
    def h_count(self) -> int:
        return int(np.count_nonzero(self.mask == self.h_factor))


def pipeline(stack, params: MaskParams, next_stack=None) -> MaskResult:
    """Build the mask from ``stack`` and apply it to every map of ``next_stack``.

    ``next_stack`` defaults to ``stack`` itself.
    """
    stack = check_stack(stack)
    next_stack = stack if next_stack is None else check_stack(next_stack, min_count=1)
    if next_stack.shape[1:] != stack.shape[1:]:
        raise DimensionMismatch(f"next stack maps are {next_stack.shape[1:]}, expected {stack.shape[1:]}")
    rescaled = np.stack([rescale_map(m) for m in stack])
    source = rescaled if params.sort_on == "rescaled" else stack
    acts = source.sum(axis=(1, 2))
    selected, picked = sort_select(rescaled, params.i, params.j, keys=acts)
    mask = threshold_mask(average_window(selected), params)
    return MaskResult(mask, apply_mask(next_stack, mask), picked, acts, params.h_factor)
