"""Guided rectified-flow inversion for multi-turn editing, on analytic flows."""

__version__ = "0.1.0"

from .attnmask import MaskParams, pipeline
from .errors import ReflowError
from .estimators import AttentionMaskGuidance, GuidedFlowInverter
from .flowcore import (
    ConditionalField,
    ConstantField,
    GaussianEndpoints,
    GaussianMarginalField,
    GuidedField,
    TimeGrid,
)
from .guidance import GuidanceConfig, dual_guided_sampling, guided_inversion
from .multiturn import EditSession, run_round, run_session
from .solvers import SolverKind, run_trajectory

__all__ = [
    "AttentionMaskGuidance",
    "ConditionalField",
    "ConstantField",
    "EditSession",
    "GaussianEndpoints",
    "GaussianMarginalField",
    "GuidanceConfig",
    "GuidedField",
    "GuidedFlowInverter",
    "MaskParams",
    "ReflowError",
    "SolverKind",
    "TimeGrid",
    "dual_guided_sampling",
    "guided_inversion",
    "pipeline",
    "run_round",
    "run_session",
    "run_trajectory",
]
