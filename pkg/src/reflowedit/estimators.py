"""scikit-learn compatible wrappers.

:class:`GuidedFlowInverter` treats each row of ``X`` as a source state:
``transform`` inverts rows to noise, ``inverse_transform`` samples noise
back with dual-target guidance anchored on the fitted sources.

:class:`AttentionMaskGuidance` fits a mask on a ``(K, H, W)`` attention
stack and ``transform`` modulates another stack with it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attnmask import MaskParams, apply_mask, check_stack, pipeline
from .errors import DimensionMismatch
from .flowcore import GaussianEndpoints, GaussianMarginalField, TimeGrid, make_rng, sample_endpoint, standard_normal
from .guidance import (
    DEFAULT_ETA,
    DEFAULT_GUIDED_STEPS,
    DEFAULT_LAMBDA,
    DEFAULT_STEPS,
    GuidanceConfig,
    dual_guided_sampling,
    guided_inversion,
)
from .solvers import SolverKind


class GuidedFlowInverter(TransformerMixin, BaseEstimator):
    """Guided rectified-flow inversion and sampling over rows of ``X``.

    Parameters
    ----------
    field : VelocityField, optional
        Velocity field. Defaults to the standard Gaussian oracle of the
        fitted dimension.
    n_steps : int
        Uniform grid size used by both passes.
    solver : {"euler", "midpoint", "midpoint-cached"}
    eta, lambda_mix, guided_steps : float, float, int
        Sampling guidance strength, dual-target weight and step window.
    inversion_eta : float
        Guidance strength of the inversion pass toward a noise anchor.
    random_state : int
        Seed for the per-row noise anchors.
    """

    def __init__(
        self,
        field=None,
        n_steps: int = DEFAULT_STEPS,
        solver: str = "midpoint-cached",
        eta: float = DEFAULT_ETA,
        lambda_mix: float = DEFAULT_LAMBDA,
        guided_steps: int = DEFAULT_GUIDED_STEPS,
        inversion_eta: float = 0.0,
        random_state: int = 0,
    ):
        self.field = field
        self.n_steps = n_steps
        self.solver = solver
        self.eta = eta
        self.lambda_mix = lambda_mix
        self.guided_steps = guided_steps
        self.inversion_eta = inversion_eta
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.guidance_ = GuidanceConfig(self.eta, self.lambda_mix, self.guided_steps, self.inversion_eta)
        self.grid_ = TimeGrid.uniform_grid(self.n_steps)
        self.guidance_.check_window(self.grid_.steps)
        self.solver_ = SolverKind.parse(self.solver)
        self.field_ = self.field if self.field is not None else GaussianMarginalField(
            GaussianEndpoints.standard(X.shape[1])
        )
        rng = make_rng(self.random_state)
        if isinstance(self.field_, GaussianMarginalField):
            anchors = [sample_endpoint(self.field_.endpoints, "noise", rng) for _ in range(X.shape[0])]
        else:
            anchors = [standard_normal(rng, X.shape[1]) for _ in range(X.shape[0])]
        self.sources_ = X.copy()
        self.noise_anchors_ = np.vstack(anchors)
        self.n_features_in_ = X.shape[1]
        return self

    def _rows(self, X):
        check_is_fitted(self, "sources_")
        X = check_array(X, dtype=np.float64)
        if X.shape != self.sources_.shape:
            raise DimensionMismatch(f"expected shape {self.sources_.shape}, got {X.shape}")
        return X

    def transform(self, X):
        """Invert each row to noise space."""
        X = self._rows(X)
        g = self.guidance_
        return np.vstack([
            guided_inversion(x, a, self.grid_, self.solver_, self.field_, g.inversion_eta, g.guided_steps).endpoint
            for x, a in zip(X, self.noise_anchors_)
        ])

    def inverse_transform(self, Z, previous=None):
        """Sample rows of ``Z`` back, guided toward the fitted sources and ``previous`` outputs."""
        Z = self._rows(Z)
        prev = self.sources_ if previous is None else self._rows(previous)
        g = self.guidance_
        return np.vstack([
            dual_guided_sampling(
                z, s, p, self.grid_, self.solver_, self.field_, g.eta, g.lambda_mix, g.guided_steps
            ).endpoint
            for z, s, p in zip(Z, self.sources_, prev)
        ])

    def edit_round(self, X):
        """One invert/sample round applied to the previous outputs ``X``."""
        return self.inverse_transform(self.transform(X), previous=X)


class AttentionMaskGuidance(TransformerMixin, BaseEstimator):
    """Two-valued attention mask from a medium-low activation window."""

    def __init__(self, i=10, j=14, tau=0.5, h_factor=2.0, r_factor=0.8, sort_on="rescaled"):
        self.i = i
        self.j = j
        self.tau = tau
        self.h_factor = h_factor
        self.r_factor = r_factor
        self.sort_on = sort_on

    def fit(self, X, y=None):
        params = MaskParams(self.i, self.j, self.tau, self.h_factor, self.r_factor, self.sort_on)
        result = pipeline(check_stack(X), params)
        self.mask_ = result.mask
        self.selected_ = result.selected
        self.activations_ = result.activations
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = check_stack(X, min_count=1)
        return apply_mask(X, self.mask_)
