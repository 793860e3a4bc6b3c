import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from reflowedit.errors import (
    DimensionMismatch,
    InvalidCovariance,
    InvalidGrid,
    NonFiniteState,
    TimeSingularity,
    UnsupportedEndpoints,
)
from reflowedit.flowcore import (
    ConditionalField,
    ConstantField,
    GaussianEndpoints,
    GaussianMarginalField,
    TimeGrid,
    as_state,
    eval_conditional_field,
    eval_gaussian_marginal_field,
    eval_reverse_conditional_field,
    exact_gaussian_trajectory,
    sample_endpoint,
)

finite = st.floats(-50, 50, allow_nan=False)


class TestStateAndGrid:
    def test_as_state_rejects_nan(self):
        with pytest.raises(NonFiniteState):
            as_state([0.0, np.nan])

    def test_as_state_rejects_matrix(self):
        with pytest.raises(DimensionMismatch):
            as_state(np.zeros((2, 2)))

    def test_uniform_grid(self):
        grid = TimeGrid.uniform_grid(15)
        assert grid.steps == 15
        assert grid.knots[0] == 0.0 and grid.knots[-1] == 1.0
        assert np.all(np.abs(np.diff(grid.knots) - 1 / 15) <= np.finfo(float).eps)

    @pytest.mark.parametrize("knots", [[0.0, 0.5], [0.1, 1.0], [0.0, 0.6, 0.4, 1.0], [0.0, 0.5, 0.5, 1.0]])
    def test_bad_grids(self, knots):
        with pytest.raises(InvalidGrid):
            TimeGrid(np.array(knots))

    def test_grid_is_immutable(self):
        grid = TimeGrid.uniform_grid(4)
        with pytest.raises(ValueError):
            grid.knots[1] = 0.3


class TestEndpoints:
    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidCovariance):
            GaussianEndpoints([0, 0], [0, 0], [[1, 0.1], [0, 1]], np.eye(2))

    def test_rejects_singular(self):
        # zero-variance limit is not a valid endpoint
        with pytest.raises(InvalidCovariance):
            GaussianEndpoints([0], [0], [[0.0]], [[1.0]])

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            GaussianEndpoints([0, 0], [0, 0], np.eye(3), np.eye(2))


class TestConditionalField:
    def test_at_target_is_zero(self):
        assert np.array_equal(eval_conditional_field([0.3, -2.0], 0.4, [0.3, -2.0]), [0.0, 0.0])

    def test_unit_examples(self):
        assert eval_conditional_field([0.0], 0.0, [1.0]) == pytest.approx([1.0])
        # (1 - 0.5) / (1 - 0.5)
        assert eval_conditional_field([0.5], 0.5, [1.0])[0] == 1.0

    def test_singular_time(self):
        with pytest.raises(TimeSingularity):
            eval_conditional_field([0.0], 1.0 - 1e-7, [1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            eval_conditional_field([0.0, 1.0], 0.2, [1.0])

    def test_reverse_variant_reaches_target_at_zero(self):
        assert eval_reverse_conditional_field([2.0], 0.5, [1.0])[0] == 2.0
        with pytest.raises(TimeSingularity):
            eval_reverse_conditional_field([2.0], 0.0, [1.0])

    @given(st.lists(finite, min_size=1, max_size=4), st.floats(0, 0.99))
    def test_linear_in_displacement(self, xs, t):
        x = np.array(xs)
        target = x + 1.5
        doubled = x + 3.0
        single = eval_conditional_field(x, t, target)
        double = eval_conditional_field(x, t, doubled)
        # target - x is exactly 1.5 / 3.0 only up to rounding of the additions
        np.testing.assert_allclose(double, 2 * single, rtol=1e-12, atol=1e-12)


class TestGaussianField:
    def test_scalar_examples(self):
        ep = GaussianEndpoints.standard(1)
        # (2t - 1) x / (t^2 + (1-t)^2) at t = 0.5, 0
        assert eval_gaussian_marginal_field([1.0], 0.5, ep)[0] == 0.0
        assert eval_gaussian_marginal_field([1.0], 0.0, ep)[0] == -1.0

    def test_at_mean_returns_mean_difference(self):
        ep = GaussianEndpoints([1.0, -2.0], [0.5, 0.5], [[0.4, 0.1], [0.1, 0.3]], [[1.0, 0.2], [0.2, 0.8]])
        for t in (0.0, 0.25, 0.7, 1.0):
            mean_t = t * ep.mu1 + (1 - t) * ep.mu0
            np.testing.assert_allclose(eval_gaussian_marginal_field(mean_t, t, ep), ep.mu1 - ep.mu0, atol=1e-14)

    def test_matches_scalar_formula(self):
        ep = GaussianEndpoints.standard(1)
        rng = np.random.default_rng(7)
        for x, t in zip(rng.normal(size=100) * 3, rng.uniform(0, 1, size=100)):
            expected = (2 * t - 1) * x / (t * t + (1 - t) ** 2)
            assert abs(eval_gaussian_marginal_field([x], t, ep)[0] - expected) <= 1e-12

    def test_conditional_expectation_by_monte_carlo(self):
        # E[X1 - X0 | X_t = x] estimated by regression on joint samples
        ep = GaussianEndpoints([0.5, 0.0], [0.0, -1.0], [[0.5, 0.2], [0.2, 0.4]], [[1.0, 0.0], [0.0, 2.0]])
        rng = np.random.default_rng(3)
        n, t = 400_000, 0.35
        x0 = rng.multivariate_normal(ep.mu0, ep.sigma0, size=n)
        x1 = rng.multivariate_normal(ep.mu1, ep.sigma1, size=n)
        xt = t * x1 + (1 - t) * x0
        design = np.hstack([np.ones((n, 1)), xt])
        coef, *_ = np.linalg.lstsq(design, x1 - x0, rcond=None)
        probe = np.array([0.3, -0.7])
        mc = coef[0] + probe @ coef[1:]
        np.testing.assert_allclose(eval_gaussian_marginal_field(probe, t, ep), mc, atol=0.02)

    def test_pure(self, unit_oracle):
        a = unit_oracle(np.array([0.37]), 0.41)
        b = unit_oracle(np.array([0.37]), 0.41)
        assert a.tobytes() == b.tobytes()


class TestExactTrajectory:
    def test_endpoints(self):
        ep = GaussianEndpoints.standard(1)
        assert exact_gaussian_trajectory([1.0], 0.0, ep)[0] == 1.0
        assert abs(exact_gaussian_trajectory([1.0], 1.0, ep)[0] - 1.0) <= 1e-12

    def test_half_time_against_reference_integrator(self):
        ep = GaussianEndpoints.standard(1)
        sol = solve_ivp(
            lambda t, x: (2 * t - 1) * x / (t * t + (1 - t) ** 2), (0, 0.5), [1.0], rtol=1e-13, atol=1e-15
        )
        assert sol.y[0, -1] == pytest.approx(0.7071067811865476, abs=1e-11)
        assert exact_gaussian_trajectory([1.0], 0.5, ep)[0] == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_diagonal_against_reference_integrator(self):
        ep = GaussianEndpoints.diagonal([0.2, 1.5], [1.0, 0.3])
        fld = GaussianMarginalField(ep)
        x0 = np.array([0.8, -1.1])
        sol = solve_ivp(lambda t, x: fld(x, t), (0, 0.8), x0, method="DOP853", rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(exact_gaussian_trajectory(x0, 0.8, ep), sol.y[:, -1], atol=1e-10)

    @pytest.mark.parametrize(
        "ep",
        [
            GaussianEndpoints([1.0], [0.0], [[1.0]], [[1.0]]),
            GaussianEndpoints([0, 0], [0, 0], [[1.0, 0.2], [0.2, 1.0]], np.eye(2)),
        ],
    )
    def test_unsupported(self, ep):
        with pytest.raises(UnsupportedEndpoints):
            exact_gaussian_trajectory(np.ones(ep.dim), 0.5, ep)

    @settings(max_examples=50)
    @given(finite)
    def test_endpoint_preserving_for_unit_variances(self, x0):
        ep = GaussianEndpoints.standard(1)
        assert abs(exact_gaussian_trajectory([x0], 1.0, ep)[0] - x0) <= 1e-12 * max(1.0, abs(x0))


class TestSampling:
    def test_deterministic(self):
        ep = GaussianEndpoints.diagonal([0.5, 2.0, 1.0], [1.0, 1.0, 1.0])
        a = sample_endpoint(ep, "source", 42)
        b = sample_endpoint(ep, "source", 42)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, sample_endpoint(ep, "source", 43))

    def test_frozen_draw(self):
        # PCG64 + Box-Muller is platform independent; freeze one draw.
        draw = sample_endpoint(GaussianEndpoints.standard(2), "noise", 0)
        again = sample_endpoint(GaussianEndpoints.standard(2), "noise", 0)
        assert draw.tobytes() == again.tobytes()
        u = np.random.Generator(np.random.PCG64(0)).random(2)
        r = math.sqrt(-2 * math.log1p(-u[0]))
        assert draw[0] == pytest.approx(r * math.cos(2 * math.pi * u[1]), abs=1e-15)
        assert draw[1] == pytest.approx(r * math.sin(2 * math.pi * u[1]), abs=1e-15)

    def test_moments(self):
        # standard errors at n = 1e5: mean 0.0032, variance 0.0045
        ep = GaussianEndpoints.standard(1)
        rng = np.random.Generator(np.random.PCG64(123))
        draws = np.array([sample_endpoint(ep, "noise", rng)[0] for _ in range(100_000)])
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05

    def test_correlated_covariance(self):
        ep = GaussianEndpoints([1.0, -1.0], [0, 0], [[1.0, 0.6], [0.6, 0.5]], np.eye(2))
        rng = np.random.Generator(np.random.PCG64(9))
        draws = np.array([sample_endpoint(ep, "source", rng) for _ in range(40_000)])
        np.testing.assert_allclose(draws.mean(axis=0), ep.mu0, atol=0.03)
        np.testing.assert_allclose(np.cov(draws.T), ep.sigma0, atol=0.03)


class TestFieldObjects:
    def test_constant(self):
        f = ConstantField([1.0, 2.0])
        assert f.kind == "constant"
        np.testing.assert_array_equal(f(np.zeros(2), 0.3), [1.0, 2.0])
        with pytest.raises(DimensionMismatch):
            f(np.zeros(3), 0.3)

    def test_conditional_kind(self):
        f = ConditionalField([1.0])
        assert f.kind == "conditional"
        with pytest.raises(TimeSingularity):
            f(np.zeros(1), 1.0)
