from pathlib import Path

import numpy as np
import pytest

from reflowedit.config import default_endpoints
from reflowedit.flowcore import GaussianEndpoints, GaussianMarginalField

DATA = Path(__file__).parent / "data"


class NonlinearField:
    """Generic smooth field with no special structure: x' = cos(3t) x - x^3 / 3."""

    kind = "test-nonlinear"

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        return np.cos(3.0 * t) * x - x**3 / 3.0


@pytest.fixture
def unit_oracle():
    return GaussianMarginalField(GaussianEndpoints.standard(1))


@pytest.fixture
def oracle8():
    return GaussianMarginalField(default_endpoints(8))


@pytest.fixture
def nonlinear_field():
    return NonlinearField()


@pytest.fixture
def golden_dir():
    return DATA / "golden"
