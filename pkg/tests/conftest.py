from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@st.composite
def clouds(draw, n_min=2, n_max=12, d_min=1, d_max=3, scale=1.0):
    """A pair of same-size random clouds drawn from a seed."""
    n = draw(st.integers(n_min, n_max))
    d = draw(st.integers(d_min, d_max))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    return rng.normal(scale=scale, size=(n, d)), rng.normal(scale=scale, size=(n, d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
