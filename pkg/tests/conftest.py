import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from netdyn.model import NetworkParams, random_params

SEEDS = (0, 1, 2)

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def sym():
    return NetworkParams.symmetric()


@pytest.fixture(params=SEEDS)
def seeded_system(request):
    """A random generic 3-neuron system for each fixed seed."""
    return request.param, random_params(3, np.random.default_rng(request.param))


@st.composite
def networks(draw, n_min=2, n_max=4):
    n = draw(st.integers(n_min, n_max))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_params(n, np.random.default_rng(seed))


@st.composite
def section_points(draw, p):
    k = draw(st.integers(0, p.n - 1))
    coords = draw(st.lists(st.floats(-p.theta, p.theta, allow_nan=False), min_size=p.n, max_size=p.n))
    v = np.array(coords)
    v[k] = 0.0
    return v
