import numpy as np
import pytest

import arrayfront as af
from helpers import RATE, two_source_scene


@pytest.fixture(scope="session")
def overlap_scene():
    """Rendered 4-mic anechoic scene with two partially overlapping sources."""
    spec = two_source_scene()
    return spec, af.render(spec, RATE)


@pytest.fixture(scope="session")
def overlap_tensor(overlap_scene):
    _, result = overlap_scene
    return af.stft(result.mixture)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
