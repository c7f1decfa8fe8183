import numpy as np
import pytest

from egloce import backend, build_linear, default_world
from egloce.semantics import LatentDecoder, concept_space_from_world


@pytest.fixture(scope="session", autouse=True)
def compiled_backend():
    """Compile the active backend once so kernel build time never lands
    inside a timed test."""
    return backend.warmup()


@pytest.fixture(scope="session")
def world():
    return default_world()


@pytest.fixture(scope="session")
def schedule():
    return build_linear(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def decoder():
    return LatentDecoder()


@pytest.fixture(scope="session")
def space(world, decoder):
    return concept_space_from_world(world, decoder)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
