import os

# keep test runs from writing a mesh cache into the working tree
os.environ.setdefault("BUBBLESPECTRA_MESH_CACHE_ENABLED", "false")

import numpy as np
import pytest

from src.geometry.manifold import get_manifold
from src.geometry.mesh import icosphere
from src.service.forms_service import FormsService
from src.service.maps_service import MapService


@pytest.fixture(scope="session")
def sphere():
    return get_manifold("sphere2")


@pytest.fixture(scope="session")
def clifford():
    return get_manifold("clifford")


@pytest.fixture(scope="session")
def meshes():
    return {level: icosphere(level) for level in range(0, 4)}


@pytest.fixture(scope="session")
def identity_map(meshes, sphere):
    return MapService.from_spec(meshes[2], "identity", sphere)


@pytest.fixture(scope="session")
def identity_forms(identity_map):
    return FormsService.assemble(identity_map)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
