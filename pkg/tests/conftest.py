"""Shared fixtures: small deterministic scenes reused across test modules."""

import numpy as np
import pytest

from panoloc.scene_io import ChangeOp, SceneSpec, generate_scene


@pytest.fixture(scope="session")
def small_scene():
    """A small unchanged room: (reference_cloud, changed_cloud, queries)."""
    spec = SceneSpec(extents=(4.0, 5.0, 2.5), density=200.0, n_furniture=2,
                     n_queries=2, query_height=128, query_density=3200.0)
    return generate_scene(spec, seed=7)


@pytest.fixture(scope="session")
def changed_scene():
    """The same room with a deleted region and a recolored region."""
    spec = SceneSpec(extents=(4.0, 5.0, 2.5), density=200.0, n_furniture=2,
                     n_queries=2, query_height=128, query_density=3200.0,
                     changes=(ChangeOp("delete", lo=(0, 0, 0), hi=(1.6, 2.0, 2.5)),
                              ChangeOp("recolor", lo=(2.4, 3.0, 0), hi=(4.0, 5.0, 2.5),
                                       color_delta=(0.3, -0.2, 0.1))))
    return generate_scene(spec, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
