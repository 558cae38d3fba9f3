import numpy as np
import pytest

from trajgs.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_scene_dir(tmp_path_factory):
    """Small masked synthetic dataset shared by the slower tests."""
    root = tmp_path_factory.mktemp("tiny")
    spec = SyntheticSpec(n_static=12, n_dynamic=4, n_frames=6, n_cameras=4, width=24, height=24,
                         focal=30.0, test_every=3, seed=3)
    generate_synthetic(spec, root)
    return root
