import numpy as np
import pytest

from wavemorph import imaging


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A tiny deterministic synthetic corpus shared across tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = imaging.synth_dataset(11, 8, 3, root, size=64)
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
