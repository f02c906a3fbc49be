import os

import numpy as np
import pytest

# resolve the bundled gzipped MNIST when the caller has not pointed elsewhere
_REPO_DATA = os.path.join(os.path.dirname(__file__), os.pardir, "data", "mnist")
os.environ.setdefault("FLNN_DATA_DIR", os.path.abspath(_REPO_DATA))


def mnist_available() -> bool:
    from flnn.data import resolve_idx_pair, default_data_dir

    try:
        resolve_idx_pair(default_data_dir(), "train")
        resolve_idx_pair(default_data_dir(), "test")
        return True
    except FileNotFoundError:
        return False


needs_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason="MNIST IDX files not found (set FLNN_DATA_DIR or populate data/mnist)",
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
