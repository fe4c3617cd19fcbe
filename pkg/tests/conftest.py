import numpy as np
import pytest

from oodfuzz.model_io import Dataset
from oodfuzz.runtime import Dense, Flatten, Network, Relu


def random_mlp(sizes, seed=0, dtype=np.float32, input_shape=None):
    """Random dense/relu network; `sizes` includes input and output widths."""
    rng = np.random.default_rng(seed)
    layers = []
    if input_shape is not None and len(input_shape) > 1:
        layers.append(Flatten())
    for i in range(len(sizes) - 1):
        w = rng.normal(0, 1.0 / np.sqrt(sizes[i]), size=(sizes[i + 1], sizes[i])).astype(dtype)
        b = rng.normal(0, 0.1, size=sizes[i + 1]).astype(dtype)
        layers.append(Dense(w, b))
        if i < len(sizes) - 2:
            layers.append(Relu())
    return Network(layers, input_shape or (sizes[0],), sizes[-1])


def random_images(n, shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, size=(n, *shape)).astype(np.float32)


def random_dataset(n, shape, class_count, seed=0, name="toy"):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, *shape), dtype=np.uint8)
    labels = rng.integers(0, class_count, size=n).astype(np.int64)
    return Dataset(images, labels, name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
