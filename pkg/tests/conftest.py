import numpy as np
import pytest

from queryguard import kernels
from queryguard.core import ImageTensor
from queryguard.target import BlobDataConfig, BlobDataset, TargetModel


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def dataset():
    return BlobDataset(BlobDataConfig())


@pytest.fixture(scope="session")
def victim(dataset):
    return TargetModel.nearest_centroid(dataset)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def random_image(rng):
    return ImageTensor.from_array(rng.random((24, 24, 3)))


def sample_correct(dataset, victim, seed=0):
    rng = np.random.default_rng(seed)
    while True:
        image, label = dataset.sample(rng)
        if victim.predict_label(image) == label:
            return image, label
