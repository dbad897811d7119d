import sys

import numpy as np
import pytest

from asni.data import Dataset, write_idx
from asni.tensor import conv2d, flatten, linear, maxpool2d, relu


def synthetic_digits(n: int, seed: int, size: int = 28, classes: int = 10):
    """Noisy copies of fixed per-class prototypes, as uint8 images."""
    protos = np.random.default_rng(1234).random((classes, size, size)) < 0.25
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    noise = rng.random((n, size, size)) < 0.08
    images = np.where(protos[labels] ^ noise, 255, 0).astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_synthetic_mnist(directory, n_train=600, n_test=200):
    directory.mkdir(parents=True, exist_ok=True)
    for split, n, seed in (("train", n_train, 1), ("t10k", n_test, 2)):
        images, labels = synthetic_digits(n, seed)
        write_idx(directory / f"{split}-images-idx3-ubyte", images)
        write_idx(directory / f"{split}-labels-idx1-ubyte", labels)
    return directory


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    return write_synthetic_mnist(tmp_path_factory.mktemp("synthetic_mnist"))


def small_dataset(n, seed, shape=(1, 6, 6), classes=3):
    rng = np.random.default_rng(seed)
    protos = np.random.default_rng(99).standard_normal((classes,) + shape)
    labels = rng.integers(0, classes, n)
    x = protos[labels] + 0.3 * rng.standard_normal((n,) + shape)
    return Dataset(x.astype(np.float32), labels.astype(np.int64), "train", "toy")


@pytest.fixture
def toy_data():
    return small_dataset(48, 0), small_dataset(24, 1)


@pytest.fixture
def toy_fc_spec():
    # kept tiny so full training runs finish in milliseconds
    return [flatten(), linear(36, 8), relu(), linear(8, 3)]


@pytest.fixture
def toy_conv_spec():
    return [conv2d(1, 2, 3), relu(), maxpool2d(2), flatten(), linear(18, 3)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in mod.TITLES.items():
        status, detail = mod.RESULTS.get(n, ("NOT RUN", "deselected (slow); run with -m slow"))
        terminalreporter.write_line(f"criterion {n} [{status}] {title}: {detail}")
