import os

import numpy as np
import pytest

MNIST_DIR = os.environ.get("TWOVIEW_MNIST_DIR", "/root/data/mnist")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir():
    from twoview.data import find_mnist

    try:
        find_mnist(MNIST_DIR, "train")
        find_mnist(MNIST_DIR, "test")
    except FileNotFoundError:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set TWOVIEW_MNIST_DIR)")
    return MNIST_DIR


def paired_gaussian(rng, n=400, d1=8, d2=7, shared=3, noise=1.0):
    """Two views sharing ``shared`` latent factors, each mixed by a random map."""
    S = rng.standard_normal((n, shared))
    X1 = np.c_[S, noise * rng.standard_normal((n, d1 - shared))] @ rng.standard_normal((d1, d1))
    X2 = np.c_[S, noise * rng.standard_normal((n, d2 - shared))] @ rng.standard_normal((d2, d2))
    return X1, X2


@pytest.fixture
def paired(rng):
    return paired_gaussian(rng)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
