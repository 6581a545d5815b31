import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def _mnist_dir() -> Path:
    return Path(os.environ.get("VSQL_DATA_DIR", Path.home() / ".cache" / "vsql" / "mnist"))


def mnist_available() -> bool:
    d = _mnist_dir()
    stems = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    return all((d / s).exists() or (d / (s + ".gz")).exists() for s in stems)


needs_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST files not found (set VSQL_DATA_DIR)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pure(n, rng):
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return v / np.linalg.norm(v)


def random_density(n, rng, rank=None):
    d = 2**n
    rank = d if rank is None else rank
    a = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real
