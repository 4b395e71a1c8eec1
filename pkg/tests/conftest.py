import os

# single-threaded BLAS keeps the many small solves in these tests fast and
# the run records bit-reproducible across machines
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from nhvmc import build_lattice


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def chain6():
    return build_lattice("chain1d", 6)


def random_configs(rng, n_samples, n_sites):
    return (1 - 2 * rng.integers(0, 2, (n_samples, n_sites))).astype(np.int8)
