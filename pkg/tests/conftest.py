import os

# must be set before numba is first imported; the sandbox reports nproc=1
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

import trapkit as tk


@pytest.fixture(scope="session")
def tiar10():
    chain = tk.build_tiar_projection(10)
    part = tk.TrapPartition.from_goal(chain.state_count, (0,))
    return chain, part


@pytest.fixture(scope="session")
def tiar10_cert(tiar10):
    chain, part = tiar10
    return tk.certify(chain, part, tk.CertificateParameters(92.0, 0.5))


@pytest.fixture(scope="session")
def bd_chain():
    cache = {}

    def build(n):
        if n not in cache:
            cache[n] = tk.build_birth_death(n)
        return cache[n]

    return build


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)


def random_generator(rng, n):
    """Random irreducible rate matrix for oracle comparisons."""
    gen = rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(gen, 0.0)
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return gen


def random_kernel(rng, n):
    """Random strictly positive stochastic matrix."""
    kernel = rng.uniform(0.1, 1.0, (n, n))
    return kernel / kernel.sum(axis=1, keepdims=True)
