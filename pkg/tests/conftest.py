import numpy as np
import pytest

from smddp import ahe

# Fixed 32-bit primes: big enough for every statistics magnitude used in the
# unit tests, tiny enough that exhaustive checks stay fast.
SMALL_P = 2_147_483_659
SMALL_Q = 2_147_483_693


@pytest.fixture(scope="session")
def small_key():
    return ahe.keypair_from_primes(SMALL_P, SMALL_Q)


@pytest.fixture(scope="session")
def key_1024():
    return ahe.keygen(1024, np.random.default_rng(0xA0))


@pytest.fixture(scope="session")
def key_2048():
    return ahe.keygen(2048, np.random.default_rng(0xB0))
