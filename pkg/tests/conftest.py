import numpy as np
import pytest

from gbrec import kernels

# results never depend on the pool size (rows are reduced independently);
# capping it just keeps the sandboxed test run from oversubscribing cores
kernels.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
