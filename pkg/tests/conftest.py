import numpy as np
import pytest

from n2c.phantom import PhantomConfig, generate_phantom


@pytest.fixture(scope="session")
def default_volume():
    """The default 64x64, 8-slice, 5% iid-noise phantom (seed 7)."""
    return generate_phantom(PhantomConfig(), seed=7)


@pytest.fixture(scope="session")
def small_volume():
    """A quick 32x32 volume for training-loop plumbing tests."""
    return generate_phantom(PhantomConfig(size=32, n_slices=4, n_regions=3), seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
