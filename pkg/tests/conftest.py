import numpy as np
import pytest

from quadsim.model import default_robot


@pytest.fixture(scope="session")
def model():
    return default_robot()


def random_q(rng, n=None, pitch=1.2):
    """Random configurations away from the pitch singularity."""
    shape = (20,) if n is None else (n, 20)
    q = np.zeros(shape)
    q[..., :3] = rng.uniform(-1.0, 1.0, shape[:-1] + (3,))
    q[..., 3] = rng.uniform(-np.pi, np.pi, shape[:-1])
    q[..., 4] = rng.uniform(-pitch, pitch, shape[:-1])
    q[..., 5] = rng.uniform(-np.pi, np.pi, shape[:-1])
    q[..., 6:] = rng.uniform(-1.5, 1.5, shape[:-1] + (14,))
    return q


def random_qdot(rng, n=None, scale=1.0):
    shape = (20,) if n is None else (n, 20)
    return rng.uniform(-scale, scale, shape)
