import numpy as np
import pytest


def make_batch(rng, n, pos_scale=40.0, speed_max=18.0, aligned=True):
    """Random well-formed anchors. Velocity heading-aligned unless told not to."""
    theta = rng.uniform(-np.pi, np.pi, n)
    a = np.zeros((n, 10))
    a[:, 0:3] = rng.uniform(-pos_scale, pos_scale, (n, 3))
    a[:, 3:6] = rng.uniform(0.4, 5.0, (n, 3))
    a[:, 6] = np.cos(theta)
    a[:, 7] = np.sin(theta)
    if aligned:
        speed = rng.uniform(0.0, speed_max, n)
        a[:, 8] = speed * np.cos(theta)
        a[:, 9] = speed * np.sin(theta)
    else:
        a[:, 8:10] = rng.uniform(-speed_max, speed_max, (n, 2))
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def anchor_batch(rng):
    return make_batch(rng, 64)
