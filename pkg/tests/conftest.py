import numpy as np
import pytest

from lasergrasp.geom import Pose, Rotation


def random_rotation(rng: np.random.Generator) -> Rotation:
    q = rng.normal(size=4)
    return Rotation(q / np.linalg.norm(q))


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
