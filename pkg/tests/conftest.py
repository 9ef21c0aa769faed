import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from manifold_mls.point_index import PointCloud
from manifold_mls.synthetic import ManifoldSpec, sample_tubular

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def circle10():
    return ManifoldSpec.circle(10.0)


@pytest.fixture(scope="session")
def circle_cloud(circle10):
    """5000 tube samples around the radius-10 circle, sigma = 0.5."""
    return PointCloud(sample_tubular(circle10, 5000, 0.5, seed=7).points)


def random_subspace(rng, D, d):
    from manifold_mls.geometry import orthonormalize
    return orthonormalize(rng.standard_normal((D, d)))


def plane_cloud(D=3, d=2, n=400, half=3.0, seed=0, rotation=None, offset=None):
    """Noiseless grid-free samples on an affine d-plane (first d axes, optionally rotated)."""
    rng = np.random.default_rng(seed)
    P = np.zeros((n, D))
    P[:, :d] = rng.uniform(-half, half, (n, d))
    if rotation is not None:
        P = P @ rotation.T
    if offset is not None:
        P = P + offset
    return P
