import numpy as np
import pytest

from treeskel.cloud import PointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(20240815)


def make_cloud(xyz, **kwargs) -> PointCloud:
    return PointCloud(np.asarray(xyz, dtype=np.float64), **kwargs)


def random_cloud(rng, n, scale=1.0, colors=False) -> PointCloud:
    xyz = rng.uniform(0.0, scale, size=(n, 3))
    cols = rng.integers(0, 256, size=(n, 3)) if colors else None
    return PointCloud(xyz, colors=cols)
