import numpy as np
import pytest

from tractmap.geometry import Tractography
from tractmap.graph import distance_matrix
from tractmap.rng import make_rng


def random_walks(rng, n, npts=6, half=10.0):
    """``n`` random-walk streamlines started uniformly in a cube."""
    return [rng.uniform(-half, half, size=3) + np.cumsum(rng.normal(size=(npts, 3)), axis=0)
            for _ in range(n)]


def random_distance_matrix(rng, n, **kw):
    return distance_matrix(Tractography(random_walks(rng, n, **kw)))


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


def box_tractography(rng, n, half=15.0, npts=10, step=1.0):
    """Random walks of ``npts`` vertices (step ``step`` mm) started uniformly
    in a cube of half-width ``half``: small but tract-like instances."""
    return Tractography([rng.uniform(-half, half, size=3)
                         + np.cumsum(rng.normal(scale=step, size=(npts, 3)), axis=0)
                         for _ in range(n)])


def permuted_instance(seed, n=5, half=15.0):
    """(A, B, pi) with B equal to A relabeled by the permutation pi."""
    rng = make_rng(seed, "iso")
    a = distance_matrix(box_tractography(rng, n, half))
    pi = rng.permutation(n)
    b = np.empty_like(a)
    b[np.ix_(pi, pi)] = a
    return a, b, pi
