import numpy as np
import pytest

from nnsd import Hyperparams, make_domain


def p3_adjacency() -> np.ndarray:
    """Path graph on 3 nodes: 0-1-2."""
    B = np.zeros((3, 3), dtype=np.uint8)
    B[0, 1] = B[1, 0] = 1
    B[1, 2] = B[2, 1] = 1
    return B


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_domain():
    """5 units, intercept + one covariate, geographic adjacency present."""
    rng = np.random.default_rng(7)
    n = 5
    cent = rng.normal(size=(n, 2))
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ np.array([1.0, 0.5]) + rng.normal(scale=0.3, size=n)
    B = np.zeros((n, n), dtype=np.uint8)
    for i in range(n - 1):
        B[i, i + 1] = B[i + 1, i] = 1
    return make_domain(
        [f"u{i}" for i in range(n)], cent, y, 0.09, X=X, geo_adjacency=B
    )


@pytest.fixture
def p3_domain():
    """Minimal 3-unit domain whose geo adjacency is the path 0-1-2."""
    cent = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    y = np.array([0.3, -0.1, 0.5])
    return make_domain(["a", "b", "c"], cent, y, 0.25, geo_adjacency=p3_adjacency())


@pytest.fixture(params=["NNSD", "NN", "SD", "ICAR"])
def variant(request):
    return request.param


@pytest.fixture
def hp_nnsd():
    return Hyperparams(variant="NNSD")
