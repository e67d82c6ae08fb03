import numpy as np
import pytest

from graphunlearn import Graph, SGC, gen_sbm


def make_graph(num_nodes, edges, *, features=None, labels=None, train=None, test=None,
               num_classes=2):
    """Small-graph builder with sensible defaults for structural tests."""
    if features is None:
        features = np.eye(num_nodes)
    if labels is None:
        labels = np.arange(num_nodes) % num_classes
    if train is None:
        train = np.ones(num_nodes, dtype=bool)
    if test is None:
        test = np.zeros(num_nodes, dtype=bool)
    return Graph(num_nodes, edges, features, labels, train, test)


@pytest.fixture
def path_graph():
    """The 5-node path 0-1-2-3-4."""
    return make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])


@pytest.fixture
def toy_graph():
    """4 nodes, 2 classes, two disjoint edges, orthogonal features."""
    return make_graph(
        4,
        [(0, 1), (2, 3)],
        features=np.eye(4),
        labels=np.array([0, 0, 1, 1]),
    )


@pytest.fixture(scope="session")
def sbm_graph():
    """Mid-size SBM used across solver and harness tests."""
    return gen_sbm(blocks=3, nodes_per_block=50, p_intra=0.1, p_inter=0.01,
                   feature_dim=15, seed=7)


@pytest.fixture(scope="session")
def sbm_model(sbm_graph):
    model = SGC(k_hops=2, epochs=400, l2=1e-2)
    model.fit(sbm_graph)
    return model


def finite_difference_grad(fun, theta, step):
    """Central-difference gradient of a scalar function of a flat vector."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        grad[i] = (fun(up) - fun(down)) / (2.0 * step)
    return grad
