import numpy as np
import pytest

from couplednet.netgraph import build_graph
from couplednet.plants import linear_agent


def rand_orth(rng, k):
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    return q * np.sign(np.diag(r))


def rand_spd(rng, k, lo=0.5, hi=2.0):
    q = rand_orth(rng, k)
    return q @ np.diag(rng.uniform(lo, hi, k)) @ q.T


def rand_connected_graph(rng, n):
    """Spanning tree plus a few random extra edges."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        a, b = rng.choice(n, size=2, replace=False)
        if (a, b) not in edges and (b, a) not in edges:
            edges.append((int(a), int(b)))
    return build_graph(n, edges)


def meicmp_linear_agent(rng, d, anchor=None):
    """Stable linear agent with symmetric positive-definite dc gain.

    A = -R with R spd and C = B' gives S = B' R^-1 B, which is spd
    whenever B is invertible.
    """
    R = rand_spd(rng, d, 0.6, 1.8)
    while True:
        B = rng.normal(size=(d, d))
        if abs(np.linalg.det(B)) > 0.2:
            break
    w = np.zeros(d) if anchor is None else R @ np.linalg.solve(B.T, anchor)
    # w chosen so that y = anchor at u = 0: y = B'R^-1(Bu + w)
    return linear_agent(-R, B, B.T, w=w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_node_graph():
    return build_graph(2, [(0, 1)])


@pytest.fixture
def diamond_graph():
    return build_graph(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
