import numpy as np
import pytest

from trncat.network import ATTRIBUTE, PHRASE, TEXTUAL, TextRichNetwork


def random_network(rng, n_textual, n_aux, edges_per_doc=3, isolated=0):
    """Random bipartite weighted network; the last ``isolated`` textual nodes have no edges."""
    kinds = [TEXTUAL] * n_textual + [ATTRIBUTE if k % 2 else PHRASE for k in range(n_aux)]
    displays = [f"t{i}" for i in range(n_textual)] + [f"a{k}" for k in range(n_aux)]
    edges = []
    for i in range(n_textual - isolated):
        m = int(rng.integers(1, min(edges_per_doc, n_aux) + 1))
        for a in rng.choice(n_aux, size=m, replace=False):
            edges.append((i, n_textual + int(a), float(rng.uniform(0.2, 4.0))))
    return TextRichNetwork(tuple(kinds), tuple(displays), tuple(edges))


def dense_ppr(network, source, beta):
    """Exact PPR by a dense linear solve; isolated nodes get a unit self-loop."""
    n = network.n_nodes
    A = np.zeros((n, n))
    for u, v, w in network.edges:
        A[u, v] += w
        A[v, u] += w
    d = A.sum(axis=1)
    for i in np.flatnonzero(d == 0):
        A[i, i] = 1.0
    d = A.sum(axis=1)
    T = A / d[:, None]
    e = np.zeros(n)
    e[source] = 1.0
    return np.linalg.solve(np.eye(n) - beta * T.T, (1 - beta) * e), d


def dense_ppr_power(network, source, beta, tol=1e-12):
    """Same vector by fixed-point iteration, for cross-checking the solve."""
    n = network.n_nodes
    A = np.zeros((n, n))
    for u, v, w in network.edges:
        A[u, v] += w
        A[v, u] += w
    d = A.sum(axis=1)
    A[d == 0, d == 0] = 1.0
    T = A / A.sum(axis=1)[:, None]
    e = np.zeros(n)
    e[source] = 1.0
    pi = e.copy()
    while True:
        nxt = beta * T.T @ pi + (1 - beta) * e
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
