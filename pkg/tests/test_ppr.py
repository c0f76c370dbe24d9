import numpy as np
import pytest

from conftest import dense_ppr, dense_ppr_power, random_network
from trncat.network import ATTRIBUTE, TEXTUAL, TextRichNetwork
from trncat.ppr import (
    NeighborTable, PprVector, build_neighbor_table, cache_key, max_pushes_bound,
    normalize_adjacency, ppr_push, topk_textual, touched_bound,
)


def _two_node(weight=5.0):
    return TextRichNetwork((TEXTUAL, ATTRIBUTE), ("a", "b"), ((0, 1, weight),))


def test_single_edge_transition():
    T = normalize_adjacency(_two_node()).matrix().toarray()
    assert T[0, 1] == 1.0 and T[1, 0] == 1.0


def test_isolated_node_self_loop():
    net = TextRichNetwork((TEXTUAL, TEXTUAL, ATTRIBUTE), ("a", "b", "c"), ((0, 2, 1.0),))
    T = normalize_adjacency(net).matrix().toarray()
    assert T[1, 1] == 1.0
    np.testing.assert_array_equal(T.sum(axis=1), 1.0)


def test_weighted_star_split():
    net = TextRichNetwork((ATTRIBUTE, TEXTUAL, TEXTUAL), ("c", "x", "y"),
                          ((1, 0, 1.0), (2, 0, 3.0)))
    T = normalize_adjacency(net).matrix().toarray()
    assert T[0, 1] == 0.25 and T[0, 2] == 0.75


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.85, 0.99])
def test_isolated_source_keeps_all_mass(beta):
    net = TextRichNetwork((TEXTUAL,), ("a",), ())
    v = ppr_push(normalize_adjacency(net), 0, beta, 1e-4)
    assert v.entries == {0: 1.0}


def test_beta_zero_is_identity(rng):
    net = random_network(rng, 10, 6)
    v = ppr_push(normalize_adjacency(net), 3, 0.0, 1e-6)
    assert v.entries == {3: 1.0}


def test_two_node_fixed_point():
    net = _two_node(1.0)
    exact, _ = dense_ppr(net, 0, 0.5)
    np.testing.assert_allclose(exact, [2 / 3, 1 / 3], atol=1e-12)
    v = ppr_push(normalize_adjacency(net), 0, 0.5, 1e-8)
    np.testing.assert_allclose(v.dense(2), [0.6667, 0.3333], atol=1e-4)


def test_epsilon_must_be_positive():
    T = normalize_adjacency(_two_node())
    for eps in (0.0, -1e-3):
        with pytest.raises(ValueError):
            ppr_push(T, 0, 0.85, eps)


def test_dense_oracles_agree(rng):
    net = random_network(rng, 15, 8, isolated=1)
    for s in (0, 7):
        a, _ = dense_ppr(net, s, 0.85)
        np.testing.assert_allclose(a, dense_ppr_power(net, s, 0.85), atol=1e-10)


@pytest.mark.parametrize("trial", range(10))
@pytest.mark.parametrize("beta,eps", [(0.5, 1e-3), (0.85, 1e-5)])
def test_push_bound_and_certificate(trial, beta, eps):
    rng = np.random.default_rng(trial)
    net = random_network(rng, int(rng.integers(5, 60)), int(rng.integers(3, 40)), isolated=trial % 2)
    T = normalize_adjacency(net)
    for src in rng.choice(net.textual_ids(), size=3, replace=False):
        v = ppr_push(T, int(src), beta, eps)
        exact, d = dense_ppr(net, int(src), beta)
        p = v.dense(net.n_nodes)
        assert np.all(p >= 0) and p.sum() <= 1 + 1e-12
        assert np.abs(p - exact).sum() <= eps * d.sum()
        for u, r in v.residual.items():
            assert r <= eps * d[u]
        # the l1 gap is exactly the leftover residual mass
        assert np.abs(p - exact).sum() == pytest.approx(sum(v.residual.values()), abs=1e-12)


def test_monotone_refinement(rng):
    net = random_network(rng, 40, 25)
    T = normalize_adjacency(net)
    exact, _ = dense_ppr(net, 0, 0.85)
    errs = [np.abs(ppr_push(T, 0, 0.85, eps).dense(net.n_nodes) - exact).sum()
            for eps in (1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_locality_bounds(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 80, 20)
    T = normalize_adjacency(net)
    for beta, eps in [(0.5, 1e-2), (0.85, 1e-3)]:
        v = ppr_push(T, 0, beta, eps)
        assert v.touched <= touched_bound(T, beta, eps)
        assert v.n_pushes <= max_pushes_bound(T, beta, eps)


def test_topk_only_source():
    net = TextRichNetwork((TEXTUAL, TEXTUAL), ("a", "b"), ())
    v = PprVector(0, {0: 1.0}, 1e-4)
    assert topk_textual(v, 5, net) == [(0, 1.0)]


def test_topk_excludes_auxiliary():
    net = TextRichNetwork((TEXTUAL, ATTRIBUTE, TEXTUAL), ("t1", "a1", "t2"), ())
    v = PprVector(0, {0: 0.3, 1: 0.5, 2: 0.2}, 1e-4)
    assert topk_textual(v, 2, net) == [(0, 0.3), (2, 0.2)]


def test_topk_ties_by_id():
    net = TextRichNetwork((TEXTUAL,) * 4, tuple("abcd"), ())
    v = PprVector(0, {3: 0.2, 1: 0.2, 0: 0.5, 2: 0.1}, 1e-4)
    assert topk_textual(v, 3, net) == [(0, 0.5), (1, 0.2), (3, 0.2)]


def test_topk_matches_dense_filter():
    rng = np.random.default_rng(7)
    net = random_network(rng, 12, 8)
    T = normalize_adjacency(net)
    textual = np.array(net.is_textual())
    for src in net.textual_ids():
        v = ppr_push(T, src, 0.85, 1e-10)
        exact, _ = dense_ppr(net, src, 0.85)
        order = sorted((i for i in range(net.n_nodes) if textual[i] and exact[i] > 0),
                       key=lambda i: (-exact[i], i))[:5]
        got = topk_textual(v, 5, net)
        assert [j for j, _ in got] == order
        np.testing.assert_allclose([s for _, s in got], exact[order], atol=1e-8)


def test_table_single_textual_node():
    net = TextRichNetwork((TEXTUAL, ATTRIBUTE), ("t", "a"), ((0, 1, 2.0),))
    table = build_neighbor_table(net, 0.85, 1e-6, 50)
    assert list(table.neighbors) == [0]
    assert [j for j, _ in table[0]] == [0]


def test_table_no_padding_when_k_large(rng):
    net = random_network(rng, 6, 3, edges_per_doc=1)
    table = build_neighbor_table(net, 0.85, 1e-6, 100)
    for src, row in table.neighbors.items():
        assert 1 <= len(row) <= 6
        assert all(s > 0 for _, s in row)


def test_table_matches_dense_oracle():
    rng = np.random.default_rng(30)
    net = random_network(rng, 18, 12)
    beta, eps, K = 0.85, 1e-6, 10
    table = build_neighbor_table(net, beta, eps, K)
    textual = np.array(net.is_textual())
    vol = normalize_adjacency(net).volume
    for src, row in table.neighbors.items():
        exact, _ = dense_ppr(net, src, beta)
        assert len(row) <= K
        assert all(textual[j] for j, _ in row)
        scores = [s for _, s in row]
        assert scores == sorted(scores, reverse=True)
        for j, s in row:
            assert abs(s - exact[j]) <= eps * vol
        ranked = sorted((i for i in range(net.n_nodes) if textual[i]), key=lambda i: -exact[i])
        if len(ranked) > K and exact[ranked[K - 1]] - exact[ranked[K]] > 2 * eps * vol:
            assert {j for j, _ in row} == set(ranked[:K])


def test_table_order_independent(rng):
    net = random_network(rng, 25, 10)
    ids = net.textual_ids()
    a = build_neighbor_table(net, 0.85, 1e-5, 5, sources=ids)
    b = build_neighbor_table(net, 0.85, 1e-5, 5, sources=list(reversed(ids)))
    assert a.neighbors == b.neighbors


def test_table_cache_round_trip(tmp_path, rng):
    net = random_network(rng, 10, 5)
    table = build_neighbor_table(net, 0.85, 1e-4, 4)
    path = tmp_path / "neighbors.tsv"
    table.save(path)
    key = cache_key(net.digest(), 0.85, 1e-4, 4)
    again = NeighborTable.load(path, key)
    assert again is not None and again.neighbors == table.neighbors
    assert (again.beta, again.epsilon, again.K) == (0.85, 1e-4, 4)
    assert NeighborTable.load(path, cache_key(net.digest(), 0.85, 1e-4, 5)) is None
    assert NeighborTable.load(path, cache_key("other", 0.85, 1e-4, 4)) is None
    line = path.read_text().splitlines()[1].split("\t")
    assert len(line) == 3
