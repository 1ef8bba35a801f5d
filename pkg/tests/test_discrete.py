import itertools

import numpy as np
import pytest

from blocktree.blocktree import construct_block_tree
from blocktree.discrete import (Boundary, CostBudgetError, DiscreteModel, ModelError, Potential,
                                boundary_block_tree, brute_force_marginals, bt_marginals,
                                load_model, map_potentials, marginals_to_json, model_from_json, model_to_json,
                                random_pairwise_model)
from blocktree.graph import Graph, grid_graph, path_graph, random_connected_graph


def enumerate_marginals(m):
    """Independent oracle: loop over every joint state and accumulate weights."""
    n = m.n
    bset = set(m.boundary.nodes) if m.boundary else set()
    interior = [v for v in range(n) if v not in bset]
    weights = {}
    for x in itertools.product(*[range(k) for k in m.domain_sizes]):
        w_inner, w_bnd = 1.0, 1.0
        for p in m.potentials:
            val = p.table[tuple(x[v] for v in p.clique)]
            if bset and set(p.clique) <= bset:
                w_bnd *= val
            else:
                w_inner *= val
        for s in bset:
            w_bnd *= m.boundary.priors[s][x[s]]
        weights[x] = (w_inner, w_bnd)
    if bset:
        # interior conditional normalised per boundary configuration
        z = {}
        for x, (wi, _) in weights.items():
            key = tuple(x[s] for s in sorted(bset))
            z[key] = z.get(key, 0.0) + wi
        joint = {x: wi / z[tuple(x[s] for s in sorted(bset))] * wb
                 for x, (wi, wb) in weights.items()}
    else:
        joint = {x: wi for x, (wi, _) in weights.items()}
    total = sum(joint.values())
    out = [np.zeros(k) for k in m.domain_sizes]
    for x, w in joint.items():
        for v in range(n):
            out[v][x[v]] += w / total
    assert interior or bset
    return out


def max_dev(ms, ref):
    return max(float(np.max(np.abs(ms.nodes[v] - ref[v]))) for v in range(len(ref)))


def test_uniform_chain(fixtures_dir):
    m = load_model(str(fixtures_dir / "chain3_uniform.json"))
    ms = bt_marginals(m, construct_block_tree(m.graph, [0]))
    for v in range(3):
        np.testing.assert_allclose(ms.nodes[v], [0.5, 0.5])


def test_chain9_model_matches_oracles(fixtures_dir):
    m = load_model(str(fixtures_dir / "chain9_model.json"))
    bt = construct_block_tree(m.graph, m.graph.ids_for(["1"]))
    ms = bt_marginals(m, bt)
    assert max_dev(ms, enumerate_marginals(m)) < 1e-10
    assert ms.max_deviation(brute_force_marginals(m)) < 1e-10


def test_grid3_ising():
    rng = np.random.default_rng(1)
    g = grid_graph(3)
    pots = []
    for u, v in sorted(g.edges):
        j = rng.normal()
        pots.append(Potential((u, v), np.exp(j * np.array([[1, -1], [-1, 1]]))))
    for v in range(g.n):
        h = rng.normal()
        pots.append(Potential((v,), np.exp([h, -h])))
    m = DiscreteModel(g, (2,) * 9, pots)
    ms = bt_marginals(m, construct_block_tree(g, [4]))
    assert max_dev(ms, enumerate_marginals(m)) < 1e-10


def test_brute_force_examples():
    single = DiscreteModel(Graph.from_edges(1, []), (2,), [Potential((0,), [2.0, 2.0])])
    np.testing.assert_allclose(brute_force_marginals(single).nodes[0], [0.5, 0.5])
    pair = DiscreteModel(Graph.from_edges(2, [(0, 1)]), (2, 2),
                         [Potential((0, 1), [[1.0, 2.0], [3.0, 4.0]])])
    np.testing.assert_allclose(brute_force_marginals(pair).nodes[0], [0.3, 0.7])
    np.testing.assert_allclose(brute_force_marginals(pair).nodes[1], [0.4, 0.6])


def test_clique_order_is_normalised():
    # the same potential given with reversed clique order is transposed on load
    a = DiscreteModel(Graph.from_edges(2, [(0, 1)]), (2, 3),
                      [Potential((1, 0), np.arange(1, 7, dtype=float).reshape(3, 2))])
    assert a.potentials[0].clique == (0, 1)
    np.testing.assert_array_equal(a.potentials[0].table, np.arange(1, 7).reshape(3, 2).T)


def test_model_validation():
    g = path_graph(3)
    with pytest.raises(ModelError):
        DiscreteModel(g, (2, 2, 2), [Potential((0, 2), np.ones((2, 2)))])
    with pytest.raises(ModelError):
        DiscreteModel(g, (2, 2, 2), [Potential((0, 1), np.array([[1, 0], [1, 1]]))])
    with pytest.raises(ModelError):
        DiscreteModel(g, (2, 2, 2), [Potential((0, 1), np.ones(3))])


def _label_sets(g, bt, e):
    return tuple(frozenset(g.labels[v] for v in bt.clusters[k]) for k in e)


def test_chain9_cut_potential_assignment(fixtures_dir):
    m = load_model(str(fixtures_dir / "chain9_cut_model.json"))
    g = m.graph
    bt = construct_block_tree(g, g.ids_for(["1"]))
    fact = map_potentials(m, bt)
    C = lambda *labs: frozenset(labs)
    expected = {
        (C("1"), C("2", "3")): {"13", "12"},
        (C("2", "3"), C("4", "6")): {"36", "24", "46", "34"},
        (C("4", "6"), C("7", "8")): {"68", "47", "67"},
        (C("7", "8"), C("5")): {"58"},
        (C("7", "8"), C("9")): {"79", "89"},
    }
    got = {}
    for idx, e in fact.assignment.items():
        key = _label_sets(g, bt, e)
        lab = "".join(sorted(g.labels[v] for v in m.potentials[idx].clique))
        got.setdefault(key, set()).add(lab)
    assert got == expected


def test_root_only_potential_goes_to_first_child():
    g = path_graph(3)
    m = DiscreteModel(g, (2, 2, 2), [Potential((1,), [1.0, 3.0])])
    bt = construct_block_tree(g, [1])
    fact = map_potentials(m, bt)
    assert fact.assignment == {0: (bt.root, bt.children[bt.root][0])}


def _edge_product_log(m, bt, fact, x):
    total = 0.0
    for (p, k), F in fact.edge_factors.items():
        idx = tuple(x[v] for v in bt.clusters[p] + bt.clusters[k])
        total += np.log(F[idx]) + fact.log_scale[(p, k)]
    return total


def test_edge_factor_product_identity():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        g = random_connected_graph(n, 0.3, rng)
        m = random_pairwise_model(g, rng, k=2)
        root = [int(rng.integers(n))]
        bt = construct_block_tree(g, root)
        fact = map_potentials(m, bt)
        assert len(fact.assignment) == len(m.potentials)
        for x in itertools.product(range(2), repeat=n):
            direct = sum(np.log(p.table[tuple(x[v] for v in p.clique)]) for p in m.potentials)
            assert abs(_edge_product_log(m, bt, fact, x) - direct) < 1e-12


def test_random_models_match_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        g = random_connected_graph(n, float(rng.uniform(0, 0.5)), rng)
        m = random_pairwise_model(g, rng, k=int(rng.integers(2, 4)))
        bt = construct_block_tree(g, [int(rng.integers(n))])
        assert bt_marginals(m, bt).max_deviation(brute_force_marginals(m)) < 1e-10


def test_brute_force_agrees_with_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(20):
        g = random_connected_graph(int(rng.integers(1, 6)), 0.4, rng)
        m = random_pairwise_model(g, rng, k=2)
        assert max_dev(brute_force_marginals(m), enumerate_marginals(m)) < 1e-12


def test_root_invariance():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        g = random_connected_graph(n, 0.35, rng)
        m = random_pairwise_model(g, rng)
        ref = None
        for _ in range(4):
            size = int(rng.integers(1, min(3, n) + 1))
            root = rng.choice(n, size, replace=False).tolist()
            ms = bt_marginals(m, construct_block_tree(g, root))
            if ref is None:
                ref = ms
            assert ms.max_deviation(ref) < 1e-9


def test_normalisation_does_not_change_marginals():
    rng = np.random.default_rng(12)
    for _ in range(50):
        g = random_connected_graph(int(rng.integers(2, 9)), 0.3, rng)
        m = random_pairwise_model(g, rng)
        bt = construct_block_tree(g, [0])
        a = bt_marginals(m, bt, normalize=True)
        b = bt_marginals(m, bt, normalize=False)
        assert a.max_deviation(b) < 1e-9


def test_edge_joints_are_calibrated():
    rng = np.random.default_rng(13)
    for _ in range(30):
        g = random_connected_graph(int(rng.integers(3, 9)), 0.3, rng)
        m = random_pairwise_model(g, rng)
        bt = construct_block_tree(g, [0])
        ms = bt_marginals(m, bt)
        for (p, k), pair in ms.edges.items():
            np.testing.assert_allclose(pair.sum(axis=1), ms.clusters[p], atol=1e-12)
            np.testing.assert_allclose(pair.sum(axis=0), ms.clusters[k], atol=1e-12)


def test_single_cluster_model():
    g = Graph.from_edges(2, [(0, 1)])
    m = DiscreteModel(g, (2, 2), [Potential((0, 1), [[1.0, 2.0], [3.0, 4.0]])])
    # root {0,1} leaves one cluster
    bt = construct_block_tree(g, [0, 1])
    assert bt.n_clusters == 1
    np.testing.assert_allclose(bt_marginals(m, bt).nodes[0], [0.3, 0.7])


def test_budget_error(monkeypatch, fixtures_dir):
    m = load_model(str(fixtures_dir / "chain9_model.json"))
    bt = construct_block_tree(m.graph, [0])
    with pytest.raises(CostBudgetError) as exc:
        bt_marginals(m, bt, budget=16)
    assert exc.value.exponent == 5
    monkeypatch.setenv("BT_COST_BUDGET", "8")
    with pytest.raises(CostBudgetError):
        bt_marginals(m, bt)


def test_boundary_fixture(fixtures_dir):
    m = load_model(str(fixtures_dir / "boundary_grid3.json"))
    g = m.graph
    bt, fact = boundary_block_tree(m)
    names = [sorted(g.labels[v] for v in c) for c in bt.clusters]
    assert names == [["a", "b", "c", "d"], ["1", "3", "7", "9"], ["2", "4", "6", "8"], ["5"]]
    assert bt.edges == ((0, 1), (1, 2), (2, 3))
    ms = bt_marginals(m, bt, fact)
    ref = enumerate_marginals(m)
    assert max_dev(ms, ref) < 1e-10
    assert ms.max_deviation(brute_force_marginals(m)) < 1e-10
    # boundary nodes keep their priors: the interior is conditioned on them
    for s in m.boundary.nodes:
        np.testing.assert_allclose(ms.nodes[s], m.boundary.priors[s], atol=1e-12)


def _boundary_model(rng, uniform=False):
    # 2 boundary nodes (4, 5) feeding a 4-node interior cycle
    interior = [(0, 1), (1, 2), (2, 3), (0, 3)]
    arcs = ((4, 0), (5, 2))
    g = Graph.from_edges(6, interior + list(arcs))
    pots = []
    for e in interior + list(arcs):
        t = np.ones((2, 2)) if uniform else rng.uniform(0.2, 2.0, (2, 2))
        pots.append(Potential(e, t))
    priors = {s: (np.full(2, 0.5) if uniform else rng.dirichlet([1, 1])) for s in (4, 5)}
    return DiscreteModel(g, (2,) * 6, pots, Boundary((4, 5), arcs, priors))


def test_boundary_uniform():
    m = _boundary_model(np.random.default_rng(0), uniform=True)
    bt, fact = boundary_block_tree(m)
    ms = bt_marginals(m, bt, fact)
    for v in range(6):
        np.testing.assert_allclose(ms.nodes[v], [0.5, 0.5], atol=1e-12)


def test_boundary_random_vs_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(20):
        m = _boundary_model(rng)
        bt, fact = boundary_block_tree(m)
        assert set(bt.clusters[bt.root]) == {4, 5}
        assert max_dev(bt_marginals(m, bt, fact), enumerate_marginals(m)) < 1e-10


def test_json_roundtrip(fixtures_dir):
    m = load_model(str(fixtures_dir / "boundary_grid3.json"))
    m2 = model_from_json(model_to_json(m))
    bt, fact = boundary_block_tree(m2)
    # ids may be renumbered on reload, so compare by label
    a = marginals_to_json(bt_marginals(m2, bt, fact), m2.graph)
    b = marginals_to_json(brute_force_marginals(m), m.graph)
    assert a.keys() == b.keys()
    for lab in a:
        np.testing.assert_allclose(a[lab], b[lab], atol=1e-10)


def test_json_table_follows_listed_clique_order():
    doc = {"graph": [["1", "2"]], "domains": 2,
           "potentials": [{"clique": ["2", "1"], "table": [1, 2, 3, 4]}]}
    m = model_from_json(doc)
    # rows index node "2": P(x2 = 1) = (3 + 4) / 10
    ms = brute_force_marginals(m)
    np.testing.assert_allclose(ms.nodes[m.graph.ids_for(["2"])[0]], [0.3, 0.7])
    np.testing.assert_allclose(ms.nodes[m.graph.ids_for(["1"])[0]], [0.4, 0.6])
