import numpy as np
import pytest
import scipy.sparse as sp

from blocktree.approx import GeneratorSpec, generate_model
from blocktree.blocktree import construct_block_tree, heuristic_root_search
from blocktree.gaussian import (BlockCovariance, BlockTreeFactor, GaussianModel, NumericalError,
                                Observation, covariance_form_estimate, exact_estimate,
                                format_triplets, information_form, noise_cross_covariance,
                                orthogonality_residual, parse_triplets, permuted_block_covariance,
                                reconstruction_residual, state_space)
from blocktree.graph import grid_graph, path_graph, random_connected_graph


def ar1_information(n, rho):
    """Tridiagonal precision of a unit-variance AR(1) chain."""
    d = np.full(n, 1 + rho * rho)
    d[0] = d[-1] = 1.0
    J = sp.diags([d, np.full(n - 1, -rho), np.full(n - 1, -rho)], [0, 1, -1]) / (1 - rho * rho)
    return J.tocsr()


def random_model(g, rng, rho=0.9):
    m, _, _ = generate_model(GeneratorSpec(g, int(rng.integers(2**31)), target_rho=rho))
    return m


def test_identity_blocks():
    g = grid_graph(3)
    m = GaussianModel(sp.identity(9, format="csr"), g)
    bt = construct_block_tree(g, [0])
    bc = permuted_block_covariance(m, bt)
    for (i, j), blk in bc.blocks.items():
        expect = np.eye(len(bt.clusters[i])) if i == j else np.zeros_like(blk)
        np.testing.assert_array_equal(blk, expect)


def test_ar1_blocks_closed_form():
    n, rho = 8, 0.6
    m = GaussianModel(ar1_information(n, rho))
    bt = construct_block_tree(path_graph(n), [0])
    bc = permuted_block_covariance(m, bt)
    for i in range(n):
        for j in range(n):
            a, b = bt.clusters[i][0], bt.clusters[j][0]
            assert bc[i, j][0, 0] == pytest.approx(rho ** abs(a - b), abs=1e-12)


def test_ar1_state_space():
    n, rho = 6, -0.4
    m = GaussianModel(ar1_information(n, rho))
    bt = construct_block_tree(path_graph(n), [0])
    ss = state_space(permuted_block_covariance(m, bt))
    for k in ss.A:
        assert ss.A[k][0, 0] == pytest.approx(rho, abs=1e-12)
        assert ss.Qu[k][0, 0] == pytest.approx(1 - rho * rho, abs=1e-12)
        # stationary chain is time-reversible
        assert ss.F[k][0, 0] == pytest.approx(rho, abs=1e-12)
        assert ss.Qw[k][0, 0] == pytest.approx(1 - rho * rho, abs=1e-12)


def test_independent_clusters_state_space():
    bt = construct_block_tree(path_graph(2), [0])
    sigma = np.diag([2.0, 3.0])
    ss = state_space(BlockCovariance(bt, sigma))
    assert ss.A[1][0, 0] == 0
    assert ss.Qu[1][0, 0] == 3.0


def test_grid4_blocks_match_dense_inverse():
    rng = np.random.default_rng(0)
    g = grid_graph(4)
    m = random_model(g, rng)
    bt = construct_block_tree(g, [5])
    S = np.linalg.inv(m.J.toarray())
    bc = permuted_block_covariance(m, bt)
    for (i, j), blk in bc.blocks.items():
        np.testing.assert_allclose(blk, S[np.ix_(bt.clusters[i], bt.clusters[j])], atol=1e-12)


def test_representation_residuals_and_whiteness():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = random_connected_graph(int(rng.integers(3, 20)), 0.2, rng)
        m = random_model(g, rng)
        root, _ = heuristic_root_search(g)
        bt = construct_block_tree(g, root)
        bc = permuted_block_covariance(m, bt)
        ss = state_space(bc)
        assert orthogonality_residual(bc, ss) < 1e-10
        assert reconstruction_residual(bc, ss) < 1e-10
        for k in ss.Qu:
            Q = ss.Qu[k]
            np.testing.assert_allclose(Q, Q.T, atol=1e-12)
            assert np.linalg.eigvalsh(Q).min() > -1e-10
            Qw = ss.Qw[k]
            assert np.linalg.eigvalsh((Qw + Qw.T) / 2).min() > -1e-10
        for k in ss.A:
            for j in ss.A:
                if j != k:
                    assert np.max(np.abs(noise_cross_covariance(bc, ss, k, j))) < 1e-10


def test_information_form_examples():
    g = grid_graph(2)
    m = GaussianModel(sp.identity(4, format="csr") * 2, g)
    V, b = information_form(m, Observation(np.arange(4.0), 0.0, 1.0))
    np.testing.assert_array_equal(V.toarray(), m.J.toarray())
    np.testing.assert_array_equal(b, 0)
    V, b = information_form(m, Observation(np.arange(4.0), 1.0, 4.0))
    np.testing.assert_allclose(V.toarray(), m.J.toarray() + np.eye(4) / 4)
    np.testing.assert_allclose(b, np.arange(4.0) / 4)


def test_exact_estimate_examples():
    m = GaussianModel(sp.identity(2, format="csr"))
    xhat, var = exact_estimate(m, Observation(np.array([2.0, 0.0]), 1.0, 1.0))
    np.testing.assert_allclose(xhat, [1.0, 0.0])
    np.testing.assert_allclose(var, [0.5, 0.5])
    g = grid_graph(3)
    m = random_model(g, np.random.default_rng(2))
    xhat, _ = exact_estimate(m, Observation(np.zeros(9), 1.0, 10.0), construct_block_tree(g, [0]))
    np.testing.assert_array_equal(xhat, 0)


def test_block_tree_path_matches_dense_on_grid7():
    rng = np.random.default_rng(3)
    g = grid_graph(7)
    m = random_model(g, rng, rho=0.99)
    obs = Observation(rng.normal(size=49), 1.0, 10.0)
    root, _ = heuristic_root_search(g)
    xa, va = exact_estimate(m, obs, construct_block_tree(g, root))
    xb, vb = exact_estimate(m, obs)
    np.testing.assert_allclose(xa, xb, rtol=1e-8, atol=1e-12 * np.abs(xb).max())
    np.testing.assert_allclose(va, vb, rtol=1e-8)


def test_three_estimators_agree():
    rng = np.random.default_rng(4)
    for _ in range(50):
        g = random_connected_graph(int(rng.integers(2, 61)), 0.05, rng)
        m = random_model(g, rng)
        obs = Observation(rng.normal(size=g.n), rng.uniform(0.5, 2, g.n), rng.uniform(0.5, 5, g.n))
        root, _ = heuristic_root_search(g)
        bt = construct_block_tree(g, root)
        x_bt, var = exact_estimate(m, obs, bt)
        V, b = information_form(m, obs)
        x_info = np.linalg.solve(V.toarray(), b)
        x_cov = covariance_form_estimate(m, obs)
        scale = np.linalg.norm(x_info)
        assert np.linalg.norm(x_bt - x_info) <= 1e-8 * scale
        assert np.linalg.norm(x_cov - x_info) <= 1e-8 * scale
        prior = np.diag(m.Sigma)
        assert np.all(var > 0) and np.all(var <= prior + 1e-12)


def test_factor_solves_matrix_rhs():
    rng = np.random.default_rng(5)
    g = grid_graph(4)
    m = random_model(g, rng)
    bt = construct_block_tree(g, [0])
    fac = BlockTreeFactor.from_matrix(m.J, bt)
    B = rng.normal(size=(16, 3))
    np.testing.assert_allclose(m.J @ fac.solve(B), B, atol=1e-10)


def test_invalid_models():
    with pytest.raises(ValueError):
        GaussianModel(sp.csr_matrix(np.array([[1.0, 0.2], [0.3, 1.0]])))
    bad = GaussianModel(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(NumericalError):
        bad.check_positive_definite()
    worse = GaussianModel(sp.csr_matrix(np.array([[1.0, 3.0], [3.0, 1.0]])))
    with pytest.raises(NumericalError):
        exact_estimate(worse, Observation(np.zeros(2), 1.0, 1.0))
    with pytest.raises(NumericalError):
        exact_estimate(worse, Observation(np.zeros(2), 1.0, 1.0), construct_block_tree(path_graph(2), [0]))
    g = grid_graph(3)
    m = GaussianModel(sp.identity(9, format="csr"), g)
    wrong = construct_block_tree(path_graph(9), [0])
    with pytest.raises(ValueError):
        exact_estimate(m, Observation(np.zeros(9), 1.0, 1.0), wrong)


def test_triplets_roundtrip():
    J = parse_triplets("0 0 2\n0 1 -0.5\n1 1 2\n")
    np.testing.assert_array_equal(J.toarray(), [[2, -0.5], [-0.5, 2]])
    np.testing.assert_array_equal(parse_triplets(format_triplets(J)).toarray(), J.toarray())
    assert parse_triplets("0 0 1", n=3).shape == (3, 3)
    with pytest.raises(ValueError):
        parse_triplets("0 1")


def test_observation_json():
    obs = Observation.from_json({"y": [1, 2, 3], "H": 1, "R": [1, 2, 3]})
    np.testing.assert_array_equal(obs.H, [1, 1, 1])
    back = Observation.from_json(obs.to_json())
    np.testing.assert_array_equal(back.R, [1, 2, 3])
