"""Graph-Laplacian numerics: pseudo-determinants, flip updates, constrained draws."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnsd import gmrf


def eigen_pseudo_logdet(L):
    """Independent oracle: sum of logs of the strictly positive spectrum."""
    evals = np.linalg.eigvalsh(L)
    pos = evals[evals > 1e-9 * max(1.0, evals.max(initial=1.0))]
    return float(np.log(pos).sum())


def random_graph(n, p, rng):
    B = (rng.random((n, n)) < p).astype(np.uint8)
    B = np.triu(B, 1)
    return gmrf.build_adjacency(B + B.T)


def path_graph(n):
    B = np.zeros((n, n), dtype=np.uint8)
    for i in range(n - 1):
        B[i, i + 1] = B[i + 1, i] = 1
    return gmrf.build_adjacency(B)


@pytest.fixture
def p3_adjacency():
    return path_graph(3)


# -- adjacency construction ---------------------------------------------------


def test_build_adjacency_path3(p3_adjacency):
    adj = p3_adjacency
    np.testing.assert_array_equal(adj.degrees, [1, 2, 1])
    assert adj.n_components == 1
    np.testing.assert_array_equal(
        adj.laplacian, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]]
    )


def test_build_adjacency_empty():
    adj = gmrf.build_adjacency(np.zeros((4, 4), dtype=np.uint8))
    assert adj.n_components == 4
    assert adj.pseudo_logdet == 0.0
    assert adj.n_edges == 0


def test_build_adjacency_two_disjoint_edges():
    B = np.zeros((4, 4), dtype=np.uint8)
    B[0, 1] = B[1, 0] = B[2, 3] = B[3, 2] = 1
    adj = gmrf.build_adjacency(B)
    assert adj.n_components == 2
    # each K2 has spectrum {0, 2}
    assert adj.pseudo_logdet == pytest.approx(np.log(2) + np.log(2), abs=1e-10)


def test_build_adjacency_rejects_bad_input():
    with pytest.raises(ValueError):
        gmrf.build_adjacency(np.array([[0, 1], [0, 0]]))  # asymmetric
    with pytest.raises(ValueError):
        gmrf.build_adjacency(np.array([[0, 2], [2, 0]]))  # non-binary
    with pytest.raises(ValueError):
        gmrf.build_adjacency(np.array([[1, 0], [0, 0]]))  # diagonal


def test_laplacian_invariants(rng):
    adj = random_graph(15, 0.2, rng)
    np.testing.assert_allclose(adj.laplacian.sum(axis=1), 0.0, atol=1e-12)
    evals = np.linalg.eigvalsh(adj.laplacian)
    assert evals.min() > -1e-10
    near_zero = np.sum(np.abs(evals) < 1e-8)
    assert near_zero == adj.n_components


def test_connected_components_labels():
    B = np.zeros((5, 5), dtype=np.uint8)
    B[0, 1] = B[1, 0] = 1
    B[3, 4] = B[4, 3] = 1
    labels, c = gmrf.connected_components(B)
    assert c == 3
    assert labels[0] == labels[1]
    assert labels[3] == labels[4]
    assert len({labels[0], labels[2], labels[3]}) == 3


# -- pseudo-determinants -------------------------------------------------------


@pytest.mark.parametrize(
    "edges, n, expected",
    [
        ([(0, 1), (1, 2)], 3, np.log(3)),  # P3 spectrum {0,1,3}
        ([(0, 1), (1, 2), (0, 2)], 3, np.log(9)),  # triangle {0,3,3}
        ([(0, 1), (1, 2), (2, 3), (3, 0)], 4, np.log(16)),  # C4 {0,2,2,4}
        ([], 3, 0.0),
    ],
)
def test_pseudo_logdet_known_spectra(edges, n, expected):
    B = np.zeros((n, n), dtype=np.uint8)
    for i, j in edges:
        B[i, j] = B[j, i] = 1
    adj = gmrf.build_adjacency(B)
    assert adj.pseudo_logdet == pytest.approx(expected, abs=1e-10)


def test_pseudo_logdet_matches_eigen_oracle(rng):
    for p in (0.08, 0.2, 0.5):
        adj = random_graph(20, p, rng)
        assert adj.pseudo_logdet == pytest.approx(
            eigen_pseudo_logdet(adj.laplacian), abs=1e-8
        )


# -- rank-one flip updates -----------------------------------------------------


def test_flip_logdet_ratio_against_eigen(rng):
    adj = random_graph(18, 0.15, rng)
    checked_partition_change = 0
    for _ in range(200):
        i, j = rng.choice(18, size=2, replace=False)
        i, j = int(min(i, j)), int(max(i, j))
        delta, changed = gmrf.flip_logdet_ratio(adj, i, j)
        flipped = gmrf.with_flip(adj, i, j)
        assert changed == (flipped.n_components != adj.n_components)
        checked_partition_change += changed
        want = eigen_pseudo_logdet(flipped.laplacian) - eigen_pseudo_logdet(adj.laplacian)
        assert delta == pytest.approx(want, abs=1e-8)
        if rng.random() < 0.5:
            adj = flipped
    assert checked_partition_change > 0  # merges/splits must actually occur


def test_with_flip_cache_consistency(rng):
    adj = random_graph(12, 0.25, rng)
    flipped = gmrf.with_flip(adj, 2, 7)
    rebuilt = gmrf.build_adjacency(flipped.B)
    np.testing.assert_array_equal(flipped.degrees, rebuilt.degrees)
    assert flipped.n_components == rebuilt.n_components
    assert flipped.pseudo_logdet == pytest.approx(rebuilt.pseudo_logdet, abs=1e-8)
    assert flipped.B[2, 7] != adj.B[2, 7]


def test_flip_is_involution(rng):
    adj = random_graph(10, 0.3, rng)
    twice = gmrf.with_flip(gmrf.with_flip(adj, 1, 4), 1, 4)
    np.testing.assert_array_equal(twice.B, adj.B)
    assert twice.pseudo_logdet == pytest.approx(adj.pseudo_logdet, abs=1e-8)


# -- densities ------------------------------------------------------------------


def test_icar_quadform_is_edge_sum(rng):
    adj = random_graph(9, 0.35, rng)
    eps = rng.standard_normal(9)
    want = sum(
        (eps[i] - eps[j]) ** 2
        for i in range(9)
        for j in range(i + 1, 9)
        if adj.B[i, j]
    )
    assert gmrf.icar_quadform(eps, adj) == pytest.approx(want, abs=1e-10)


def test_icar_logdensity_path3(p3_adjacency):
    eps = gmrf.make_random_effects(np.array([1.0, 0.0, -1.0]), p3_adjacency.component_labels)
    got = gmrf.icar_logdensity(eps, p3_adjacency, 1.0)
    want = -np.log(2 * np.pi) + 0.5 * np.log(3) - 1.0
    assert got == pytest.approx(want, abs=1e-12)


def test_icar_logdensity_scales_with_variance(p3_adjacency):
    eps = gmrf.make_random_effects(np.array([1.0, 0.0, -1.0]), p3_adjacency.component_labels)
    s2 = 0.3
    got = gmrf.icar_logdensity(eps, p3_adjacency, s2)
    want = -np.log(2 * np.pi * s2) + 0.5 * np.log(3) - 1.0 / s2
    assert got == pytest.approx(want, abs=1e-12)


def test_icar_logdensity_rejects_constraint_violation(p3_adjacency):
    bad = gmrf.RandomEffects(
        epsilon=np.array([1.0, 0.5, -1.0]), component_sums=np.array([0.5])
    )
    with pytest.raises(ValueError):
        gmrf.icar_logdensity(bad, p3_adjacency, 1.0)


# -- constraint projection -------------------------------------------------------


@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_project_sum_to_zero_property(n, seed):
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n) * 3
    labels = rng.integers(0, 3, size=n)
    out = gmrf.project_sum_to_zero(eps, labels)
    for lab in np.unique(labels):
        assert abs(out[labels == lab].sum()) < 1e-10
    np.testing.assert_allclose(gmrf.project_sum_to_zero(out, labels), out, atol=1e-12)


def test_project_keeps_isolated_units_zero():
    labels = np.array([0, 1, 1, 2])
    out = gmrf.project_sum_to_zero(np.array([0.7, 1.0, 2.0, -0.4]), labels)
    assert out[0] == 0.0
    assert out[3] == 0.0
    assert out[1] == pytest.approx(-0.5)
    assert out[2] == pytest.approx(0.5)


# -- constrained sampling ----------------------------------------------------------


def test_sample_epsilon_prior_respects_constraints(rng):
    B = np.zeros((7, 7), dtype=np.uint8)
    for i, j in [(0, 1), (1, 2), (2, 0), (4, 5)]:
        B[i, j] = B[j, i] = 1
    adj = gmrf.build_adjacency(B)  # triangle + edge + 2 isolated units
    for _ in range(25):
        eff = gmrf.sample_epsilon_prior(adj, 0.8, rng)
        for lab in np.unique(adj.component_labels):
            assert abs(eff.epsilon[adj.component_labels == lab].sum()) < 1e-10
        assert eff.epsilon[3] == 0.0
        assert eff.epsilon[6] == 0.0


def test_sample_epsilon_prior_covariance(p3_adjacency):
    """Empirical covariance of prior draws approaches sigma2 * pinv(L)."""
    rng = np.random.default_rng(7)
    draws = np.array(
        [gmrf.sample_epsilon_prior(p3_adjacency, 1.0, rng).epsilon for _ in range(20_000)]
    )
    want = np.linalg.pinv(p3_adjacency.laplacian.astype(float))
    got = draws.T @ draws / len(draws)
    np.testing.assert_allclose(got, want, atol=0.03)
    assert abs(draws.mean()) < 0.02


def test_sample_epsilon_conditional_moments():
    """Kriged full-conditional draws match the subspace closed form on P4."""
    adj = path_graph(4)
    rng = np.random.default_rng(5)
    mu = np.array([0.8, -0.2, 0.4, 1.0])
    xb = np.array([0.1, 0.1, 0.1, 0.1])
    s2e, s2m = 0.7, 0.4
    n = 4
    Q = adj.laplacian / s2e + np.eye(n) / s2m
    r = (mu - xb) / s2m
    # orthonormal basis of {sum eps = 0}
    A = np.linalg.svd(np.eye(n) - np.ones((n, n)) / n)[0][:, : n - 1]
    cov_u = np.linalg.inv(A.T @ Q @ A)
    mean = A @ cov_u @ (A.T @ r)
    cov = A @ cov_u @ A.T
    draws = np.array(
        [
            gmrf.sample_epsilon_conditional(mu, xb, adj, s2e, s2m, rng).epsilon
            for _ in range(20_000)
        ]
    )
    assert np.all(np.abs(draws.sum(axis=1)) < 1e-10)
    se = np.sqrt(np.diag(cov) / len(draws))
    np.testing.assert_array_less(np.abs(draws.mean(axis=0) - mean), 4 * se + 1e-12)
    emp_cov = np.cov(draws.T)
    np.testing.assert_allclose(emp_cov, cov, atol=0.02)
