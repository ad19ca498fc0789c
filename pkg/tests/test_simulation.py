"""Data generators, scoring, and the comparison-study drivers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnsd import gmrf, neighborhood
from nnsd.domain import pairwise_distances
from nnsd.inference import RunOptions
from nnsd.neighborhood import LatentPositions, NeighborhoodParams
from nnsd.simulation import (
    GeometrySpec,
    ScenarioSpec,
    default_scenarios,
    delaunay_adjacency,
    draw_disk_positions,
    gen_pseudo_data,
    gen_scenario,
    make_desk_geometry,
    make_standin_dataset,
    run_comparison,
    run_pseudo_study,
    score,
)

FAST_RUN = RunOptions(iterations=150, burn_in=50, seed=0)


def small_geometry(n=14, seed=0):
    rng = np.random.default_rng(seed)
    return make_desk_geometry(n, rng)


# -- pseudo-data ---------------------------------------------------------------


def test_gen_pseudo_zero_variance_returns_y(rng):
    y = np.array([0.4, -1.2, 3.0])
    np.testing.assert_array_equal(gen_pseudo_data(y, np.zeros(3), rng), y)


def test_gen_pseudo_rejects_negative_variance(rng):
    with pytest.raises(ValueError, match="nonnegative"):
        gen_pseudo_data(np.zeros(2), np.array([0.1, -0.1]), rng)


def test_gen_pseudo_moments():
    """10,000 replicates: mean within 3 SE of y, variance within 5% of var_y."""
    rng = np.random.default_rng(12)
    y = np.array([10.2, 9.7, 11.0, 10.5])
    var_y = np.array([0.01, 0.04, 0.0025, 0.09])
    reps = np.array([gen_pseudo_data(y, var_y, rng) for _ in range(10_000)])
    se_mean = np.sqrt(var_y / 10_000)
    np.testing.assert_array_less(np.abs(reps.mean(axis=0) - y), 3 * se_mean)
    np.testing.assert_allclose(reps.var(axis=0, ddof=1), var_y, rtol=0.05)


# -- scenario generation ----------------------------------------------------------


def test_draw_disk_positions_stay_inside(rng):
    Z = draw_disk_positions(500, 1.0, rng)
    assert np.all((Z**2).sum(axis=1) <= 1.0)


def test_gen_scenario_all_noise_off():
    """Empty graph and zeroed noise layers leave nothing: Y = eps = 0."""
    spec = ScenarioSpec(
        gamma_true=1.0, alpha_true=-60.0, beta_true=(0.0, 0.0),
        sigma2_mu_true=0.0, sigma2_y_true=0.0,
    )
    geom = small_geometry()
    rng = np.random.default_rng(0)
    adj, eps, mu, Y = gen_scenario(spec, geom, rng, allow_all_isolated=True)
    assert adj.n_edges == 0
    np.testing.assert_array_equal(eps, 0.0)
    np.testing.assert_array_equal(Y, 0.0)


def test_gamma1_edges_ignore_positions(rng):
    """At gamma=1 the edge probabilities shed d2, so re-randomizing Z under
    the same edge-level uniforms reproduces the identical graph."""
    geom = small_geometry(12)
    d1 = pairwise_distances(geom.centroids)
    params = NeighborhoodParams(-1.5, 1.0, np.zeros(0))
    Za = LatentPositions(draw_disk_positions(12, 1.0, rng))
    Zb = LatentPositions(draw_disk_positions(12, 1.0, rng))
    Pa = neighborhood.edge_prob_matrix(params, Za, d1)
    Pb = neighborhood.edge_prob_matrix(params, Zb, d1)
    np.testing.assert_array_equal(Pa, Pb)
    Ba = neighborhood.sample_adjacency(Pa, np.random.default_rng(77))
    Bb = neighborhood.sample_adjacency(Pb, np.random.default_rng(77))
    np.testing.assert_array_equal(Ba.B, Bb.B)


def test_gen_scenario_eps_constraint():
    spec = ScenarioSpec(gamma_true=0.5)
    geom = small_geometry(20, seed=3)
    adj, eps, _, _ = gen_scenario(spec, geom, np.random.default_rng(4))
    for lab in np.unique(adj.component_labels):
        assert abs(eps[adj.component_labels == lab].sum()) <= 1e-10


def test_gen_scenario_deterministic():
    spec = ScenarioSpec(gamma_true=0.5)
    geom = small_geometry(16, seed=1)
    a = gen_scenario(spec, geom, np.random.default_rng(9))
    b = gen_scenario(spec, geom, np.random.default_rng(9))
    np.testing.assert_array_equal(a[0].B, b[0].B)
    np.testing.assert_array_equal(a[3], b[3])


def test_gen_scenario_beta_shape_mismatch():
    spec = ScenarioSpec(gamma_true=0.5, beta_true=(1.0, 2.0, 3.0))
    with pytest.raises(ValueError, match="beta_true"):
        gen_scenario(spec, small_geometry(), np.random.default_rng(0))


def test_variance_decomposition_on_fixed_graph():
    """Conditional on B, Var(Y_i) = s2e * pinv(L)_ii + s2mu + s2y.

    Monte Carlo over the downstream draws of one scenario replicate.
    """
    B = np.zeros((5, 5), dtype=np.uint8)
    for i, j in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]:
        B[i, j] = B[j, i] = 1
    adj = gmrf.build_adjacency(B)
    rng = np.random.default_rng(15)
    s2e, s2m, s2y = 1.0, 0.12, 0.12
    reps = 10_000
    ys = np.empty((reps, 5))
    for r in range(reps):
        eps = gmrf.sample_epsilon_prior(adj, s2e, rng).epsilon
        mu = eps + np.sqrt(s2m) * rng.standard_normal(5)
        ys[r] = mu + np.sqrt(s2y) * rng.standard_normal(5)
    want = s2e * np.diag(np.linalg.pinv(adj.laplacian.astype(float))) + s2m + s2y
    got = ys.var(axis=0, ddof=1)
    np.testing.assert_allclose(got, want, rtol=0.06)


def test_scenario_spec_validation():
    with pytest.raises(ValueError, match="gamma_true"):
        ScenarioSpec(gamma_true=1.2)
    with pytest.raises(ValueError, match="positive"):
        ScenarioSpec(gamma_true=0.5, sigma2_eps_true=0.0)
    with pytest.raises(ValueError, match="negative"):
        ScenarioSpec(gamma_true=0.5, sigma2_y_true=-0.1)
    with pytest.raises(ValueError, match="replicates"):
        ScenarioSpec(gamma_true=0.5, replicates=0)
    assert ScenarioSpec(gamma_true=0.5).name == "gamma=0.5"


def test_default_scenarios_cover_gamma_grid():
    specs = default_scenarios(replicates=4, seed=2)
    assert [s.gamma_true for s in specs] == [1.0, 0.5, 0.0]
    assert all(s.alpha_true == -2.5 for s in specs)
    assert all(s.beta_true == (-6.20, 2.5) for s in specs)
    assert all(s.replicates == 4 for s in specs)


# -- scoring ------------------------------------------------------------------


def test_score_trivials():
    assert score([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)
    assert score([0.0, 0.0], [1.0, -1.0]) == (1.0, 1.0)
    with pytest.raises(ValueError, match="mismatch"):
        score([0.0, 0.0], [1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_mse_dominates_mae_squared(errors):
    mse, mae = score(np.zeros(len(errors)), np.array(errors))
    assert mse >= mae**2 - 1e-9 * max(1.0, mse)


# -- geometry helpers ----------------------------------------------------------


def test_delaunay_adjacency_properties(rng):
    pts = rng.standard_normal((25, 2))
    B = delaunay_adjacency(pts)
    np.testing.assert_array_equal(B, B.T)
    assert np.all(np.diag(B) == 0)
    assert set(np.unique(B)) <= {0, 1}
    _, c = gmrf.connected_components(B)
    assert c == 1  # triangulations of generic points are connected


def test_delaunay_collinear_fallback():
    pts = np.column_stack([np.arange(5.0), np.zeros(5)])
    B = delaunay_adjacency(pts)
    np.testing.assert_array_equal(np.diag(B, 1), 1)  # chain
    assert B.sum() == 2 * 4


def test_make_desk_geometry_shapes():
    geom = make_desk_geometry(10, np.random.default_rng(0))
    assert geom.n == 10
    assert geom.X.shape == (10, 2)
    np.testing.assert_array_equal(geom.X[:, 0], 1.0)
    assert len(set(geom.unit_ids)) == 10


def test_make_standin_dataset_shape_and_determinism():
    a = make_standin_dataset(seed=4, n=30)
    b = make_standin_dataset(seed=4, n=30)
    assert a.n == 30
    assert a.X.shape[1] == 2
    assert a.geo_adjacency is not None
    assert np.all(a.var_y > 0)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    c = make_standin_dataset(seed=5, n=30)
    assert not np.array_equal(a.y, c.y)


# -- study drivers ----------------------------------------------------------------


def test_run_comparison_single_cell():
    spec = ScenarioSpec(gamma_true=1.0, name="s1")
    table = run_comparison(
        [spec], ["ICAR"], replicates=1, options=FAST_RUN, geometry=small_geometry()
    )
    assert len(table.cells) == 1
    cell = table.cell("s1", "ICAR")
    assert cell.n_replicates == 1
    assert cell.n_failed == 0
    assert cell.mse_median >= 0
    assert len(table.rows()) == 1


def test_run_comparison_deterministic_and_prefix_stable():
    """Same master seed reproduces the table; cell seeds do not depend on
    how many replicates follow them."""
    spec = ScenarioSpec(gamma_true=0.5, name="mid")
    geom = small_geometry()
    t1 = run_comparison([spec], ["NN"], replicates=2, options=FAST_RUN, geometry=geom)
    t2 = run_comparison([spec], ["NN"], replicates=2, options=FAST_RUN, geometry=geom)
    assert t1.replicate_scores == t2.replicate_scores
    t3 = run_comparison([spec], ["NN"], replicates=3, options=FAST_RUN, geometry=geom)
    assert t3.replicate_scores[:2] == t1.replicate_scores


def test_run_comparison_validates_variants():
    with pytest.raises(ValueError):
        run_comparison([ScenarioSpec(gamma_true=1.0)], ["BOGUS"], replicates=1)
    with pytest.raises(ValueError, match="at least one"):
        run_comparison([], ["NN"], replicates=1)


def test_run_pseudo_study_scores_against_jittered_response():
    domain = make_standin_dataset(seed=6, n=14)
    table = run_pseudo_study(domain, ["ICAR"], replicates=2, options=FAST_RUN)
    assert len(table.cells) == 1
    cell = table.cells[0]
    assert cell.scenario == "pseudo"
    assert cell.n_replicates == 2
    assert np.isfinite(cell.mae_median)


def test_run_pseudo_study_deterministic():
    domain = make_standin_dataset(seed=6, n=14)
    t1 = run_pseudo_study(domain, ["NN"], replicates=1, options=FAST_RUN)
    t2 = run_pseudo_study(domain, ["NN"], replicates=1, options=FAST_RUN)
    assert t1.replicate_scores == t2.replicate_scores
