"""Convergence statistics, summaries, and latent-position alignment."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from nnsd.diagnostics import (
    batch_means_cov,
    diagnostics_report,
    effective_sample_size,
    lugsail_batch_cov,
    mpsrf,
    posterior_summary,
    procrustes_align,
    psrf,
)
from nnsd.inference import Hyperparams, RunOptions, run_chains
from nnsd.simulation import make_standin_dataset


def test_batch_means_hand_oracle():
    # n=6, b=2: batch means (1.5, 3.5, 5.5), center 3.5 -> (2/2)*8 = 8
    x = np.arange(1.0, 7.0)
    got = batch_means_cov(x, batch_size=2)
    assert got.shape == (1, 1)
    assert got[0, 0] == pytest.approx(8.0, abs=1e-12)


def test_lugsail_hand_oracle():
    # 2*BM(2) - BM(1) = 2*8 - 3.5
    x = np.arange(1.0, 7.0)
    got = lugsail_batch_cov(x, batch_size=2)
    assert got[0, 0] == pytest.approx(12.5, abs=1e-12)


def test_batch_means_validates():
    with pytest.raises(ValueError, match="at least 2 batches"):
        batch_means_cov(np.arange(5.0), batch_size=5)
    with pytest.raises(ValueError, match="batch_size"):
        batch_means_cov(np.arange(5.0), batch_size=0)
    with pytest.raises(ValueError, match="too short"):
        lugsail_batch_cov(np.arange(6.0), batch_size=4)


def test_mpsrf_iid_chains_near_one():
    rng = np.random.default_rng(0)
    chains = [rng.standard_normal((5_000, 2)) for _ in range(2)]
    assert mpsrf(chains) < 1.05


def test_psrf_disjoint_chains_flags():
    rng = np.random.default_rng(1)
    a = 0.1 * rng.standard_normal(2_000)
    b = 5.0 + 0.1 * rng.standard_normal(2_000)
    assert psrf([a, b]) > 1.1


def test_mpsrf_affine_invariance():
    rng = np.random.default_rng(2)
    chains = [rng.standard_normal((1_000, 3)) + i for i in range(2)]
    A = np.array([[2.0, 0.3, 0.0], [-0.5, 1.0, 0.1], [0.0, 0.2, 0.7]])
    shift = np.array([5.0, -3.0, 0.25])
    mapped = [c @ A.T + shift for c in chains]
    r0, r1 = mpsrf(chains), mpsrf(mapped)
    assert abs(r1 - r0) <= 1e-8 * abs(r0)


def test_mpsrf_determinant_dilution():
    """One displaced coordinate among p dilutes in the determinant root, so
    the scalar psrf of that coordinate is the sharper alarm."""
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3_000, 2))
    b = rng.standard_normal((3_000, 2))
    b[:, 0] += 2.5
    joint = mpsrf([a, b])
    marginal = psrf([a[:, 0], b[:, 0]])
    assert marginal > joint > 1.0


def test_mpsrf_rejects_constant_coordinate():
    rng = np.random.default_rng(4)
    chains = [np.column_stack([rng.standard_normal(500), np.ones(500)]) for _ in range(2)]
    with pytest.raises(ValueError, match="zero variance"):
        mpsrf(chains)


def test_mpsrf_needs_two_chains():
    with pytest.raises(ValueError, match="at least 2 chains"):
        mpsrf([np.random.default_rng(0).standard_normal((100, 2))])


def test_ess_iid_near_draw_count():
    rng = np.random.default_rng(5)
    n = 4_000
    chains = [rng.standard_normal((n, 1)) for _ in range(2)]
    ess = effective_sample_size(chains)[0]
    assert 0.55 * 2 * n < ess < 1.6 * 2 * n


def test_ess_constant_coordinate_nan():
    rng = np.random.default_rng(6)
    chains = [np.column_stack([rng.standard_normal(400), np.full(400, 2.0)]) for _ in range(2)]
    ess = effective_sample_size(chains)
    assert np.isfinite(ess[0])
    assert np.isnan(ess[1])


def test_ess_autocorrelated_chain_shrinks():
    rng = np.random.default_rng(7)
    n = 4_000
    chains = []
    for _ in range(2):
        z = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = z[0]
        for t in range(1, n):  # AR(1), rho=0.9 -> ESS ~ n/19
            x[t] = 0.9 * x[t - 1] + np.sqrt(1 - 0.81) * z[t]
        chains.append(x.reshape(-1, 1))
    ess = effective_sample_size(chains)[0]
    assert ess < 0.25 * 2 * n


# -- procrustes ----------------------------------------------------------------


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_procrustes_recovers_rotation_and_translation():
    rng = np.random.default_rng(8)
    ref = rng.standard_normal((12, 2)) * 0.4
    ref -= ref.mean(axis=0)
    moved = ref @ rotation(0.7).T + np.array([3.0, -1.0])
    aligned = procrustes_align(ref, moved[None, :, :])[0]
    np.testing.assert_allclose(aligned, ref, atol=1e-12)


def test_procrustes_recovers_reflection():
    rng = np.random.default_rng(9)
    ref = rng.standard_normal((9, 2)) * 0.3
    ref -= ref.mean(axis=0)
    flip = np.array([[1.0, 0.0], [0.0, -1.0]])
    aligned = procrustes_align(ref, (ref @ flip)[None, :, :])[0]
    np.testing.assert_allclose(aligned, ref, atol=1e-12)


def test_procrustes_preserves_within_draw_distances():
    rng = np.random.default_rng(10)
    ref = rng.standard_normal((10, 2))
    draws = rng.standard_normal((20, 10, 2)) * 0.5
    aligned = procrustes_align(ref, draws)
    for k in range(20):
        np.testing.assert_allclose(pdist(aligned[k]), pdist(draws[k]), atol=1e-10)


def test_procrustes_degenerate_draw_only_centered():
    ref = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.5]])
    draw = np.full((3, 2), 7.0)
    aligned = procrustes_align(ref, draw[None, :, :])[0]
    np.testing.assert_allclose(aligned, 0.0, atol=1e-12)


def test_procrustes_validates_shapes():
    with pytest.raises(ValueError, match="N x 2"):
        procrustes_align(np.zeros((4, 3)), np.zeros((1, 4, 3)))


# -- chain-level summaries -------------------------------------------------------


@pytest.fixture(scope="module")
def two_chains():
    domain = make_standin_dataset(seed=1, n=16)
    opts = RunOptions(iterations=400, burn_in=100, seed=5)
    return run_chains(domain, Hyperparams(variant="NNSD"), opts, n_chains=2)


def test_posterior_summary_quantiles_match_numpy(two_chains):
    summary = posterior_summary(two_chains)
    rows = {r.name: r for r in summary["parameters"]}
    alpha = np.concatenate([c.alpha for c in two_chains])
    row = rows["alpha"]
    assert row.mean == pytest.approx(alpha.mean(), abs=1e-12)
    assert row.median == pytest.approx(np.quantile(alpha, 0.5), abs=1e-12)
    assert row.q025 == pytest.approx(np.quantile(alpha, 0.025), abs=1e-12)
    assert row.q975 == pytest.approx(np.quantile(alpha, 0.975), abs=1e-12)
    assert row.sd == pytest.approx(alpha.std(ddof=1), abs=1e-12)
    assert np.isfinite(row.psrf)


def test_posterior_summary_fitted_and_edges(two_chains):
    summary = posterior_summary(two_chains)
    n = two_chains[0].n_units
    assert len(summary["fitted"]) == n
    mu0 = np.concatenate([c.mu[:, 0] for c in two_chains])
    assert summary["fitted"][0].median == pytest.approx(np.quantile(mu0, 0.5), abs=1e-12)
    ef = summary["edge_freq"]
    assert ef.shape == (n, n)
    assert np.all((ef >= 0) & (ef <= 1))
    np.testing.assert_allclose(ef, ef.T, atol=1e-15)
    assert np.all(np.diag(ef) == 0)


def test_posterior_summary_single_chain_nan_psrf(two_chains):
    summary = posterior_summary(two_chains[:1])
    rows = {r.name: r for r in summary["parameters"]}
    assert np.isnan(rows["alpha"].psrf)


def test_diagnostics_report_fields(two_chains):
    report = diagnostics_report(two_chains, threshold=1.5)
    assert report.n_chains == 2
    assert report.n_draws == two_chains[0].n_kept
    assert set(report.psrf) == set(two_chains[0].scalar_names())
    assert report.passed == (report.mpsrf < 1.5)
    with pytest.raises(ValueError, match="at least 2 chains"):
        diagnostics_report(two_chains[:1])


def test_diagnostics_report_drops_pinned_gamma():
    domain = make_standin_dataset(seed=2, n=12)
    opts = RunOptions(iterations=200, burn_in=50, seed=3)
    chains = run_chains(domain, Hyperparams(variant="NN"), opts, n_chains=2)
    report = diagnostics_report(chains)
    assert np.isnan(report.psrf["gamma"])  # pinned at 1, constant trace
    assert np.isfinite(report.mpsrf)
