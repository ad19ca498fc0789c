"""Scenario generation and model-comparison studies.

Two study designs share the scoring path:

* scenario studies — draw (Z, B, eps, mu, Y) from the generative model at
  known parameter values, fit each variant to Y, score fitted posterior
  medians against Y;
* pseudo-data studies — perturb an observed response by its design
  variances, refit, score against the perturbed response.

Every cell (scenario x replicate x variant) derives its own seed from the
master seed, so tables are reproducible regardless of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import gmrf, neighborhood
from .domain import SpatialDomain, make_domain, normalize_to_unit_disk, pairwise_distances
from .inference import VARIANTS, Hyperparams, RunOptions, run_chains
from .neighborhood import LatentPositions, NeighborhoodParams

DESK_N = 67  # synthetic stand-in for the paper-scale county map


@dataclass(frozen=True)
class GeometrySpec:
    """Fixed spatial frame for a study: ids, raw centroids, covariates."""

    unit_ids: tuple
    centroids: np.ndarray
    X: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        n = len(self.unit_ids)
        if self.centroids.shape != (n, 2):
            raise ValueError("centroids must be N x 2 matching unit_ids")
        if self.X.shape[0] != n:
            raise ValueError("covariate rows must match unit_ids")

    @property
    def n(self) -> int:
        return len(self.unit_ids)


@dataclass(frozen=True)
class ScenarioSpec:
    """True generative parameters for one simulation scenario."""

    gamma_true: float
    alpha_true: float = -2.5
    beta_true: tuple = (-6.20, 2.5)
    sigma2_eps_true: float = 1.0
    sigma2_mu_true: float = 0.12
    sigma2_y_true: float = 0.12
    replicates: int = 10
    seed: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma_true <= 1.0:
            raise ValueError(f"gamma_true must lie in [0, 1], got {self.gamma_true}")
        if self.sigma2_eps_true <= 0:
            raise ValueError("sigma2_eps_true must be positive")
        # zero observation/measurement noise is allowed (degenerate but
        # well-defined generation, used by limiting-case checks)
        if self.sigma2_mu_true < 0 or self.sigma2_y_true < 0:
            raise ValueError("variance components cannot be negative")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        if not self.name:
            object.__setattr__(self, "name", f"gamma={self.gamma_true:g}")


@dataclass(frozen=True)
class ReplicateScore:
    scenario: str
    variant: str
    replicate: int
    mse: float
    mae: float
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class CellScore:
    scenario: str
    variant: str
    n_replicates: int
    n_failed: int
    mse_median: float
    mae_median: float

    def __post_init__(self) -> None:
        for v in (self.mse_median, self.mae_median):
            if not math.isnan(v) and v < 0:
                raise ValueError("scores cannot be negative")


@dataclass(frozen=True)
class ScoreTable:
    """Median scores per (scenario, variant) plus the per-replicate detail."""

    cells: tuple
    replicate_scores: tuple

    def cell(self, scenario: str, variant: str) -> CellScore:
        for c in self.cells:
            if c.scenario == scenario and c.variant == variant:
                return c
        raise KeyError(f"no cell ({scenario!r}, {variant!r})")

    def rows(self) -> list:
        return [
            (c.scenario, c.variant, c.n_replicates, c.mse_median, c.mae_median)
            for c in self.cells
        ]


# -- generators -------------------------------------------------------------


def gen_pseudo_data(y, var_y, rng: np.random.Generator) -> np.ndarray:
    """One pseudo-dataset: independent Gaussian jitter of each estimate by
    its design variance."""
    y = np.asarray(y, dtype=float)
    var_y = np.asarray(var_y, dtype=float)
    if np.any(var_y < 0):
        raise ValueError("variances must be nonnegative")
    return y + np.sqrt(var_y) * rng.standard_normal(y.shape)


def draw_disk_positions(n: int, sigma2_z: float, rng: np.random.Generator) -> np.ndarray:
    """iid bivariate normal positions rejected onto the closed unit disk."""
    Z = np.empty((n, 2))
    sd = math.sqrt(sigma2_z)
    for i in range(n):
        while True:
            z = rng.standard_normal(2) * sd
            if z @ z <= 1.0:
                Z[i] = z
                break
    return Z


def gen_scenario(
    spec: ScenarioSpec,
    geometry: GeometrySpec,
    rng: np.random.Generator,
    allow_all_isolated: bool = False,
    max_attempts: int = 100,
):
    """Draw (B_true, eps_true, mu_true, Y) from the generative model.

    Z comes from the standard latent prior (unit-variance, disk-truncated,
    zero mean), B from the edge model at (alpha_true, gamma_true), eps from
    the per-component constrained intrinsic prior, then mu and Y add the
    Gaussian noise layers.  An all-isolated B is redrawn (fresh Z too) up
    to `max_attempts` times unless `allow_all_isolated`.
    """
    n = geometry.n
    centroids = normalize_to_unit_disk(geometry.centroids)
    d1 = pairwise_distances(centroids)
    X = geometry.X
    beta = np.asarray(spec.beta_true, dtype=float)
    if X.shape[1] != beta.size:
        raise ValueError(f"beta_true has {beta.size} entries but X has {X.shape[1]} columns")
    params = NeighborhoodParams(spec.alpha_true, spec.gamma_true, np.zeros(0), 1.0)

    adj = None
    for _ in range(max_attempts):
        Z = draw_disk_positions(n, 1.0, rng)
        P = neighborhood.edge_prob_matrix(params, LatentPositions(Z), d1)
        cand = neighborhood.sample_adjacency(P, rng)
        if cand.n_edges > 0 or allow_all_isolated:
            adj = cand
            break
    if adj is None:
        raise ValueError(
            f"generated an all-isolated adjacency {max_attempts} times in a row; "
            "raise alpha_true or pass allow_all_isolated=True"
        )
    eps = gmrf.sample_epsilon_prior(adj, spec.sigma2_eps_true, rng).epsilon
    mu = X @ beta + eps + math.sqrt(spec.sigma2_mu_true) * rng.standard_normal(n)
    Y = mu + math.sqrt(spec.sigma2_y_true) * rng.standard_normal(n)
    return adj, eps, mu, Y


def score(truth, fitted_medians) -> tuple:
    """(MSE, MAE) of fitted values against the target vector."""
    t = np.asarray(truth, dtype=float)
    f = np.asarray(fitted_medians, dtype=float)
    if t.shape != f.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {f.shape}")
    d = f - t
    return float(np.mean(d * d)), float(np.mean(np.abs(d)))


# -- desk-scale fixtures -----------------------------------------------------


def make_desk_geometry(n: int = DESK_N, rng: np.random.Generator | None = None) -> GeometrySpec:
    """Synthetic study frame: n centroids uniform in the unit disk and a
    log-scale covariate column centered at 7.0 (plus an intercept)."""
    if rng is None:
        rng = np.random.default_rng(0)
    theta = rng.random(n) * 2.0 * np.pi
    radius = np.sqrt(rng.random(n))
    centroids = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    x = rng.normal(7.0, 0.15, size=n)
    X = np.column_stack([np.ones(n), x])
    ids = tuple(f"unit{i + 1:03d}" for i in range(n))
    return GeometrySpec(unit_ids=ids, centroids=centroids, X=X)


def delaunay_adjacency(centroids) -> np.ndarray:
    """Adjacency from the Delaunay triangulation of the centroids, falling
    back to a nearest-neighbor chain for degenerate (e.g. collinear) sets."""
    pts = np.asarray(centroids, dtype=float)
    n = pts.shape[0]
    B = np.zeros((n, n), dtype=np.uint8)
    try:
        from scipy.spatial import Delaunay

        tri = Delaunay(pts)
    except Exception:
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        for a, b in zip(order[:-1], order[1:]):
            B[a, b] = B[b, a] = 1
        return B
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = simplex[a], simplex[b]
                B[i, j] = B[j, i] = 1
    return B


def _smooth_field(points: np.ndarray, length_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance draw of a squared-exponential random field at `points`."""
    d = pairwise_distances(points)
    cov = np.exp(-0.5 * (d / length_scale) ** 2)
    cov[np.diag_indices_from(cov)] += 1e-8
    return np.linalg.cholesky(cov) @ rng.standard_normal(len(points))


def make_standin_dataset(seed: int = 0, n: int = DESK_N) -> SpatialDomain:
    """Synthetic stand-in for a real survey file of log-scale income estimates.

    Mimics the texture of small-area income tables: a housing-cost covariate
    carries most of the level, the remainder splits into a geographically
    smooth field plus a demographic offset that ignores geography, and the
    design SEs sit at or a little above that remainder -- so the fitted
    surface has to pool, and which neighborhood it pools over is what
    separates the model variants.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(9090,))
    rng = np.random.default_rng(ss)
    theta = rng.random(n) * 2.0 * np.pi
    radius = np.sqrt(rng.random(n))
    centroids = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    c = normalize_to_unit_disk(centroids)
    # demographic clusters, scattered across the map rather than contiguous
    k = 4
    cluster = rng.integers(0, k, size=n)
    levels = 0.09 * (2.0 * np.arange(k) / (k - 1) - 1.0) + 0.01 * rng.standard_normal(k)
    housing = 6.90 + 0.16 * _smooth_field(c, 0.55, rng) + 0.05 * rng.standard_normal(n)
    g_geo = 0.05 * _smooth_field(c, 0.4, rng)
    g_dem = levels[cluster]
    signal = 4.30 + 0.90 * housing + g_geo + g_dem + 0.006 * rng.standard_normal(n)
    # survey-style precision spread, roughly a 3x range of SEs
    se = np.exp(rng.uniform(np.log(0.05), np.log(0.14), size=n))
    var_y = se**2
    y = signal + se * rng.standard_normal(n)
    X = np.column_stack([np.ones(n), housing])
    ids = tuple(f"unit{i + 1:03d}" for i in range(n))
    geo = delaunay_adjacency(c)
    return make_domain(ids, centroids, y, var_y, X=X, geo_adjacency=geo)


# -- study drivers -----------------------------------------------------------

#: desk-scale fitting defaults used by the comparison studies
DESK_RUN = RunOptions(iterations=4_000, burn_in=2_000, seed=0)


def default_scenarios(replicates: int = 10, seed: int = 0) -> list:
    """The three generative scenarios: gamma = 1, 0.5, 0 (scenarios 1-3)."""
    return [
        ScenarioSpec(gamma_true=1.0, replicates=replicates, seed=seed),
        ScenarioSpec(gamma_true=0.5, replicates=replicates, seed=seed),
        ScenarioSpec(gamma_true=0.0, replicates=replicates, seed=seed),
    ]


def _validate_variants(variants) -> list:
    out = [str(v).upper() for v in variants]
    for v in out:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    return out


def _fitted_medians(chains) -> np.ndarray:
    return np.median(np.concatenate([c.mu for c in chains], axis=0), axis=0)


def _sub_seed(master: int, key: tuple) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


def _assemble(rep_rows) -> ScoreTable:
    cells = []
    seen = []
    for r in rep_rows:
        k = (r.scenario, r.variant)
        if k not in seen:
            seen.append(k)
    for scenario, variant in seen:
        ok = [r for r in rep_rows if (r.scenario, r.variant) == (scenario, variant) and not r.failed]
        bad = [r for r in rep_rows if (r.scenario, r.variant) == (scenario, variant) and r.failed]
        mse_med = float(np.median([r.mse for r in ok])) if ok else float("nan")
        mae_med = float(np.median([r.mae for r in ok])) if ok else float("nan")
        cells.append(
            CellScore(
                scenario=scenario,
                variant=variant,
                n_replicates=len(ok) + len(bad),
                n_failed=len(bad),
                mse_median=mse_med,
                mae_median=mae_med,
            )
        )
    return ScoreTable(cells=tuple(cells), replicate_scores=tuple(rep_rows))


def run_comparison(
    scenarios,
    variants,
    replicates: int | None = None,
    options: RunOptions | None = None,
    geometry: GeometrySpec | None = None,
    n_chains: int = 2,
    n_jobs: int = 1,
) -> ScoreTable:
    """Generate-fit-score each scenario x replicate x variant cell.

    Seeding: the master seed is options.seed; replicate data use the
    spawn key (scenario_index, replicate, 0) and each variant's fit uses
    (scenario_index, replicate, 1 + variant_index), so any subset of cells
    reproduces the full table's values.  A failed fit marks its cell rather
    than aborting the table.
    """
    scenarios = list(scenarios)
    variants = _validate_variants(variants)
    if not scenarios or not variants:
        raise ValueError("need at least one scenario and one variant")
    if options is None:
        options = DESK_RUN
    master = options.seed
    if geometry is None:
        geometry = make_desk_geometry(
            rng=np.random.default_rng(np.random.SeedSequence(entropy=master, spawn_key=(1,)))
        )
    geo_B = delaunay_adjacency(normalize_to_unit_disk(geometry.centroids))

    rows = []
    for si, spec in enumerate(scenarios):
        reps = int(replicates) if replicates is not None else spec.replicates
        for ri in range(reps):
            data_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=master, spawn_key=(si, ri, 0))
            )
            _, _, _, Y = gen_scenario(spec, geometry, data_rng)
            dom = make_domain(
                geometry.unit_ids,
                geometry.centroids,
                Y,
                spec.sigma2_y_true,
                X=geometry.X,
                geo_adjacency=geo_B,
            )
            for vi, variant in enumerate(variants):
                opt_v = replace(options, seed=_sub_seed(master, (si, ri, 1 + vi)))
                try:
                    chains = run_chains(
                        dom, Hyperparams(variant=variant), opt_v, n_chains=n_chains, n_jobs=n_jobs
                    )
                    mse, mae = score(Y, _fitted_medians(chains))
                    rows.append(ReplicateScore(spec.name, variant, ri, mse, mae))
                except Exception as exc:  # cell-level isolation, table survives
                    rows.append(
                        ReplicateScore(
                            spec.name, variant, ri, float("nan"), float("nan"),
                            failed=True, error=f"{type(exc).__name__}: {exc}",
                        )
                    )
    return _assemble(rows)


def run_pseudo_study(
    domain: SpatialDomain,
    variants,
    replicates: int = 10,
    options: RunOptions | None = None,
    n_chains: int = 2,
    n_jobs: int = 1,
) -> ScoreTable:
    """Pseudo-data study on an observed dataset: each replicate jitters the
    response by its design variances, refits every variant, and scores
    fitted medians against the jittered response."""
    variants = _validate_variants(variants)
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if options is None:
        options = DESK_RUN
    master = options.seed
    rows = []
    for ri in range(replicates):
        data_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=master, spawn_key=(7001, ri, 0))
        )
        y_star = gen_pseudo_data(domain.y, domain.var_y, data_rng)
        dom_r = replace(domain, y=y_star)
        for vi, variant in enumerate(variants):
            opt_v = replace(options, seed=_sub_seed(master, (7001, ri, 1 + vi)))
            try:
                chains = run_chains(
                    dom_r, Hyperparams(variant=variant), opt_v, n_chains=n_chains, n_jobs=n_jobs
                )
                mse, mae = score(y_star, _fitted_medians(chains))
                rows.append(ReplicateScore("pseudo", variant, ri, mse, mae))
            except Exception as exc:
                rows.append(
                    ReplicateScore(
                        "pseudo", variant, ri, float("nan"), float("nan"),
                        failed=True, error=f"{type(exc).__name__}: {exc}",
                    )
                )
    return _assemble(rows)
