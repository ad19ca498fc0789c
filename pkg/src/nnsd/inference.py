"""Metropolis-within-Gibbs engine: edge flips, latent positions, edge-model
scalars, then the conjugate Gaussian/inverse-gamma blocks, in a fixed sweep
order.  One `Sampler` owns the mutable working arrays for a single chain;
`run_chain`/`run_chains` orchestrate burn-in, thinning and seeding.

Update blocks and what they touch:

=========  ====================================  =========================
block      parameters                            kind
=========  ====================================  =========================
edges      B (and eps on partition changes)      MH / reversible jump
positions  Z, one unit at a time                 MH random walk
alpha      alpha                                 MH random walk
gamma      gamma (NNSD only)                     MH random walk, reflected
location   delta, beta, mu                       Gibbs (Gaussian)
epsilon    eps                                   Gibbs (constrained GMRF)
variances  sigma2_mu, sigma2_eps                 Gibbs (inverse gamma)
=========  ====================================  =========================

A flip that merges or splits components changes the dimension of the
constrained eps vector, so those proposals carry a matched random shift:
merging draws s ~ N(0, sigma2_eps*(1/|A|+1/|B|)) and moves the two halves
by (+s, -s*|A|/|B|), which keeps every component sum at zero; splitting
inverts that map deterministically (s* = mean of eps over the detached
side).  The acceptance ratio then includes the proposal density of s, the
Jacobian sqrt(|A||S|/|B|) of the within-constraint direction, and the
mu-likelihood change, on top of the Bernoulli edge term and the GMRF
ratio.  Plain flips (no partition change) reduce to the familiar
rank-one-determinant MH step.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from . import gmrf, neighborhood
from ._kernels import get_backend
from .domain import SpatialDomain, pairwise_distances
from .gmrf import AdjacencyState, RandomEffects
from .neighborhood import LatentPositions, NeighborhoodParams

VARIANTS = ("NNSD", "NN", "SD", "ICAR")

#: block names accepted by RunOptions.fixed
FIXABLE = frozenset(
    {"edges", "positions", "alpha", "gamma", "delta", "beta", "mu", "epsilon", "variances"}
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparams:
    """Fixed prior settings plus the model variant.

    Defaults are the reference configuration: sigma2_alpha=3,
    sigma2_beta=sigma2_delta=100, sigma2_z=1 and InvGamma(2, 1) on both
    variance components.
    """

    variant: str = "NNSD"
    sigma2_alpha: float = 3.0
    sigma2_beta: float = 100.0
    sigma2_delta: float = 100.0
    sigma2_z: float = 1.0
    a_mu: float = 2.0
    b_mu: float = 1.0
    a_eps: float = 2.0
    b_eps: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in (
            "sigma2_alpha",
            "sigma2_beta",
            "sigma2_delta",
            "sigma2_z",
            "a_mu",
            "b_mu",
            "a_eps",
            "b_eps",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v}")

    @property
    def gamma_pinned(self) -> float | None:
        """1.0 for NN, 0.0 for SD, None when gamma is free or absent."""
        if self.variant == "NN":
            return 1.0
        if self.variant == "SD":
            return 0.0
        return None

    @property
    def has_edge_model(self) -> bool:
        return self.variant != "ICAR"

    @property
    def has_positions(self) -> bool:
        # NN pins gamma at 1 so d2 never enters the edge logit; Z and delta
        # are inert there and for ICAR.
        return self.variant in ("NNSD", "SD")


@dataclass(frozen=True)
class RunOptions:
    """Chain-length, seeding and proposal settings for one MCMC run."""

    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    chain_index: int = 0
    n_proposals: int | None = None  # default: one per unordered pair
    step_alpha: float = 0.3
    step_gamma: float = 0.1
    step_z: float = 0.1
    adapt_steps: bool = False
    fixed: frozenset = frozenset()
    keep_adjacency: bool = False
    backend: str | None = None

    def __post_init__(self) -> None:
        if not (self.iterations > self.burn_in >= 0):
            raise ValueError(
                f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}"
            )
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.n_kept < 1:
            raise ValueError("no retained draws: (iterations - burn_in) // thin == 0")
        if self.chain_index < 0:
            raise ValueError("chain_index must be >= 0")
        if self.n_proposals is not None and self.n_proposals < 1:
            raise ValueError("n_proposals must be >= 1")
        for name in ("step_alpha", "step_gamma", "step_z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        unknown = self.fixed - FIXABLE
        if unknown:
            raise ValueError(f"unknown fixed block(s) {sorted(unknown)}; valid: {sorted(FIXABLE)}")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class ModelState:
    """One complete parameter configuration of the hierarchy."""

    adjacency: AdjacencyState
    positions: LatentPositions
    nbr: NeighborhoodParams
    beta: np.ndarray
    mu: np.ndarray
    eps: RandomEffects
    sigma2_mu: float
    sigma2_eps: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())
        n = self.adjacency.n
        if self.mu.shape != (n,):
            raise ValueError(f"mu must have length {n}, got {self.mu.shape}")
        if self.eps.epsilon.shape != (n,):
            raise ValueError(f"eps must have length {n}, got {self.eps.epsilon.shape}")
        if self.positions.Z.shape != (n, 2):
            raise ValueError("positions do not match the adjacency dimension")
        for name in ("sigma2_mu", "sigma2_eps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class ChainDraws:
    """Thinned post-burn-in draws of one chain, stored column-wise.

    `positions[k]`, `mu[k]`, ... belong to the same retained sweep; the
    full state at index k can be rebuilt with `state_at` when the run kept
    adjacency indicators.
    """

    variant: str
    seed: int
    chain_index: int
    iterations: int
    burn_in: int
    thin: int
    backend: str
    alpha: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    sigma2_mu: np.ndarray
    sigma2_eps: np.ndarray
    log_posterior: np.ndarray
    n_edges: np.ndarray
    n_components: np.ndarray
    mu: np.ndarray
    eps: np.ndarray
    positions: np.ndarray
    edge_freq: np.ndarray
    accept_rates: dict
    step_sizes: dict
    adjacency_draws: np.ndarray | None = None

    @property
    def n_kept(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def n_units(self) -> int:
        return int(self.mu.shape[1])

    def scalar_names(self) -> list[str]:
        p = self.beta.shape[1]
        return ["alpha", "gamma", *[f"beta_{i + 1}" for i in range(p)], "sigma2_mu", "sigma2_eps"]

    def scalar_matrix(self) -> np.ndarray:
        """Kept draws of the scalar parameters, one column per name."""
        cols = [self.alpha, self.gamma]
        cols.extend(self.beta[:, i] for i in range(self.beta.shape[1]))
        cols.extend([self.sigma2_mu, self.sigma2_eps])
        return np.column_stack(cols)

    def state_at(self, k: int, domain: SpatialDomain, hp: Hyperparams) -> ModelState:
        """Rebuild the full ModelState of retained draw k (requires the run
        to have been made with keep_adjacency=True)."""
        if self.adjacency_draws is None:
            raise ValueError("adjacency indicators were not retained; rerun with keep_adjacency")
        n = self.n_units
        iu = np.triu_indices(n, k=1)
        B = np.zeros((n, n), dtype=np.uint8)
        B[iu] = self.adjacency_draws[k]
        B |= B.T
        adj = gmrf.build_adjacency(B)
        eps = gmrf.make_random_effects(self.eps[k], adj.component_labels)
        return ModelState(
            adjacency=adj,
            positions=LatentPositions(self.positions[k].copy()),
            nbr=NeighborhoodParams(
                float(self.alpha[k]), float(self.gamma[k]), self.delta[k].copy(), hp.sigma2_z
            ),
            beta=self.beta[k].copy(),
            mu=self.mu[k].copy(),
            eps=eps,
            sigma2_mu=float(self.sigma2_mu[k]),
            sigma2_eps=float(self.sigma2_eps[k]),
        )


def _ig_logpdf(x: float, a: float, b: float) -> float:
    if x <= 0:
        return -math.inf
    return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x


def joint_logdensity(state: ModelState, domain: SpatialDomain, hp: Hyperparams) -> float:
    """Log of the full joint density at `state` (data terms + priors).

    Variant-aware: ICAR omits every edge-model term; NN additionally omits
    the position and delta terms.  Constraint violations (gamma outside
    [0,1], positions outside the disk, eps off its constraint manifold,
    non-positive variances) give -inf rather than raising.
    """
    if not (state.sigma2_mu > 0 and state.sigma2_eps > 0):
        return -math.inf
    n = domain.n
    y, var_y = domain.y, domain.var_y
    mu, beta, eps = state.mu, state.beta, state.eps.epsilon

    out = -0.5 * float(np.sum(np.log(2.0 * np.pi * var_y) + (y - mu) ** 2 / var_y))
    r = mu - domain.X @ beta - eps
    out += -0.5 * n * math.log(2.0 * math.pi * state.sigma2_mu) - float(r @ r) / (
        2.0 * state.sigma2_mu
    )
    try:
        out += gmrf.icar_logdensity(state.eps, state.adjacency, state.sigma2_eps)
    except ValueError:
        return -math.inf
    out += -0.5 * domain.p * math.log(2.0 * math.pi * hp.sigma2_beta) - float(beta @ beta) / (
        2.0 * hp.sigma2_beta
    )
    out += _ig_logpdf(state.sigma2_mu, hp.a_mu, hp.b_mu)
    out += _ig_logpdf(state.sigma2_eps, hp.a_eps, hp.b_eps)
    if not hp.has_edge_model:
        return out

    g = state.nbr.gamma
    pinned = hp.gamma_pinned
    if pinned is not None:
        if g != pinned:
            return -math.inf
    elif not 0.0 <= g <= 1.0:
        return -math.inf
    out += neighborhood.adjacency_logprob(state.adjacency, state.nbr, state.positions, domain.d1)
    out += -0.5 * math.log(2.0 * math.pi * hp.sigma2_alpha) - state.nbr.alpha**2 / (
        2.0 * hp.sigma2_alpha
    )
    if hp.has_positions:
        out += neighborhood.position_logprior(state.positions, domain.S, state.nbr.delta, hp.sigma2_z)
        d = state.nbr.delta
        if d.size:
            out += -0.5 * d.size * math.log(2.0 * math.pi * hp.sigma2_delta) - float(d @ d) / (
                2.0 * hp.sigma2_delta
            )
    return float(out)


class Sampler:
    """Mutable working copy of one chain's state plus all kernel scratch.

    The constructor pays one O(N^3) factorization; every sweep after that
    reuses rank-one updates.  All randomness is drawn from the caller's
    generator in a fixed order, so a seeded run is reproducible to the bit
    on a given backend.
    """

    def __init__(
        self,
        domain: SpatialDomain,
        hp: Hyperparams,
        options: RunOptions,
        state: ModelState,
        kernel=None,
    ):
        self.domain = domain
        self.hp = hp
        self.options = options
        self.kernel = kernel if kernel is not None else get_backend(options.backend)
        n = domain.n
        self.n = n
        self.X = np.ascontiguousarray(domain.X, dtype=np.float64)
        self.S = np.ascontiguousarray(domain.S, dtype=np.float64)
        self.m = self.S.shape[1]
        self.d1 = np.ascontiguousarray(domain.d1, dtype=np.float64)
        self.var_y = np.asarray(domain.var_y, dtype=float).copy()
        self.y = np.asarray(domain.y, dtype=float).copy()
        pi, pj = np.triu_indices(n, k=1)
        self.pair_i = np.ascontiguousarray(pi, dtype=np.int64)
        self.pair_j = np.ascontiguousarray(pj, dtype=np.int64)
        self.n_pairs = int(self.pair_i.size)

        if state.nbr.delta.size != 2 * self.m:
            raise ValueError(
                f"delta has length {state.nbr.delta.size}, expected {2 * self.m} for "
                f"{self.m} position covariate(s)"
            )

        # graph state + scratch shared with the kernels
        self.B = np.ascontiguousarray(state.adjacency.B, dtype=np.uint8).copy()
        self.deg = np.ascontiguousarray(state.adjacency.degrees, dtype=np.int64).copy()
        self.labels = np.ascontiguousarray(state.adjacency.component_labels, dtype=np.int64).copy()
        self.sizes = np.zeros(n, dtype=np.int64)
        np.add.at(self.sizes, self.labels, 1)
        self.Minv = np.zeros((n, n), dtype=np.float64)
        self.mbuf = np.zeros((n, n), dtype=np.float64)
        self.lbuf = np.zeros((n, n), dtype=np.float64)
        self.wbuf = np.zeros(n, dtype=np.float64)
        self.d2row = np.zeros(n, dtype=np.float64)
        self.etarow = np.zeros(n, dtype=np.float64)
        self.queue = np.zeros(n, dtype=np.int64)
        self.visited = np.zeros(n, dtype=np.uint8)
        pld = self.kernel.refresh_minv(
            self.B, self.deg, self.labels, self.sizes, self.Minv, self.mbuf, self.lbuf
        )
        self.meta = np.array([state.adjacency.n_components, 0], dtype=np.int64)
        self.counters = np.zeros(5, dtype=np.int64)

        self.Z = np.ascontiguousarray(state.positions.Z, dtype=np.float64).copy()
        self.d2 = np.ascontiguousarray(pairwise_distances(self.Z))
        self.alpha = float(state.nbr.alpha)
        self.gamma = float(state.nbr.gamma)
        self.delta = np.asarray(state.nbr.delta, dtype=float).copy()
        eta = neighborhood.edge_logit(self.alpha, self.gamma, self.d1, self.d2)
        np.fill_diagonal(eta, 0.0)
        self.eta = np.ascontiguousarray(eta)
        self.beta = np.asarray(state.beta, dtype=float).copy()
        self.mu = np.asarray(state.mu, dtype=float).copy()
        self.eps = np.ascontiguousarray(state.eps.epsilon, dtype=np.float64).copy()
        self.sigma2_mu = float(state.sigma2_mu)
        self.sigma2_eps = float(state.sigma2_eps)
        # fstate = [pseudo-log-det, eps' L eps, sigma2_eps, sigma2_mu]
        self.fstate = np.array([pld, self._quad(), self.sigma2_eps, self.sigma2_mu])

        self.steps = {
            "alpha": float(options.step_alpha),
            "gamma": float(options.step_gamma),
            "z": float(options.step_z),
        }
        self._totals = {
            name: [0, 0] for name in ("edges", "partition", "positions", "alpha", "gamma")
        }
        self._sweep_count = 0

    # -- small helpers ----------------------------------------------------

    def _quad(self) -> float:
        d = self.eps[self.pair_i] - self.eps[self.pair_j]
        return float(np.sum(self.B[self.pair_i, self.pair_j] * d * d))

    def _pmeans(self) -> np.ndarray:
        return np.ascontiguousarray(neighborhood.position_means(self.S, self.delta))

    def set_response(self, y: np.ndarray) -> None:
        """Swap in a new response vector (used by joint-distribution checks
        that resample Y from the current state)."""
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape:
            raise ValueError("response has the wrong length")
        self.y[:] = y

    @property
    def n_components(self) -> int:
        return int(self.meta[0])

    # -- update blocks ----------------------------------------------------

    def flip_block(self, rng: np.random.Generator, n_proposals: int | None = None) -> None:
        if not self.hp.has_edge_model:
            raise ValueError("edge flips are undefined for the ICAR variant")
        if n_proposals is None:
            n_proposals = self.options.n_proposals
        n_prop = int(n_proposals) if n_proposals is not None else self.n_pairs
        if n_prop < 1:
            raise ValueError("n_proposals must be >= 1")
        ks = rng.integers(0, self.n_pairs, size=n_prop)
        log_us = np.log(rng.random(n_prop))
        s_norms = rng.standard_normal(n_prop)
        self.fstate[2] = self.sigma2_eps
        self.fstate[3] = self.sigma2_mu
        resid = np.ascontiguousarray(self.mu - self.X @ self.beta)
        before = self.counters.copy()
        self.kernel.flip_sweep(
            self.B,
            self.deg,
            self.labels,
            self.sizes,
            self.Minv,
            self.eps,
            resid,
            self.eta,
            self.pair_i,
            self.pair_j,
            ks,
            log_us,
            s_norms,
            self.fstate,
            self.meta,
            self.counters,
            self.queue,
            self.visited,
            self.mbuf,
            self.lbuf,
            self.wbuf,
        )
        self._totals["edges"][0] += int(self.counters[0] - before[0])
        self._totals["edges"][1] += n_prop
        self._totals["partition"][0] += int(self.counters[1] - before[1])
        self._totals["partition"][1] += n_prop

    def position_block(self, rng: np.random.Generator) -> None:
        if not self.hp.has_positions:
            raise ValueError(f"the {self.hp.variant} variant has no latent positions to update")
        norms = rng.standard_normal((self.n, 2))
        log_us = np.log(rng.random(self.n))
        before = int(self.counters[2])
        self.kernel.position_sweep(
            self.Z,
            self.d2,
            self.eta,
            self.B,
            self.d1,
            self._pmeans(),
            self.alpha,
            self.gamma,
            self.hp.sigma2_z,
            self.steps["z"],
            norms,
            log_us,
            self.counters,
            self.d2row,
            self.etarow,
        )
        self._totals["positions"][0] += int(self.counters[2]) - before
        self._totals["positions"][1] += self.n

    def alpha_gamma_block(
        self, rng: np.random.Generator, update_alpha: bool = True, update_gamma: bool = True
    ) -> None:
        if not self.hp.has_edge_model:
            raise ValueError("the ICAR variant has no edge-model scalars to update")
        update_gamma = update_gamma and self.hp.gamma_pinned is None
        if not (update_alpha or update_gamma):
            return
        pars = np.array(
            [self.alpha, self.gamma, self.hp.sigma2_alpha, self.steps["alpha"], self.steps["gamma"]]
        )
        norms = rng.standard_normal(2)
        log_us = np.log(rng.random(2))
        before = self.counters.copy()
        self.kernel.alpha_gamma_update(
            self.eta, self.B, self.d1, self.d2, pars, update_alpha, update_gamma, norms, log_us,
            self.counters,
        )
        self.alpha = float(pars[0])
        self.gamma = float(pars[1])
        if update_alpha:
            self._totals["alpha"][0] += int(self.counters[3] - before[3])
            self._totals["alpha"][1] += 1
        if update_gamma:
            self._totals["gamma"][0] += int(self.counters[4] - before[4])
            self._totals["gamma"][1] += 1

    def location_block(self, rng: np.random.Generator) -> None:
        """Gibbs draws for delta, beta, mu (in that order)."""
        fixed = self.options.fixed
        if self.hp.has_positions and self.m > 0 and "delta" not in fixed:
            A = self.S.T @ self.S / self.hp.sigma2_z + np.eye(self.m) / self.hp.sigma2_delta
            f = cho_factor(A, lower=False)
            dm = self.delta.reshape(2, self.m)
            for q in range(2):
                mean = cho_solve(f, self.S.T @ self.Z[:, q] / self.hp.sigma2_z)
                dm[q] = mean + solve_triangular(f[0], rng.standard_normal(self.m), lower=False)
        if "beta" not in fixed:
            p = self.X.shape[1]
            A = self.X.T @ self.X / self.sigma2_mu + np.eye(p) / self.hp.sigma2_beta
            f = cho_factor(A, lower=False)
            mean = cho_solve(f, self.X.T @ (self.mu - self.eps) / self.sigma2_mu)
            self.beta = mean + solve_triangular(f[0], rng.standard_normal(p), lower=False)
        if "mu" not in fixed:
            prec = 1.0 / self.var_y + 1.0 / self.sigma2_mu
            mean = (self.y / self.var_y + (self.X @ self.beta + self.eps) / self.sigma2_mu) / prec
            self.mu = mean + rng.standard_normal(self.n) / np.sqrt(prec)

    def epsilon_block(self, rng: np.random.Generator) -> None:
        if "epsilon" in self.options.fixed:
            return
        L = np.diag(self.deg.astype(np.float64)) - self.B
        eps = gmrf.sample_epsilon_arrays(
            L, self.labels, self.mu, self.X @ self.beta, self.sigma2_eps, self.sigma2_mu, rng
        )
        # kriging already lands on the constraint; re-center exactly so
        # rounding cannot accumulate over very long runs
        sums = np.bincount(self.labels, weights=eps, minlength=self.n)
        eps -= (sums / np.maximum(self.sizes, 1))[self.labels]
        self.eps[:] = eps
        self.fstate[1] = self._quad()

    def variance_block(self, rng: np.random.Generator) -> None:
        if "variances" in self.options.fixed:
            return
        r = self.mu - self.X @ self.beta - self.eps
        a_post = self.hp.a_mu + 0.5 * self.n
        b_post = self.hp.b_mu + 0.5 * float(r @ r)
        self.sigma2_mu = b_post / rng.gamma(a_post)
        a_post = self.hp.a_eps + 0.5 * (self.n - self.n_components)
        b_post = self.hp.b_eps + 0.5 * float(self.fstate[1])
        self.sigma2_eps = b_post / rng.gamma(a_post)

    # -- one full sweep ---------------------------------------------------

    def sweep(self, rng: np.random.Generator) -> None:
        fixed = self.options.fixed
        before = self.counters.copy()
        if self.hp.has_edge_model and "edges" not in fixed:
            self.flip_block(rng)
        if self.hp.has_positions and "positions" not in fixed:
            self.position_block(rng)
        if self.hp.has_edge_model:
            ua = "alpha" not in fixed
            ug = self.hp.gamma_pinned is None and "gamma" not in fixed
            if ua or ug:
                self.alpha_gamma_block(rng, update_alpha=ua, update_gamma=ug)
        self.location_block(rng)
        self.epsilon_block(rng)
        self.variance_block(rng)
        self._sweep_count += 1
        if self.options.adapt_steps and self._sweep_count <= self.options.burn_in:
            self._adapt(before)

    def _adapt(self, before: np.ndarray) -> None:
        # Robbins-Monro on log step sizes, target acceptance 0.3; frozen
        # once burn-in ends so retained draws come from a fixed kernel.
        gain = self._sweep_count ** -0.6
        target = 0.3
        if self.hp.has_positions and "positions" not in self.options.fixed:
            rate = (int(self.counters[2]) - int(before[2])) / self.n
            self.steps["z"] *= math.exp(gain * (rate - target))
        if self.hp.has_edge_model and "alpha" not in self.options.fixed:
            rate = int(self.counters[3]) - int(before[3])
            self.steps["alpha"] *= math.exp(gain * (rate - target))
        if self.hp.gamma_pinned is None and self.hp.has_edge_model and "gamma" not in self.options.fixed:
            rate = int(self.counters[4]) - int(before[4])
            self.steps["gamma"] *= math.exp(gain * (rate - target))

    # -- state in/out -----------------------------------------------------

    def log_joint(self) -> float:
        """Joint log density from the maintained caches (pld, quadratic
        form); must agree with `joint_logdensity` on the exported state."""
        hp = self.hp
        n = self.n
        out = -0.5 * float(
            np.sum(np.log(2.0 * np.pi * self.var_y) + (self.y - self.mu) ** 2 / self.var_y)
        )
        r = self.mu - self.X @ self.beta - self.eps
        out += -0.5 * n * math.log(2.0 * math.pi * self.sigma2_mu) - float(r @ r) / (
            2.0 * self.sigma2_mu
        )
        c = self.n_components
        out += (
            -0.5 * (n - c) * math.log(2.0 * math.pi * self.sigma2_eps)
            + 0.5 * self.fstate[0]
            - self.fstate[1] / (2.0 * self.sigma2_eps)
        )
        out += -0.5 * self.X.shape[1] * math.log(2.0 * math.pi * hp.sigma2_beta) - float(
            self.beta @ self.beta
        ) / (2.0 * hp.sigma2_beta)
        out += _ig_logpdf(self.sigma2_mu, hp.a_mu, hp.b_mu)
        out += _ig_logpdf(self.sigma2_eps, hp.a_eps, hp.b_eps)
        if not hp.has_edge_model:
            return float(out)
        eta_u = self.eta[self.pair_i, self.pair_j]
        b_u = self.B[self.pair_i, self.pair_j]
        out += float(np.sum(b_u * eta_u - np.logaddexp(0.0, eta_u)))
        out += -0.5 * math.log(2.0 * math.pi * hp.sigma2_alpha) - self.alpha**2 / (
            2.0 * hp.sigma2_alpha
        )
        if hp.gamma_pinned is None and not 0.0 <= self.gamma <= 1.0:
            return -math.inf
        if hp.has_positions:
            resid = self.Z - self._pmeans()
            out += -n * math.log(2.0 * math.pi * hp.sigma2_z) - float(np.sum(resid**2)) / (
                2.0 * hp.sigma2_z
            )
            if self.delta.size:
                out += -0.5 * self.delta.size * math.log(2.0 * math.pi * hp.sigma2_delta) - float(
                    self.delta @ self.delta
                ) / (2.0 * hp.sigma2_delta)
        return float(out)

    def state(self) -> ModelState:
        """Export an immutable snapshot (rebuilds the adjacency caches)."""
        adj = gmrf.build_adjacency(self.B)
        eps = gmrf.make_random_effects(self.eps, adj.component_labels)
        return ModelState(
            adjacency=adj,
            positions=LatentPositions(self.Z.copy()),
            nbr=NeighborhoodParams(self.alpha, self.gamma, self.delta.copy(), self.hp.sigma2_z),
            beta=self.beta.copy(),
            mu=self.mu.copy(),
            eps=eps,
            sigma2_mu=self.sigma2_mu,
            sigma2_eps=self.sigma2_eps,
        )

    def accept_summary(self) -> dict:
        out = {}
        for name, (acc, prop) in self._totals.items():
            out[name] = {
                "accepted": acc,
                "proposed": prop,
                "rate": acc / prop if prop else float("nan"),
            }
        return out


# -- initialization -------------------------------------------------------


def _chain_jitter(chain_index: int) -> int:
    """0, +1, -1, +2, -2, ... as the chain index runs 0, 1, 2, 3, 4, ..."""
    if chain_index == 0:
        return 0
    sign = 1 if chain_index % 2 == 1 else -1
    return sign * ((chain_index + 1) // 2)


def _classical_mds_2d(dist: np.ndarray) -> np.ndarray | None:
    n = dist.shape[0]
    J = np.eye(n) - 1.0 / n
    G = -0.5 * J @ (dist**2) @ J
    w, V = np.linalg.eigh(G)
    coords = V[:, [-1, -2]] * np.sqrt(np.maximum(w[[-1, -2]], 0.0))
    norms = np.hypot(coords[:, 0], coords[:, 1])
    top = float(norms.max()) if n else 0.0
    if not np.isfinite(coords).all() or top < 1e-9:
        return None
    return coords * (0.9 / top)


def initial_state(
    domain: SpatialDomain,
    hp: Hyperparams,
    options: RunOptions = RunOptions(),
    rng: np.random.Generator | None = None,
) -> ModelState:
    """Deterministic-where-possible starting state with chain-indexed
    jitter on alpha, gamma and beta for overdispersed multi-chain starts."""
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=options.seed, spawn_key=(options.chain_index,))
        )
    n = domain.n
    jit = _chain_jitter(options.chain_index)

    if hp.variant == "ICAR":
        if domain.geo_adjacency is None:
            raise ValueError("the ICAR variant requires a geographic adjacency")
        adj = gmrf.build_adjacency(domain.geo_adjacency)
    elif domain.geo_adjacency is not None:
        adj = gmrf.build_adjacency(domain.geo_adjacency)
    else:
        p0 = expit(-1.0)
        P = np.full((n, n), p0)
        adj = neighborhood.sample_adjacency(P, rng)

    # alpha is inert under ICAR; jittering it would leave each chain at a
    # different frozen value and poison the pooled within-chain covariance
    alpha0 = -1.0 + (0.5 * jit if hp.has_edge_model else 0.0)
    pinned = hp.gamma_pinned
    if pinned is not None:
        gamma0 = pinned
    elif hp.variant == "ICAR":
        gamma0 = 0.5
    else:
        gamma0 = float(np.clip(0.5 + 0.15 * jit, 0.05, 0.95))

    y = domain.y
    Z0 = _classical_mds_2d(np.abs(y[:, None] - y[None, :]))
    if Z0 is None:
        Z0 = rng.normal(0.0, 0.1, size=(n, 2))
        top = float(np.hypot(Z0[:, 0], Z0[:, 1]).max())
        if top > 0.95:
            Z0 *= 0.95 / top

    beta_ls = np.linalg.lstsq(domain.X, y, rcond=None)[0]
    beta0 = beta_ls * (1.0 + 0.05 * jit) + 0.05 * jit
    delta0 = np.zeros(2 * domain.n_position_covariates)
    eps0 = gmrf.make_random_effects(np.zeros(n), adj.component_labels)
    return ModelState(
        adjacency=adj,
        positions=LatentPositions(Z0),
        nbr=NeighborhoodParams(alpha0, gamma0, delta0, hp.sigma2_z),
        beta=beta0,
        mu=y.copy(),
        eps=eps0,
        sigma2_mu=0.5,
        sigma2_eps=0.5,
    )


def _check_variant_state(hp: Hyperparams, domain: SpatialDomain, state: ModelState) -> None:
    pinned = hp.gamma_pinned
    if pinned is not None and state.nbr.gamma != pinned:
        raise ValueError(f"{hp.variant} requires gamma == {pinned}, got {state.nbr.gamma}")
    if hp.variant == "ICAR":
        if domain.geo_adjacency is None:
            raise ValueError("the ICAR variant requires a geographic adjacency")
        if not np.array_equal(state.adjacency.B, domain.geo_adjacency):
            raise ValueError("ICAR requires the state's adjacency to equal geo_adjacency")


# -- chain drivers --------------------------------------------------------


def run_chain(
    domain: SpatialDomain,
    hp: Hyperparams,
    options: RunOptions = RunOptions(),
    init: ModelState | None = None,
) -> ChainDraws:
    """Run one chain and return its thinned post-burn-in draws.

    Deterministic given (options.seed, options.chain_index, backend): the
    per-sweep randomness is drawn once per block in a fixed order.
    """
    kernel = get_backend(options.backend)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=options.seed, spawn_key=(options.chain_index,))
    )
    state = init if init is not None else initial_state(domain, hp, options, rng)
    _check_variant_state(hp, domain, state)
    smp = Sampler(domain, hp, options, state, kernel=kernel)
    lj = smp.log_joint()
    if not math.isfinite(lj):
        raise ValueError(f"non-finite joint log density at initialization: {lj}")

    n, p, m2 = domain.n, domain.p, 2 * domain.n_position_covariates
    K = options.n_kept
    alpha_t = np.empty(K)
    gamma_t = np.empty(K)
    beta_t = np.empty((K, p))
    delta_t = np.empty((K, m2))
    s2mu_t = np.empty(K)
    s2eps_t = np.empty(K)
    logp_t = np.empty(K)
    edges_t = np.empty(K, dtype=np.int64)
    comps_t = np.empty(K, dtype=np.int64)
    mu_t = np.empty((K, n))
    eps_t = np.empty((K, n))
    Z_t = np.empty((K, n, 2))
    edge_acc = np.zeros((n, n))
    adj_t = np.empty((K, smp.n_pairs), dtype=np.uint8) if options.keep_adjacency else None

    k = 0
    for s in range(1, options.iterations + 1):
        smp.sweep(rng)
        if s > options.burn_in and (s - options.burn_in) % options.thin == 0:
            alpha_t[k] = smp.alpha
            gamma_t[k] = smp.gamma
            beta_t[k] = smp.beta
            delta_t[k] = smp.delta
            s2mu_t[k] = smp.sigma2_mu
            s2eps_t[k] = smp.sigma2_eps
            logp_t[k] = smp.log_joint()
            edges_t[k] = int(smp.deg.sum()) // 2
            comps_t[k] = smp.n_components
            mu_t[k] = smp.mu
            eps_t[k] = smp.eps
            Z_t[k] = smp.Z
            edge_acc += smp.B
            if adj_t is not None:
                adj_t[k] = smp.B[smp.pair_i, smp.pair_j]
            k += 1

    return ChainDraws(
        variant=hp.variant,
        seed=options.seed,
        chain_index=options.chain_index,
        iterations=options.iterations,
        burn_in=options.burn_in,
        thin=options.thin,
        backend=kernel.BACKEND,
        alpha=alpha_t,
        gamma=gamma_t,
        beta=beta_t,
        delta=delta_t,
        sigma2_mu=s2mu_t,
        sigma2_eps=s2eps_t,
        log_posterior=logp_t,
        n_edges=edges_t,
        n_components=comps_t,
        mu=mu_t,
        eps=eps_t,
        positions=Z_t,
        edge_freq=edge_acc / K,
        accept_rates=smp.accept_summary(),
        step_sizes=dict(smp.steps),
        adjacency_draws=adj_t,
    )


def _run_chain_star(args) -> ChainDraws:
    return run_chain(*args)


def run_chains(
    domain: SpatialDomain,
    hp: Hyperparams,
    options: RunOptions = RunOptions(),
    n_chains: int = 2,
    n_jobs: int = 1,
    inits: list | None = None,
) -> list:
    """Run `n_chains` chains whose rng streams are spawned from the master
    seed by chain index; chain c of a 4-chain run equals chain c of a
    2-chain run with the same seed."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if inits is not None and len(inits) != n_chains:
        raise ValueError("inits must have one entry per chain")
    jobs = []
    for c in range(n_chains):
        opt_c = replace(options, chain_index=c)
        jobs.append((domain, hp, opt_c, None if inits is None else inits[c]))
    if n_jobs == 1:
        return [_run_chain_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_jobs, n_chains)) as pool:
        return list(pool.map(_run_chain_star, jobs))


# -- single-block functional wrappers --------------------------------------


def mh_flip_edges(
    state: ModelState,
    domain: SpatialDomain,
    hp: Hyperparams,
    rng: np.random.Generator,
    n_proposals: int,
) -> ModelState:
    """n_proposals single-edge flip proposals on uniformly random pairs."""
    if hp.variant == "ICAR":
        raise ValueError("edge flips are undefined for the ICAR variant")
    if n_proposals < 1:
        raise ValueError("n_proposals must be >= 1")
    smp = Sampler(domain, hp, RunOptions(), state)
    smp.flip_block(rng, n_proposals)
    return smp.state()


def mh_update_positions(
    state: ModelState,
    domain: SpatialDomain,
    hp: Hyperparams,
    rng: np.random.Generator,
    step_size: float = 0.1,
) -> ModelState:
    """One random-walk proposal per unit; no-op for NN and ICAR."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if not hp.has_positions:
        return state
    smp = Sampler(domain, hp, RunOptions(), state)
    smp.steps["z"] = float(step_size)
    smp.position_block(rng)
    return smp.state()


def mh_update_alpha_gamma(
    state: ModelState,
    domain: SpatialDomain,
    hp: Hyperparams,
    rng: np.random.Generator,
    step_sizes: tuple = (0.3, 0.1),
) -> ModelState:
    """Random-walk updates of alpha and (for NNSD) reflected gamma; no-op
    for ICAR."""
    sa, sg = step_sizes
    if sa <= 0 or sg <= 0:
        raise ValueError("step sizes must be positive")
    if not hp.has_edge_model:
        return state
    smp = Sampler(domain, hp, RunOptions(), state)
    smp.steps["alpha"] = float(sa)
    smp.steps["gamma"] = float(sg)
    smp.alpha_gamma_block(rng)
    return smp.state()


def gibbs_update_location_params(
    state: ModelState,
    domain: SpatialDomain,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> ModelState:
    """Exact Gaussian full-conditional draws of delta, beta, mu."""
    smp = Sampler(domain, hp, RunOptions(), state)
    smp.location_block(rng)
    return smp.state()


def gibbs_update_variances(
    state: ModelState,
    domain: SpatialDomain,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> ModelState:
    """Inverse-gamma draws of sigma2_mu and sigma2_eps."""
    smp = Sampler(domain, hp, RunOptions(), state)
    smp.variance_block(rng)
    return smp.state()
