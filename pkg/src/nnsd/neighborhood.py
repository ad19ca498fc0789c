"""Latent-space neighborhood model: edge probabilities from a geographic and a
latent socio-demographic distance, plus the priors the sampler needs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gmrf

__all__ = [
    "LatentPositions",
    "NeighborhoodParams",
    "edge_logit",
    "edge_logit_matrix",
    "edge_prob_matrix",
    "sample_adjacency",
    "adjacency_logprob",
    "position_logprior",
    "position_means",
]

DISK_TOL = 1e-12


@dataclass(frozen=True)
class LatentPositions:
    """N x 2 latent coordinates, every row inside the closed unit disk."""

    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != 2:
            raise ValueError("positions must be an N x 2 array")
        if not np.all(np.isfinite(Z)):
            raise ValueError("non-finite positions")
        norms = np.sqrt((Z**2).sum(axis=1))
        if norms.max(initial=0.0) > 1.0 + DISK_TOL:
            raise ValueError(f"position outside the unit disk (norm {norms.max():.6f})")
        object.__setattr__(self, "Z", Z)


@dataclass(frozen=True)
class NeighborhoodParams:
    """Edge-model parameters: intercept alpha, distance weight gamma in [0,1],
    position-covariate slopes delta (length 2m, stacked per coordinate), and
    the fixed position-prior variance sigma2_z."""

    alpha: float
    gamma: float
    delta: np.ndarray
    sigma2_z: float = 1.0

    def __post_init__(self):
        # gamma outside [0, 1] is representable (the joint density scores it
        # as -inf) so density-level guards stay testable; samplers never
        # propose outside the box.
        if not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")
        if self.sigma2_z <= 0:
            raise ValueError("sigma2_z must be positive")
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).ravel())
        if self.delta.size % 2:
            raise ValueError("delta must stack an equal slope count per coordinate")


def edge_logit(alpha, gamma, d1_ij, d2_ij):
    """alpha - gamma*d1 - (1-gamma)*d2; the edge probability is its logistic."""
    return alpha - gamma * d1_ij - (1.0 - gamma) * d2_ij


def position_means(S: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Prior mean positions: column q of the result is S @ delta-block q."""
    S = np.asarray(S, dtype=float)
    delta = np.asarray(delta, dtype=float).ravel()
    if delta.size == 0:
        return np.zeros((S.shape[0], 2))
    m = delta.size // 2
    return S @ delta.reshape(2, m).T


def edge_logit_matrix(params: NeighborhoodParams, positions: LatentPositions, d1: np.ndarray) -> np.ndarray:
    from .domain import pairwise_distances

    d2 = pairwise_distances(positions.Z)
    eta = edge_logit(params.alpha, params.gamma, d1, d2)
    np.fill_diagonal(eta, 0.0)
    return eta


def edge_prob_matrix(params: NeighborhoodParams, positions: LatentPositions, d1: np.ndarray) -> np.ndarray:
    """Symmetric matrix of edge probabilities, zero diagonal by convention."""
    P = expit(edge_logit_matrix(params, positions, d1))
    np.fill_diagonal(P, 0.0)
    return P


def sample_adjacency(P: np.ndarray, rng: np.random.Generator) -> gmrf.AdjacencyState:
    """Draw each upper-triangle edge independently and build the graph caches."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    iu = np.triu_indices(n, k=1)
    draws = rng.random(iu[0].size) < P[iu]
    B = np.zeros((n, n), dtype=np.uint8)
    B[iu] = draws
    B |= B.T
    return gmrf.build_adjacency(B)


def adjacency_logprob(
    adj: gmrf.AdjacencyState | np.ndarray,
    params: NeighborhoodParams,
    positions: LatentPositions,
    d1: np.ndarray,
) -> float:
    """Bernoulli log likelihood of all upper-triangle edge indicators."""
    B = adj.B if isinstance(adj, gmrf.AdjacencyState) else np.asarray(adj)
    eta = edge_logit_matrix(params, positions, d1)
    iu = np.triu_indices(B.shape[0], k=1)
    e, b = eta[iu], B[iu].astype(float)
    # log p = eta - softplus(eta); log(1-p) = -softplus(eta)
    return float(np.sum(b * e - np.logaddexp(0.0, e)))


def position_logprior(
    positions: LatentPositions,
    S: np.ndarray,
    delta: np.ndarray,
    sigma2_z: float,
) -> float:
    """Sum of bivariate normal log densities of the rows of Z around their
    covariate-driven means, with the fixed disk-truncation constant dropped.
    Returns -inf if any row escapes the closed unit disk."""
    Z = positions.Z if isinstance(positions, LatentPositions) else np.asarray(positions, dtype=float)
    norms2 = (Z**2).sum(axis=1)
    if norms2.max(initial=0.0) > (1.0 + DISK_TOL) ** 2:
        return -np.inf
    means = position_means(S, delta)
    resid2 = ((Z - means) ** 2).sum()
    n = Z.shape[0]
    return float(-n * np.log(2.0 * np.pi * sigma2_z) - resid2 / (2.0 * sigma2_z))
