"""Convergence diagnostics (multivariate PSRF over lugsail batch-means
covariance), latent-position alignment, and posterior summarization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _as_chain_matrix(chain) -> np.ndarray:
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"chain must be 1-D or 2-D, got shape {x.shape}")
    return x


def batch_means_cov(chain_matrix, batch_size: int, center=None) -> np.ndarray:
    """Batch-means estimate of the long-run covariance of an n x p chain.

    Rows beyond the last full batch are dropped.  `center` defaults to the
    mean of the retained rows; diagnostics pass the grand mean across
    chains so between-chain displacement inflates the estimate.
    """
    x = _as_chain_matrix(chain_matrix)
    n, p = x.shape
    b = int(batch_size)
    if b < 1:
        raise ValueError("batch_size must be >= 1")
    a = n // b
    if a < 2:
        raise ValueError(f"need at least 2 batches; n={n}, batch_size={b}")
    used = x[: a * b]
    means = used.reshape(a, b, p).mean(axis=1)
    if center is None:
        center = used.mean(axis=0)
    dev = means - np.asarray(center, dtype=float)
    cov = (b / (a - 1)) * dev.T @ dev
    return 0.5 * (cov + cov.T)


def lugsail_batch_cov(chain_matrix, batch_size: int | None = None, center=None) -> np.ndarray:
    """Lugsail long-run covariance: 2*BM(b) - BM(max(b//3, 1)).

    The default batch size is floor(sqrt(n)).  Requires n >= 2*batch_size.
    The lugsail combination cancels the leading-order negative bias of
    plain batch means, at the price of extra variance.
    """
    x = _as_chain_matrix(chain_matrix)
    n = x.shape[0]
    b = int(math.isqrt(n)) if batch_size is None else int(batch_size)
    if n < 2 * b:
        raise ValueError(f"chain too short for batch size {b}: n={n} < {2 * b}")
    small = max(b // 3, 1)
    out = 2.0 * batch_means_cov(x, b, center) - batch_means_cov(x, small, center)
    return 0.5 * (out + out.T)


def _pooled_within_cov(chains: list[np.ndarray]) -> np.ndarray:
    return np.mean([np.cov(c, rowvar=False, ddof=1).reshape(c.shape[1], c.shape[1])
                    for c in chains], axis=0)


def _check_chains(chains) -> list[np.ndarray]:
    if len(chains) < 2:
        raise ValueError(f"need at least 2 chains, got {len(chains)}")
    mats = [_as_chain_matrix(c) for c in chains]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError(f"chains must share one shape; got {[m.shape for m in mats]}")
    if shape[0] < 4:
        raise ValueError("chains too short to diagnose")
    return mats


def mpsrf(chains, batch_size: int | None = None) -> float:
    """Multivariate potential scale reduction factor.

    R-hat = sqrt((n-1)/n + (det T / det S)^(1/p) / n) with S the pooled
    within-chain sample covariance and T the average of per-chain lugsail
    batch-means covariances computed around the grand mean (so chains
    stuck in different places inflate T even when each is internally
    tight).  A non-positive det(T) contributes ratio 0.
    """
    mats = _check_chains(chains)
    n, p = mats[0].shape
    S = _pooled_within_cov(mats)
    diag = np.diag(S)
    if np.any(diag <= 0):
        j = int(np.argmin(diag))
        raise ValueError(
            f"pooled within-chain covariance is singular: coordinate {j} has zero variance"
        )
    sign_s, logdet_s = np.linalg.slogdet(S)
    if sign_s <= 0:
        lam = np.linalg.eigvalsh(S)
        raise ValueError(
            f"pooled within-chain covariance is singular (smallest eigenvalue {lam[0]:.3g}); "
            "drop linearly dependent coordinates"
        )
    grand = np.mean([m.mean(axis=0) for m in mats], axis=0)
    T = np.mean([lugsail_batch_cov(m, batch_size, center=grand) for m in mats], axis=0)
    sign_t, logdet_t = np.linalg.slogdet(T)
    ratio = math.exp((logdet_t - logdet_s) / p) if sign_t > 0 else 0.0
    return math.sqrt((n - 1) / n + ratio / n)


def psrf(chains, batch_size: int | None = None) -> float:
    """Univariate potential scale reduction factor of one scalar trace per
    chain (the p=1 case of mpsrf)."""
    mats = [np.asarray(c, dtype=float).reshape(-1, 1) for c in chains]
    return mpsrf(mats, batch_size)


def effective_sample_size(chains, batch_size: int | None = None) -> np.ndarray:
    """Per-coordinate ESS: m*n*S_jj/T_jj.

    Constant coordinates give nan.  Values can exceed the raw draw count
    for antithetic chains; no cap is applied.
    """
    mats = _check_chains(chains)
    n, p = mats[0].shape
    m = len(mats)
    S = _pooled_within_cov(mats)
    grand = np.mean([mat.mean(axis=0) for mat in mats], axis=0)
    T = np.mean([lugsail_batch_cov(mat, batch_size, center=grand) for mat in mats], axis=0)
    out = np.full(p, np.nan)
    for j in range(p):
        if S[j, j] > 0 and T[j, j] > 0:
            out[j] = m * n * S[j, j] / T[j, j]
    return out


# -- latent-position alignment ---------------------------------------------


def procrustes_align(reference: np.ndarray, draws) -> np.ndarray:
    """Center each draw and rotate/reflect it onto the centered reference.

    The orthogonal map is V U^T from the SVD of the cross-product matrix;
    reflections are allowed (no determinant correction), matching the
    model's invariance class.  A degenerate (all-rows-equal) draw is only
    centered.  Within-draw pairwise distances are untouched.
    """
    ref = np.asarray(reference, dtype=float)
    if ref.ndim != 2 or ref.shape[1] != 2:
        raise ValueError(f"reference must be N x 2, got {ref.shape}")
    draws = np.asarray(draws, dtype=float)
    single = draws.ndim == 2
    if single:
        draws = draws[None]
    if draws.shape[1:] != ref.shape:
        raise ValueError(f"draws of shape {draws.shape[1:]} do not match reference {ref.shape}")
    ref_c = ref - ref.mean(axis=0)
    out = np.empty_like(draws)
    for k in range(draws.shape[0]):
        d = draws[k] - draws[k].mean(axis=0)
        H = d.T @ ref_c
        if not H.any():
            out[k] = d
            continue
        U, _, Vt = np.linalg.svd(H)
        out[k] = d @ (U @ Vt)
    return out[0] if single else out


# -- posterior summaries ----------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    name: str
    mean: float
    median: float
    sd: float
    q025: float
    q975: float
    psrf: float
    ess: float


@dataclass(frozen=True)
class DiagnosticsReport:
    """Convergence verdict over the scalar traces of a multi-chain run."""

    mpsrf: float
    psrf: dict
    ess: dict
    n_chains: int
    n_draws: int
    threshold: float = 1.1

    @property
    def passed(self) -> bool:
        return self.mpsrf < self.threshold


def _delta_names(m2: int) -> list[str]:
    m = m2 // 2
    return [f"delta_x_{k + 1}" for k in range(m)] + [f"delta_y_{k + 1}" for k in range(m)]


def _scalar_traces(chains) -> dict:
    """name -> list of per-chain 1-D trace arrays, in reporting order."""
    first = chains[0]
    names = first.scalar_names()
    out = {}
    for j, name in enumerate(names):
        out[name] = [c.scalar_matrix()[:, j] for c in chains]
    for j, name in enumerate(_delta_names(first.delta.shape[1])):
        out[name] = [c.delta[:, j] for c in chains]
    out["n_edges"] = [c.n_edges.astype(float) for c in chains]
    out["log_posterior"] = [c.log_posterior for c in chains]
    return out


def _row(name: str, pooled: np.ndarray, per_chain) -> SummaryRow:
    q = np.quantile(pooled, [0.025, 0.5, 0.975], method="linear")
    rhat = ess_j = float("nan")
    if len(per_chain) >= 2 and np.ptp(pooled) > 0:
        try:
            rhat = psrf(per_chain)
            ess_j = float(effective_sample_size([c.reshape(-1, 1) for c in per_chain])[0])
        except ValueError:
            pass
    return SummaryRow(
        name=name,
        mean=float(pooled.mean()),
        median=float(q[1]),
        sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
        q025=float(q[0]),
        q975=float(q[2]),
        psrf=rhat,
        ess=ess_j,
    )


def posterior_summary(chains) -> dict:
    """Pooled posterior summaries of a list of ChainDraws.

    Returns {"parameters": [SummaryRow ...], "fitted": [SummaryRow per
    unit, from the mu draws], "edge_freq": N x N inclusion frequencies
    averaged over chains}.  Quantiles use linear interpolation of order
    statistics; psrf/ess are nan when fewer than two chains are given or
    a trace is constant.
    """
    chains = list(chains)
    if not chains:
        raise ValueError("need at least one chain")
    if any(c.n_kept == 0 for c in chains):
        raise ValueError("empty draws")
    params = []
    for name, traces in _scalar_traces(chains).items():
        params.append(_row(name, np.concatenate(traces), traces))
    fitted = []
    n = chains[0].n_units
    for i in range(n):
        traces = [c.mu[:, i] for c in chains]
        fitted.append(_row(f"mu_{i + 1}", np.concatenate(traces), traces))
    edge_freq = np.mean([c.edge_freq for c in chains], axis=0)
    return {"parameters": params, "fitted": fitted, "edge_freq": edge_freq}


def diagnostics_report(chains, threshold: float = 1.1, batch_size: int | None = None) -> DiagnosticsReport:
    """mpsrf over the non-constant scalar parameters plus per-scalar psrf
    and ESS.  Exactly constant traces (e.g. a pinned gamma) are dropped
    from the multivariate statistic and reported as nan."""
    chains = list(chains)
    if len(chains) < 2:
        raise ValueError("need at least 2 chains for convergence diagnostics")
    mats = [c.scalar_matrix() for c in chains]
    names = chains[0].scalar_names()
    pooled = np.concatenate(mats, axis=0)
    keep = [j for j in range(pooled.shape[1]) if np.ptp(pooled[:, j]) > 0]
    if not keep:
        raise ValueError("all scalar traces are constant; nothing to diagnose")
    sub = [m[:, keep] for m in mats]
    rhat = mpsrf(sub, batch_size)
    per = {}
    ess = {}
    ess_vals = effective_sample_size(sub, batch_size)
    for pos, j in enumerate(keep):
        per[names[j]] = psrf([m[:, j] for m in mats], batch_size)
        ess[names[j]] = float(ess_vals[pos])
    for j in range(pooled.shape[1]):
        if j not in keep:
            per[names[j]] = float("nan")
            ess[names[j]] = float("nan")
    return DiagnosticsReport(
        mpsrf=float(rhat),
        psrf=per,
        ess=ess,
        n_chains=len(chains),
        n_draws=int(mats[0].shape[0]),
        threshold=threshold,
    )
