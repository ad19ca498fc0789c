"""Areal-unit data: loading, unit-disk normalization, distances, variance transforms."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ColumnSpec",
    "SpatialDomain",
    "load_domain",
    "make_domain",
    "normalize_to_unit_disk",
    "pairwise_distances",
    "delta_method_log_variance",
    "position_design",
]


@dataclass(frozen=True)
class ColumnSpec:
    """Names of the columns to pull from a units file.

    ``covariates`` become the data-model design matrix X (an intercept column
    is always prepended); ``position_covariates`` drive the latent-position
    prior means. With ``log_scale`` the response is log-transformed and its
    standard error converted to a log-scale variance by the delta method.
    """

    unit_id: str = "unit_id"
    centroid_x: str = "centroid_x"
    centroid_y: str = "centroid_y"
    response: str = "response"
    response_se: str = "response_se"
    covariates: tuple[str, ...] = ()
    position_covariates: tuple[str, ...] = ()
    log_scale: bool = False


@dataclass(frozen=True)
class SpatialDomain:
    """Immutable bundle of everything the samplers need about the data.

    centroids are already normalized to the closed unit disk; d1 holds their
    pairwise Euclidean distances. S stores one row of position covariates per
    unit (may have zero columns); the corresponding 2 x 2m per-unit design
    matrix is materialized by :func:`position_design` when needed.
    """

    unit_ids: tuple
    centroids: np.ndarray
    d1: np.ndarray
    y: np.ndarray
    var_y: np.ndarray
    X: np.ndarray
    S: np.ndarray
    geo_adjacency: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_position_covariates(self) -> int:
        return self.S.shape[1]


def normalize_to_unit_disk(raw_centroids) -> np.ndarray:
    """Center coordinates and scale so the farthest point sits on the unit circle.

    Coincident inputs map to the origin; the map is idempotent.
    """
    pts = np.asarray(raw_centroids, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("centroids must be an N x 2 array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite centroid coordinates")
    # two passes: the first can mis-center badly conditioned input (coordinate
    # spread near one ulp), the second then runs cancellation-free at O(1);
    # hypot keeps the row norms from under/overflowing at extreme magnitudes
    for _ in range(2):
        pts = pts - pts.mean(axis=0)
        scale = np.hypot(pts[:, 0], pts[:, 1]).max()
        if scale == 0.0:
            return pts
        pts = pts / scale
    return pts


def pairwise_distances(points) -> np.ndarray:
    """Dense Euclidean distance matrix (symmetric, zero diagonal)."""
    pts = np.asarray(points, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    np.fill_diagonal(d, 0.0)
    return d


def delta_method_log_variance(estimate: float, se: float) -> float:
    """First-order variance of log(estimate): (se/estimate)^2."""
    if estimate <= 0:
        raise ValueError(f"non-positive estimate: {estimate}")
    if se <= 0:
        raise ValueError(f"non-positive se: {se}")
    return (se / estimate) ** 2


def position_design(s_row: np.ndarray) -> np.ndarray:
    """Per-unit 2 x 2m design matrix mapping stacked slope vectors to a position mean.

    Layout: the first m slope entries act on coordinate 1, the last m on
    coordinate 2, so position_design(s) @ delta == (s @ delta[:m], s @ delta[m:]).
    """
    s_row = np.asarray(s_row, dtype=float).ravel()
    return np.kron(np.eye(2), s_row[None, :]).reshape(2, -1)


def make_domain(
    unit_ids,
    raw_centroids,
    y,
    var_y,
    X=None,
    S=None,
    geo_adjacency=None,
    normalize: bool = True,
) -> SpatialDomain:
    """Build and validate a SpatialDomain from in-memory arrays.

    X defaults to an intercept-only column; scalar var_y broadcasts to all
    units. Set normalize=False when the centroids are already disk-scaled.
    """
    unit_ids = tuple(str(u) for u in unit_ids)
    n = len(unit_ids)
    if n < 3:
        raise ValueError(f"need at least 3 units, got {n}")
    if len(set(unit_ids)) != n:
        seen = set()
        dup = next(u for u in unit_ids if u in seen or seen.add(u))
        raise ValueError(f"duplicate unit id: {dup}")
    centroids = np.asarray(raw_centroids, dtype=float)
    if normalize:
        centroids = normalize_to_unit_disk(centroids)
    elif centroids.shape != (n, 2) or not np.all(np.isfinite(centroids)):
        raise ValueError("centroids must be a finite N x 2 array")
    y = np.asarray(y, dtype=float)
    var_y = np.broadcast_to(np.asarray(var_y, dtype=float), (n,)).copy()
    if y.shape != (n,):
        raise ValueError("response length does not match unit count")
    if np.any(var_y <= 0):
        bad = unit_ids[int(np.argmin(var_y))]
        raise ValueError(f"non-positive response variance for unit {bad}")
    if X is None:
        X = np.ones((n, 1))
    X = np.asarray(X, dtype=float)
    if X.shape[0] != n:
        raise ValueError("covariate matrix row count does not match unit count")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("covariate matrix is rank deficient")
    S = np.zeros((n, 0)) if S is None else np.asarray(S, dtype=float).reshape(n, -1)
    if geo_adjacency is not None:
        geo_adjacency = np.asarray(geo_adjacency)
        if geo_adjacency.shape != (n, n):
            raise ValueError("adjacency matrix shape does not match unit count")
        if not np.array_equal(geo_adjacency, geo_adjacency.T):
            raise ValueError("adjacency matrix must be symmetric")
        if not np.all(np.isin(geo_adjacency, (0, 1))) or np.any(np.diag(geo_adjacency)):
            raise ValueError("adjacency matrix must be binary with zero diagonal")
        geo_adjacency = geo_adjacency.astype(np.uint8)
    d1 = pairwise_distances(centroids)
    return SpatialDomain(
        unit_ids=unit_ids,
        centroids=centroids,
        d1=d1,
        y=y,
        var_y=var_y,
        X=X,
        S=S,
        geo_adjacency=geo_adjacency,
    )


def _read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty units file: {path}")
    return rows


def _parse_float(raw, column, unit):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ValueError(f"non-numeric value in column {column} for unit {unit}: {raw!r}")


def load_domain(units_file, adjacency_file=None, columns: ColumnSpec | None = None) -> SpatialDomain:
    """Read a delimited units file (and optional edge list) into a SpatialDomain."""
    cols = columns or ColumnSpec()
    rows = _read_table(units_file)
    needed = [cols.unit_id, cols.centroid_x, cols.centroid_y, cols.response, cols.response_se]
    needed += list(cols.covariates) + list(cols.position_covariates)
    for name in needed:
        if name not in rows[0]:
            raise ValueError(f"missing column: {name}")

    unit_ids = [str(r[cols.unit_id]) for r in rows]
    seen: set[str] = set()
    for u in unit_ids:
        if u in seen:
            raise ValueError(f"duplicate unit id: {u}")
        seen.add(u)
    n = len(unit_ids)
    if n < 3:
        raise ValueError(f"need at least 3 units, got {n}")

    cxy = np.array(
        [
            [
                _parse_float(r[cols.centroid_x], cols.centroid_x, u),
                _parse_float(r[cols.centroid_y], cols.centroid_y, u),
            ]
            for u, r in zip(unit_ids, rows)
        ]
    )
    resp = np.array([_parse_float(r[cols.response], cols.response, u) for u, r in zip(unit_ids, rows)])
    se = np.array([_parse_float(r[cols.response_se], cols.response_se, u) for u, r in zip(unit_ids, rows)])
    if np.any(se <= 0):
        bad = unit_ids[int(np.argmin(se))]
        raise ValueError(f"non-positive response_se for unit {bad}")
    if cols.log_scale:
        if np.any(resp <= 0):
            bad = unit_ids[int(np.argmin(resp))]
            raise ValueError(f"non-positive response for unit {bad} (log scale requested)")
        y = np.log(resp)
        var_y = np.array([delta_method_log_variance(e, s) for e, s in zip(resp, se)])
    else:
        y = resp
        var_y = se**2

    X = np.ones((n, 1 + len(cols.covariates)))
    for k, name in enumerate(cols.covariates):
        X[:, 1 + k] = [_parse_float(r[name], name, u) for u, r in zip(unit_ids, rows)]
    S = np.empty((n, len(cols.position_covariates)))
    for k, name in enumerate(cols.position_covariates):
        S[:, k] = [_parse_float(r[name], name, u) for u, r in zip(unit_ids, rows)]

    geo = None
    if adjacency_file is not None:
        index = {u: k for k, u in enumerate(unit_ids)}
        geo = np.zeros((n, n), dtype=np.uint8)
        with open(adjacency_file, newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != 2:
                    raise ValueError(f"malformed adjacency line {lineno}: {line!r}")
                a, b = parts
                if a == b:
                    raise ValueError(f"self-edge in adjacency file: {a}")
                for u in (a, b):
                    if u not in index:
                        raise ValueError(f"unknown unit id in adjacency: {u}")
                geo[index[a], index[b]] = 1
                geo[index[b], index[a]] = 1

    return make_domain(unit_ids, cxy, y, var_y, X=X, S=S, geo_adjacency=geo)
