"""Downstream operations on a trained model.

Fold-in of a new entity's profile, nearest-neighbor search over factor rows,
per-entity weight matrices, and k-means stratification with gap-statistic
selection of the cluster count.  Everything here is read-only with respect
to the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError
from .tensors import _first_duplicate_row


@dataclass
class QuerySlice:
    """Observed profile of a new mode-0 entity.

    ``indices`` has one row per observed value, holding the 0-based indices
    of modes 1..N-1 (the entity's own mode-0 index does not exist yet).
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.indices.ndim != 2:
            raise ShapeError("query indices must form a 2-D array")
        if self.values.shape != (self.indices.shape[0],):
            raise ShapeError(
                f"got {self.indices.shape[0]} index rows but "
                f"{self.values.shape[0]} values"
            )
        if _first_duplicate_row(self.indices) is not None:
            raise ValueError("query contains duplicate cells")

    @property
    def size(self):
        return self.values.shape[0]


@dataclass
class SubtypeMatrix:
    """Per-entity weight matrix S plus its influence summaries.

    ``s[j2, j3]`` couples a mode-1 component with a mode-2 component for one
    entity; ``row_influence[j2]`` is the norm of row j2 of S, and
    ``platform_influence[i3]`` the norm of column i3 of S contracted with the
    mode-2 factor matrix.
    """

    s: np.ndarray
    row_influence: np.ndarray
    platform_influence: np.ndarray


def _design_rows(model, q):
    """Per-entry mode-0 gradient directions; fixed while only u varies."""
    idx = q.indices
    rows = model.factors[1][idx[:, 0]]
    t = np.tensordot(rows, model.core, axes=(1, 1))  # (m, J1, J3, ..., JN)
    for n in range(2, model.order):
        rows = model.factors[n][idx[:, n - 1]]
        t = np.einsum("maj...,mj->ma...", t, rows)
    return t  # (m, J1)


def fold_in(model, q, config, ridge=0.0):
    """Latent mode-0 profile for a new entity, all other parameters frozen.

    Runs the per-entry SGD update restricted to the new row for
    ``config.fold_in_epochs`` epochs from a zero start, single-threaded.
    Since the core and the other factors do not move, each entry's gradient
    direction is precomputed once and reused.  The fit itself carries no
    penalty; ``ridge`` adds an optional L2 term for ill-posed queries.
    """
    if not isinstance(q, QuerySlice):
        raise TypeError("q must be a QuerySlice")
    if q.size == 0:
        raise ValueError("query has no observed entries")
    if q.indices.shape[1] != model.order - 1:
        raise ShapeError(
            f"query rows must index {model.order - 1} modes, "
            f"got {q.indices.shape[1]}"
        )
    for n in range(1, model.order):
        col = q.indices[:, n - 1]
        if col.min() < 0 or col.max() >= model.dims[n]:
            raise ShapeError(f"mode {n}: query index outside 0..{model.dims[n] - 1}")

    a = _design_rows(model, q)
    u = np.zeros(model.core_dims[0])
    eta = config.learning_rate
    rng = np.random.default_rng(config.seed)
    for _ in range(config.fold_in_epochs):
        for e in rng.permutation(q.size):
            residual = u @ a[e] - q.values[e]
            u -= eta * (residual * a[e] + ridge * u)
        if not np.isfinite(u).all():
            raise DivergenceError(
                "fold-in produced non-finite values; reduce the learning rate"
            )
    return u


def query_residual_norm(model, q, u):
    """Norm of the query fit residual for a candidate mode-0 row."""
    a = _design_rows(model, q)
    return float(np.linalg.norm(a @ u - q.values))


def top_k(model, u_q, k):
    """The k mode-0 rows nearest to ``u_q``, as (entity, distance) pairs.

    Euclidean distance, ascending; ties broken by ascending entity index.
    """
    u = model.factors[0]
    if not 1 <= k <= u.shape[0]:
        raise ValueError(f"k must lie in 1..{u.shape[0]}, got {k}")
    u_q = np.asarray(u_q, dtype=np.float64)
    if u_q.shape != (u.shape[1],):
        raise ShapeError(
            f"query factor length {u_q.shape} does not match {u.shape[1]}"
        )
    dist = np.linalg.norm(u - u_q, axis=1)
    order = np.argsort(dist, kind="stable")[:k]
    return [(int(i), float(dist[i])) for i in order]


def subtype_matrix(model, u):
    """Weight matrix S for one entity profile ``u`` of a 3-mode model."""
    if model.order != 3:
        raise ShapeError(
            f"subtype matrices are defined for 3-mode models, got order "
            f"{model.order}"
        )
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (model.core_dims[0],):
        raise ShapeError(
            f"profile length {u.shape} does not match core dim "
            f"{model.core_dims[0]}"
        )
    s = np.tensordot(u, model.core, axes=(0, 0))
    row_influence = np.linalg.norm(s, axis=1)
    platform_influence = np.linalg.norm(s @ model.factors[2].T, axis=0)
    return SubtypeMatrix(s, row_influence, platform_influence)


def _kmeans_pp(rows, k, rng):
    n = rows.shape[0]
    centroids = np.empty((k, rows.shape[1]))
    centroids[0] = rows[rng.integers(n)]
    d2 = np.sum((rows - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centroids[j] = rows[pick]
        d2 = np.minimum(d2, np.sum((rows - centroids[j]) ** 2, axis=1))
    return centroids


def _squared_distances(rows, centroids):
    d2 = (
        np.sum(rows**2, axis=1)[:, None]
        - 2.0 * rows @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans(rows, k, seed=0, max_iters=300):
    """Lloyd's algorithm from k-means++ seeding.

    Stops when the assignment vector stabilizes or after ``max_iters``
    rounds.  A cluster that comes up empty is reseeded with the point
    currently farthest from its own centroid.  Returns ``(assignments,
    centroids)``.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ShapeError("rows must form a 2-D array")
    n = rows.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(rows, k, rng)
    assign = None
    for _ in range(max_iters):
        d2 = _squared_distances(rows, centroids)
        new_assign = np.argmin(d2, axis=1)
        own = d2[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=k)
        for c in np.flatnonzero(counts == 0):
            p = int(np.argmax(own))
            centroids[c] = rows[p]
            new_assign[p] = c
            own[p] = 0.0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = rows[assign == c]
            if members.shape[0]:
                centroids[c] = members.mean(axis=0)
    return assign, centroids


def within_dispersion(rows, assignments, centroids):
    """Total within-cluster sum of squared distances to the centroids."""
    rows = np.asarray(rows, dtype=np.float64)
    diff = rows - centroids[assignments]
    return float(np.sum(diff * diff))


@dataclass
class GapResult:
    """Gap values per candidate k and the selected cluster count.

    ``table`` rows are (k, gap, standard_error); ``selected_k`` is the
    smallest k with gap(k) >= gap(k+1) - se(k+1), falling back to the largest
    candidate when no k satisfies the rule.
    """

    table: list
    selected_k: int


def gap_statistic(rows, k_min, k_max, b, seed=0):
    """Cluster-count selection by comparing dispersion against uniform nulls.

    For each candidate k the log within-cluster dispersion of the data is
    compared with the mean over ``b`` reference datasets drawn uniformly from
    the bounding box of ``rows`` (Tibshirani, Walther & Hastie, 2001).
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ShapeError("rows must form a 2-D array")
    if k_min < 1 or k_max < k_min or k_max > rows.shape[0]:
        raise ValueError(f"invalid cluster range {k_min}..{k_max}")
    if b < 1:
        raise ValueError("at least one reference draw is required")
    if np.all(rows == rows[0]):
        # zero dispersion at every k; one cluster describes the data
        return GapResult([], 1)

    rng = np.random.default_rng(seed)
    ks = list(range(k_min, k_max + 1))

    def log_dispersion(data, k, kseed):
        assign, centroids = kmeans(data, k, seed=kseed)
        return np.log(max(within_dispersion(data, assign, centroids), 1e-300))

    log_w = np.array(
        [log_dispersion(rows, k, int(rng.integers(2**31))) for k in ks]
    )
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    ref_log_w = np.empty((b, len(ks)))
    for i in range(b):
        ref = lo + rng.random(rows.shape) * (hi - lo)
        ref_log_w[i] = [
            log_dispersion(ref, k, int(rng.integers(2**31))) for k in ks
        ]
    gaps = ref_log_w.mean(axis=0) - log_w
    se = ref_log_w.std(axis=0) * np.sqrt(1.0 + 1.0 / b)

    selected = ks[-1]
    for i in range(len(ks) - 1):
        if gaps[i] >= gaps[i + 1] - se[i + 1]:
            selected = ks[i]
            break
    table = [(ks[i], float(gaps[i]), float(se[i])) for i in range(len(ks))]
    return GapResult(table, selected)
