"""Sparse and dense tensor containers plus the multilinear primitives on them.

Dense tensors (the core and cached intermediates) are plain C-order float64
numpy arrays; factor matrices are 2-D arrays with one row per entity.  Sparse
tensors keep a coordinate list together with per-mode occurrence counts.

All mode and entity indices in this API are 0-based.  The 1-based convention
of the on-disk text formats is translated at the I/O layer (:mod:`.io`).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class SparseTensor:
    """Observed entries of an N-mode tensor in coordinate form.

    Attributes:
        dims: tuple of mode sizes (I_1, ..., I_N).
        indices: (nnz, N) int64 array of 0-based coordinates, no duplicates.
        values: (nnz,) float64 array of observed values.
        row_counts: per mode n, an int64 array of length I_n whose entry i is
            the number of observed entries with mode-n index i.
    """

    def __init__(self, dims, indices, values, *, check_duplicates=True):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d <= 0 for d in dims):
            raise ShapeError(f"tensor dims must be positive, got {dims}")
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if indices.ndim != 2 or indices.shape[1] != len(dims):
            raise ShapeError(
                f"index array must be (nnz, {len(dims)}), got {indices.shape}"
            )
        if values.shape != (indices.shape[0],):
            raise ShapeError(
                f"got {indices.shape[0]} index rows but {values.shape[0]} values"
            )
        for n, size in enumerate(dims):
            col = indices[:, n]
            if col.size and (col.min() < 0 or col.max() >= size):
                raise ShapeError(f"mode {n}: index outside 0..{size - 1}")
        if check_duplicates:
            dup = _first_duplicate_row(indices)
            if dup is not None:
                raise ValueError(f"duplicate entry index {tuple(indices[dup])}")
        self.dims = dims
        self.indices = indices
        self.values = values
        self.row_counts = [
            np.bincount(indices[:, n], minlength=dims[n]).astype(np.int64)
            for n in range(len(dims))
        ]

    @property
    def order(self):
        return len(self.dims)

    @property
    def nnz(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz})"


class ConstraintGraph:
    """Weighted undirected edges over the entities of one tensor mode.

    Edges are stored canonically with ``k1 < k2``; each undirected pair
    appears once.  ``mode`` is the 0-based tensor mode whose entities the
    graph constrains.
    """

    def __init__(self, node_count, nodes, weights=None, mode=1):
        node_count = int(node_count)
        if node_count <= 0:
            raise ShapeError(f"node_count must be positive, got {node_count}")
        nodes = np.ascontiguousarray(nodes, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(nodes.shape[0])
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if weights.shape != (nodes.shape[0],):
            raise ShapeError(
                f"got {nodes.shape[0]} edges but {weights.shape[0]} weights"
            )
        if nodes.size:
            if nodes.min() < 0 or nodes.max() >= node_count:
                raise ShapeError(f"edge endpoint outside 0..{node_count - 1}")
            if (nodes[:, 0] == nodes[:, 1]).any():
                raise ValueError("self-loops are not allowed")
            if (weights < 0).any():
                raise ValueError("edge weights must be nonnegative")
        nodes = np.stack([nodes.min(axis=1), nodes.max(axis=1)], axis=1)
        dup = _first_duplicate_row(nodes)
        if dup is not None:
            raise ValueError(f"duplicate undirected edge {tuple(nodes[dup])}")
        self.node_count = node_count
        self.nodes = nodes
        self.weights = weights
        self.mode = int(mode)

    @property
    def edge_count(self):
        return self.nodes.shape[0]

    def __repr__(self):
        return (
            f"ConstraintGraph(node_count={self.node_count}, "
            f"edges={self.edge_count}, mode={self.mode})"
        )


def _first_duplicate_row(rows):
    """Index (into ``rows``) of some row that repeats an earlier one, or None."""
    if rows.shape[0] < 2:
        return None
    order = np.lexsort(rows.T[::-1])
    srt = rows[order]
    dup = np.flatnonzero(np.all(srt[1:] == srt[:-1], axis=1))
    if dup.size == 0:
        return None
    a, b = order[dup[0]], order[dup[0] + 1]
    return max(a, b)


def mode_n_product(t, m, n):
    """Contract mode ``n`` of dense tensor ``t`` with matrix ``m``.

    ``m`` must have shape (K, t.shape[n]); the result has ``t``'s shape with
    mode ``n`` replaced by K:

        out[..., j, ...] = sum_i t[..., i, ...] * m[j, i]
    """
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if not 0 <= n < t.ndim:
        raise ShapeError(f"mode {n} out of range for order-{t.ndim} tensor")
    if m.ndim != 2 or m.shape[1] != t.shape[n]:
        raise ShapeError(
            f"mode {n}: matrix of shape {m.shape} cannot contract a "
            f"dimension of size {t.shape[n]}"
        )
    out = np.tensordot(m, t, axes=(1, n))
    return np.moveaxis(out, 0, n)


def scaled_core(g, rows):
    """Core ``g`` scaled elementwise by one factor row per mode.

    Returns D with D[j1,...,jN] = g[j1,...,jN] * prod_n rows[n][j_n].  The sum
    of all elements of D is the model's reconstruction of a single entry.
    """
    g = np.asarray(g, dtype=np.float64)
    if len(rows) != g.ndim:
        raise ShapeError(f"expected {g.ndim} rows, got {len(rows)}")
    d = g.copy()
    for n, row in enumerate(rows):
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (g.shape[n],):
            raise ShapeError(
                f"mode {n}: row length {row.shape} does not match core dim "
                f"{g.shape[n]}"
            )
        d *= row.reshape((1,) * n + (-1,) + (1,) * (g.ndim - n - 1))
    return d


def mode_gradient_vector(g, rows, n):
    """Mode-``n`` gradient direction of the single-entry reconstruction.

    Component j is the sum over all core elements with j_n = j of
    g[j1,...,jN] * prod_{m != n} rows[m][j_m].  The mode-``n`` row itself is
    excluded from the product (``rows[n]`` is ignored), so the result is
    well-defined even where that row has zeros.
    """
    g = np.asarray(g, dtype=np.float64)
    if not 0 <= n < g.ndim:
        raise ShapeError(f"mode {n} out of range for order-{g.ndim} tensor")
    if len(rows) != g.ndim:
        raise ShapeError(f"expected {g.ndim} rows, got {len(rows)}")
    d = g.copy()
    for m, row in enumerate(rows):
        if m == n:
            continue
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (g.shape[m],):
            raise ShapeError(
                f"mode {m}: row length {row.shape} does not match core dim "
                f"{g.shape[m]}"
            )
        d *= row.reshape((1,) * m + (-1,) + (1,) * (g.ndim - m - 1))
    axes = tuple(m for m in range(g.ndim) if m != n)
    return d.sum(axis=axes)


def frobenius_norm(x):
    """Square root of the sum of squared entries (stored entries if sparse)."""
    if isinstance(x, SparseTensor):
        return float(np.linalg.norm(x.values))
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64).ravel()))
