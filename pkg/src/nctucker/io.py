"""Text file formats, per-slice normalization, and model persistence.

Wire formats are whitespace-separated text with 1-based indices:

* Sparse tensor: header line ``N I_1 ... I_N``, then one entry per line as
  ``i_1 ... i_N value``.  Duplicate cells are rejected.
* Network: one edge per line as ``k1 k2 [weight]`` (weight defaults to 1.0);
  self-loops and repeated undirected pairs are rejected.
* Query slice: the tensor format of order N-1 whose dims must equal the
  model's dims for modes 2..N.

Model archives are directories holding a JSON manifest plus one ``.npy``
file per array, so a save/load round trip is bitwise exact.
"""

from __future__ import annotations

import json
from array import array
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .analytics import QuerySlice
from .errors import DataFormatError, ModelArchiveError, NormalizationError, ShapeError
from .model import TrainConfig, TuckerModel
from .tensors import ConstraintGraph, SparseTensor

ARCHIVE_VERSION = 1


@dataclass
class DatasetBundle:
    """A tensor with its optional constraint graph and entity labels.

    ``labels``, when present, maps a mode index to a list of entity names
    whose position is the entity's 0-based index (a bijection over the
    mode's entities).
    """

    tensor: SparseTensor
    graph: ConstraintGraph | None = None
    labels: dict | None = None

    def __post_init__(self):
        if self.labels is None:
            return
        for mode, names in self.labels.items():
            if not 0 <= mode < self.tensor.order:
                raise ShapeError(f"label table for unknown mode {mode}")
            size = self.tensor.dims[mode]
            if len(names) != size or len(set(names)) != size:
                raise ValueError(
                    f"mode {mode}: labels must name each of the {size} "
                    "entities exactly once"
                )


def load_sparse_tensor(path):
    """Parse the sparse tensor text format in one streaming pass."""
    path = Path(path)
    idx_buf = array("q")
    val_buf = array("d")
    line_of = array("q")
    dims = None
    with open(path, "rt", encoding="utf-8") as handle:
        lineno = 0
        for raw in handle:
            lineno += 1
            parts = raw.split()
            if not parts:
                continue
            if dims is None:
                dims = _parse_tensor_header(parts, path, lineno)
                continue
            order = len(dims)
            if len(parts) != order + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {order + 1} fields, "
                    f"got {len(parts)}"
                )
            try:
                cells = [int(p) for p in parts[:order]]
                value = float(parts[order])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            for n, i in enumerate(cells):
                if not 1 <= i <= dims[n]:
                    raise DataFormatError(
                        f"{path}:{lineno}: mode-{n + 1} index {i} "
                        f"outside 1..{dims[n]}"
                    )
            idx_buf.extend(i - 1 for i in cells)
            val_buf.append(value)
            line_of.append(lineno)
    if dims is None:
        raise DataFormatError(f"{path}: no header line found")
    indices = np.frombuffer(idx_buf, dtype=np.int64).reshape(-1, len(dims)).copy()
    values = np.frombuffer(val_buf, dtype=np.float64).copy()
    del idx_buf, val_buf
    _reject_duplicate_rows(indices, line_of, path, "entry")
    return SparseTensor(dims, indices, values, check_duplicates=False)


def save_sparse_tensor(tensor, path):
    """Write a tensor in the text format ``load_sparse_tensor`` reads."""
    with open(path, "wt", encoding="utf-8") as handle:
        dims = " ".join(str(d) for d in tensor.dims)
        handle.write(f"{tensor.order} {dims}\n")
        for row, value in zip(tensor.indices, tensor.values):
            cells = " ".join(str(i + 1) for i in row)
            handle.write(f"{cells} {float(value)!r}\n")


def load_network(path, node_count, constrained_mode=1):
    """Parse the edge-list text format into a ConstraintGraph."""
    path = Path(path)
    node_buf = array("q")
    w_buf = array("d")
    line_of = array("q")
    with open(path, "rt", encoding="utf-8") as handle:
        lineno = 0
        for raw in handle:
            lineno += 1
            parts = raw.split()
            if not parts:
                continue
            if len(parts) not in (2, 3):
                raise DataFormatError(
                    f"{path}:{lineno}: expected 'k1 k2 [weight]', "
                    f"got {len(parts)} fields"
                )
            try:
                k1 = int(parts[0])
                k2 = int(parts[1])
                weight = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            for k in (k1, k2):
                if not 1 <= k <= node_count:
                    raise DataFormatError(
                        f"{path}:{lineno}: node {k} outside 1..{node_count}"
                    )
            if k1 == k2:
                raise DataFormatError(f"{path}:{lineno}: self-loop on node {k1}")
            if weight < 0:
                raise DataFormatError(
                    f"{path}:{lineno}: negative weight {weight}"
                )
            node_buf.append(min(k1, k2) - 1)
            node_buf.append(max(k1, k2) - 1)
            w_buf.append(weight)
            line_of.append(lineno)
    nodes = np.frombuffer(node_buf, dtype=np.int64).reshape(-1, 2).copy()
    weights = np.frombuffer(w_buf, dtype=np.float64).copy()
    _reject_duplicate_rows(nodes, line_of, path, "undirected edge")
    return ConstraintGraph(node_count, nodes, weights, mode=constrained_mode)


def save_network(graph, path):
    """Write an edge list in the text format ``load_network`` reads."""
    with open(path, "wt", encoding="utf-8") as handle:
        for (k1, k2), weight in zip(graph.nodes, graph.weights):
            handle.write(f"{k1 + 1} {k2 + 1} {float(weight)!r}\n")


def load_query_slice(path, model):
    """Parse a query profile, validating it against the model's modes 2..N."""
    tensor = load_sparse_tensor(path)
    expected = model.dims[1:]
    if tensor.dims != expected:
        raise DataFormatError(
            f"{path}: query dims {tensor.dims} do not match the model's "
            f"non-query modes {expected}"
        )
    return QuerySlice(tensor.indices, tensor.values)


def _parse_tensor_header(parts, path, lineno):
    try:
        order = int(parts[0])
        dims = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if order < 1 or len(dims) != order:
        raise DataFormatError(
            f"{path}:{lineno}: header must read 'N I_1 ... I_N'"
        )
    if any(d < 1 for d in dims):
        raise DataFormatError(f"{path}:{lineno}: dims must be positive")
    return dims


def _reject_duplicate_rows(rows, line_of, path, what):
    if rows.shape[0] < 2:
        return
    order = np.lexsort(rows.T[::-1])
    srt = rows[order]
    dup = np.flatnonzero(np.all(srt[1:] == srt[:-1], axis=1))
    if dup.size:
        i = dup[0]
        lineno = max(line_of[order[i]], line_of[order[i + 1]])
        raise DataFormatError(f"{path}:{lineno}: duplicate {what}")


def normalize_slices(tensor, slice_mode):
    """Min-max then unit-Frobenius normalization of each slice of one mode.

    Per slice (entries sharing one index along ``slice_mode``): values map
    through (v - min) / (max - min), then the slice is divided by its
    Frobenius norm.  A constant slice maps to all zeros and skips the norm
    division.  Every slice must contain at least one entry.
    """
    if not 0 <= slice_mode < tensor.order:
        raise ShapeError(f"mode {slice_mode} out of range")
    counts = tensor.row_counts[slice_mode]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise NormalizationError(
            f"slice {empty[0] + 1} (1-based) along mode {slice_mode} has "
            "no entries"
        )
    col = tensor.indices[:, slice_mode]
    order = np.argsort(col, kind="stable")
    starts = np.zeros(counts.size, np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    sorted_vals = tensor.values[order]
    slice_of = col[order]
    mins = np.minimum.reduceat(sorted_vals, starts)
    span = np.maximum.reduceat(sorted_vals, starts) - mins
    keep = span > 0  # constant slices collapse to zero
    scaled = np.where(
        keep[slice_of],
        (sorted_vals - mins[slice_of]) / np.where(span > 0, span, 1.0)[slice_of],
        0.0,
    )
    norms = np.sqrt(np.add.reduceat(scaled * scaled, starts))
    scaled /= np.where(norms > 0, norms, 1.0)[slice_of]
    values = np.empty_like(tensor.values)
    values[order] = scaled
    return SparseTensor(
        tensor.dims, tensor.indices.copy(), values, check_duplicates=False
    )


@dataclass
class ModelArchive:
    """A persisted model with the config it was trained under."""

    model: TuckerModel
    config: TrainConfig
    version: int = ARCHIVE_VERSION


def save_model(model, config, path):
    """Persist a model to directory ``path`` (manifest + binary arrays)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": ARCHIVE_VERSION,
        "order": model.order,
        "dims": list(model.dims),
        "core_dims": list(model.core_dims),
        "config": asdict(config) | {"core_dims": list(config.core_dims)},
    }
    with open(path / "manifest.json", "wt", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    np.save(path / "core.npy", model.core)
    for n, factor in enumerate(model.factors):
        np.save(path / f"factor_{n + 1}.npy", factor)


def load_model(path):
    """Load a model archive, validating version and every shape."""
    path = Path(path)
    try:
        with open(path / "manifest.json", "rt", encoding="utf-8") as handle:
            manifest = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelArchiveError(f"{path}: cannot read manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != ARCHIVE_VERSION:
        raise ModelArchiveError(
            f"{path}: format version {version} is not supported "
            f"(expected {ARCHIVE_VERSION})"
        )
    dims = tuple(manifest["dims"])
    core_dims = tuple(manifest["core_dims"])

    def load_array(name, shape):
        try:
            arr = np.load(path / name)
        except (OSError, ValueError, EOFError) as exc:
            raise ModelArchiveError(f"{path}/{name}: corrupt array: {exc}") from None
        if arr.shape != shape:
            raise ModelArchiveError(
                f"{path}/{name}: shape {arr.shape} does not match manifest "
                f"{shape}"
            )
        return arr

    core = load_array("core.npy", core_dims)
    factors = [
        load_array(f"factor_{n + 1}.npy", (dims[n], core_dims[n]))
        for n in range(len(dims))
    ]
    config = TrainConfig(**manifest["config"])
    return ModelArchive(TuckerModel(core, factors), config, version)
