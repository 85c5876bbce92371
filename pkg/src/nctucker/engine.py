"""Lock-free parallel SGD over the interleaved stream of entries and edges.

Each epoch shuffles the union of the tensor's observed entries and the
graph's edges into one stream, splits it into ``threads`` contiguous chunks,
and lets one worker per chunk apply updates to the shared model without
locks.  Factor-row races are tolerated (they are rare for sparse data); the
core tensor is only ever written by worker 0.  Epoch boundaries are full
barriers: the objective is evaluated there single-threaded, and convergence
is declared when its relative change drops below ``config.tolerance``.

Single-threaded runs with a fixed seed are fully deterministic.

``update_from_tensor_entry`` and ``update_from_network_edge`` are the
readable single-step reference forms of what the JIT kernel in
:mod:`._kernels` executes; the test suite holds the two paths together.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DivergenceError, ShapeError
from .model import objective
from .tensors import mode_gradient_vector, mode_n_product, scaled_core

METRICS_HEADER = "epoch,f,f_g,f_opt,seconds"


@dataclass
class TrainReport:
    """Outcome of one training run."""

    epochs_run: int = 0
    converged: bool = False
    objective_trace: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    @property
    def final_objective(self):
        return self.objective_trace[-1] if self.objective_trace else None


def update_from_tensor_entry(model, entry, tensor, config, is_core_updater=False):
    """One SGD step for a single observed entry, in place.

    All mode gradients are computed from the same pre-update snapshots of the
    touched rows; the occurrence counts that scale the L2 term come from
    ``tensor``.  The core step is scaled by ``config.threads`` and applied
    only when ``is_core_updater`` is set.
    """
    index, x = entry
    index = tuple(int(i) for i in index)
    snaps = [model.factors[n][i].copy() for n, i in enumerate(index)]
    d = scaled_core(model.core, snaps)
    residual = d.sum() - x
    eta = config.learning_rate
    for n, i in enumerate(index):
        grad = mode_gradient_vector(model.core, snaps, n)
        reg = config.lam / tensor.row_counts[n][i]
        model.factors[n][i] = snaps[n] - eta * (residual * grad + reg * snaps[n])
    if is_core_updater:
        rank1 = np.ones(())
        for n, s in enumerate(snaps):
            rank1 = np.multiply.outer(rank1, s)
        reg = config.lam / tensor.nnz
        model.core -= (eta * config.threads) * (
            residual * rank1 + reg * model.core
        )


def update_from_network_edge(model, edge, config):
    """One symmetric SGD step for a graph edge, in place.

    Both rows of the constrained mode move toward each other using the same
    pre-update snapshots.
    """
    k1, k2, y = edge
    u = model.factors[config.constrained_mode]
    s1 = u[k1].copy()
    s2 = u[k2].copy()
    coef = config.learning_rate * config.lam_g * y
    u[k1] = s1 - coef * (s1 - s2)
    u[k2] = s2 - coef * (s2 - s1)


def orthogonalize(model):
    """QR post-processing: orthonormal factor columns, reconstruction kept.

    Each factor is replaced by its Q (signs fixed so R has a nonnegative
    diagonal) and R is folded into the core along the same mode, so every
    reconstructed entry is unchanged.  A rank-deficient factor still goes
    through, with a warning.
    """
    for n, u in enumerate(model.factors):
        q, r = np.linalg.qr(u)
        diag = np.diagonal(r)
        scale = float(np.abs(diag).max()) if diag.size else 0.0
        if scale == 0.0 or np.abs(diag).min() <= 1e-12 * scale:
            warnings.warn(
                f"factor for mode {n} is rank deficient; columns of Q "
                "spanning the null space are arbitrary",
                RuntimeWarning,
                stacklevel=2,
            )
        signs = np.where(diag < 0, -1.0, 1.0)
        q = q * signs
        r = r * signs[:, None]
        model.factors[n] = np.ascontiguousarray(q)
        model.core = mode_n_product(model.core, r, n)
    return model


def _attach_packed_storage(model):
    """Repoint the model's arrays at flat buffers shared with the kernel."""
    core = np.ascontiguousarray(model.core, dtype=np.float64).ravel().copy()
    model.core = core.reshape(model.core.shape)
    sizes = [u.size for u in model.factors]
    fac = np.empty(sum(sizes))
    fac_off = np.zeros(len(sizes), np.int64)
    pos = 0
    for n, u in enumerate(model.factors):
        fac_off[n] = pos
        fac[pos : pos + u.size] = u.ravel()
        model.factors[n] = fac[pos : pos + u.size].reshape(u.shape)
        pos += u.size
    return core, fac, fac_off


def train(model, x, graph, config, metrics=None):
    """Fit ``model`` to sparse tensor ``x`` under the graph constraint.

    ``graph`` may be None for unconstrained runs.  If ``metrics`` is a
    writable text stream, one CSV row per epoch is emitted
    (``epoch,f,f_g,f_opt,seconds``).  Ends with :func:`orthogonalize`.

    Raises DivergenceError if any parameter or objective value becomes
    non-finite at an epoch boundary.
    """
    config.validate(x.dims)
    if model.dims != x.dims:
        raise ShapeError(f"model dims {model.dims} do not match data {x.dims}")
    if tuple(model.core_dims) != config.core_dims:
        raise ShapeError(
            f"model core {model.core_dims} does not match config "
            f"{config.core_dims}"
        )
    cmode = config.constrained_mode
    if graph is not None and graph.node_count != x.dims[cmode]:
        raise ShapeError(
            f"graph has {graph.node_count} nodes but mode {cmode} has "
            f"{x.dims[cmode]} entities"
        )

    core_flat, fac, fac_off = _attach_packed_storage(model)
    core_strides = np.array(
        [int(s) // model.core.itemsize for s in model.core.strides], np.int64
    )
    fac_cols = np.array(config.core_dims, np.int64)
    rc = np.concatenate([np.maximum(c, 1) for c in x.row_counts])
    rc_off = np.zeros(model.order, np.int64)
    np.cumsum([c.size for c in x.row_counts[:-1]], out=rc_off[1:])

    if graph is not None and graph.edge_count:
        edge_nodes, edge_w = graph.nodes, graph.weights
    else:
        edge_nodes = np.zeros((0, 2), np.int64)
        edge_w = np.zeros(0)
    stream_len = x.nnz + edge_nodes.shape[0]

    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    if metrics is not None:
        metrics.write(METRICS_HEADER + "\n")
        metrics.flush()

    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        prev_f_opt = None
        for epoch in range(1, config.max_epochs + 1):
            tic = time.perf_counter()
            stream = rng.permutation(stream_len)
            eta = config.learning_rate / (1.0 + config.lr_decay * (epoch - 1))
            bounds = np.linspace(0, stream_len, config.threads + 1).astype(np.int64)
            args = (
                x.indices,
                x.values,
                edge_nodes,
                edge_w,
                core_flat,
                core_strides,
                fac,
                fac_off,
                fac_cols,
                rc,
                rc_off,
                x.nnz,
                eta,
                config.lam,
                config.lam_g,
                cmode,
                float(config.threads),
            )
            if pool is None:
                _kernels.run_chunk(stream, 0, stream_len, *args, True)
            else:
                futures = [
                    pool.submit(
                        _kernels.run_chunk, stream, bounds[w], bounds[w + 1],
                        *args, w == 0,
                    )
                    for w in range(config.threads)
                ]
                for fut in futures:
                    fut.result()

            f, f_g, f_opt = objective(model, x, graph, config)
            seconds = time.perf_counter() - tic
            if not (
                np.isfinite(f_opt)
                and np.isfinite(core_flat).all()
                and np.isfinite(fac).all()
            ):
                raise DivergenceError(
                    f"non-finite parameters after epoch {epoch}; "
                    "reduce the learning rate"
                )
            report.objective_trace.append((epoch, f, f_g, f_opt))
            report.epoch_seconds.append(seconds)
            report.epochs_run = epoch
            if metrics is not None:
                metrics.write(
                    f"{epoch},{f!r},{f_g!r},{f_opt!r},{seconds!r}\n"
                )
                metrics.flush()
            if prev_f_opt is not None:
                denom = max(abs(prev_f_opt), 1e-300)
                if abs(prev_f_opt - f_opt) / denom < config.tolerance:
                    report.converged = True
                    break
            prev_f_opt = f_opt
    finally:
        if pool is not None:
            pool.shutdown()

    orthogonalize(model)
    return report
