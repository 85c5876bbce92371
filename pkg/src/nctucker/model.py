"""Tucker model container, entry reconstruction, and the training objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensors import ConstraintGraph, SparseTensor, scaled_core


@dataclass
class TrainConfig:
    """Hyperparameters for decomposition, fold-in, and the CLI.

    ``constrained_mode`` is 0-based.  ``lam`` weighs the L2 penalty on all
    parameters, ``lam_g`` the network penalty on the constrained mode's
    factor rows.  ``lr_decay`` applies the optional schedule
    eta_t = learning_rate / (1 + lr_decay * t); the default keeps eta
    constant.
    """

    core_dims: tuple = (2, 2, 2)
    learning_rate: float = 0.01
    lam: float = 0.0
    lam_g: float = 0.0
    threads: int = 1
    constrained_mode: int = 1
    max_epochs: int = 100
    tolerance: float = 1e-4
    seed: int = 0
    fold_in_epochs: int = 50
    lr_decay: float = 0.0

    def __post_init__(self):
        self.core_dims = tuple(int(j) for j in self.core_dims)

    def validate(self, dims):
        dims = tuple(dims)
        if len(self.core_dims) != len(dims):
            raise ConfigError(
                f"core_dims has {len(self.core_dims)} modes, data has {len(dims)}"
            )
        for n, (j, i) in enumerate(zip(self.core_dims, dims)):
            if not 1 <= j <= i:
                raise ConfigError(
                    f"mode {n}: core size {j} must lie in 1..{i} (data dim)"
                )
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lam < 0 or self.lam_g < 0:
            raise ConfigError("regularization factors must be nonnegative")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0 <= self.constrained_mode < len(dims):
            raise ConfigError(
                f"constrained_mode {self.constrained_mode} out of range"
            )
        if self.max_epochs < 1 or self.fold_in_epochs < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")


@dataclass
class TuckerModel:
    """Core tensor plus one factor matrix per mode.

    ``factors[n]`` has shape (I_n, J_n) with row i the latent profile of
    entity i in mode n; ``core`` has shape (J_1, ..., J_N).
    """

    core: np.ndarray
    factors: list = field(default_factory=list)

    def __post_init__(self):
        self.core = np.ascontiguousarray(self.core, dtype=np.float64)
        self.factors = [
            np.ascontiguousarray(u, dtype=np.float64) for u in self.factors
        ]
        if len(self.factors) != self.core.ndim:
            raise ShapeError(
                f"core has {self.core.ndim} modes but {len(self.factors)} "
                "factor matrices given"
            )
        for n, u in enumerate(self.factors):
            if u.ndim != 2 or u.shape[1] != self.core.shape[n]:
                raise ShapeError(
                    f"mode {n}: factor shape {u.shape} does not match core "
                    f"dim {self.core.shape[n]}"
                )

    @property
    def order(self):
        return self.core.ndim

    @property
    def dims(self):
        return tuple(u.shape[0] for u in self.factors)

    @property
    def core_dims(self):
        return self.core.shape

    def copy(self):
        return TuckerModel(self.core.copy(), [u.copy() for u in self.factors])


class ObjectiveValues(NamedTuple):
    f: float
    f_g: float
    f_opt: float


def init_random(dims, config):
    """Random model with all entries uniform on [0, 1/sqrt(max_n J_n)).

    Reproducible from ``config.seed``: the core is drawn first, then the
    factor matrices in mode order.
    """
    dims = tuple(int(d) for d in dims)
    config.validate(dims)
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(max(config.core_dims))
    core = rng.random(config.core_dims) * bound
    factors = [
        rng.random((i, j)) * bound for i, j in zip(dims, config.core_dims)
    ]
    return TuckerModel(core, factors)


def reconstruct_entry(model, index):
    """Model value at one cell: sum of the core scaled by the selected rows."""
    index = tuple(int(i) for i in index)
    if len(index) != model.order:
        raise IndexError(f"expected {model.order} indices, got {len(index)}")
    for n, (i, size) in enumerate(zip(index, model.dims)):
        if not 0 <= i < size:
            raise IndexError(f"mode {n}: index {i} outside 0..{size - 1}")
    rows = [model.factors[n][i] for n, i in enumerate(index)]
    return float(scaled_core(model.core, rows).sum())


def reconstruct_entries(model, indices, chunk=65536):
    """Vectorized reconstruction of many cells (rows of ``indices``)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != model.order:
        raise ShapeError(
            f"index array must be (m, {model.order}), got {indices.shape}"
        )
    out = np.empty(indices.shape[0])
    for lo in range(0, indices.shape[0], chunk):
        sl = indices[lo : lo + chunk]
        t = np.tensordot(model.factors[0][sl[:, 0]], model.core, axes=(1, 0))
        for n in range(1, model.order):
            rows = model.factors[n][sl[:, n]]
            t = np.einsum("mj...,mj->m...", t, rows)
        out[lo : lo + sl.shape[0]] = t
    return out


def objective(model, x, graph, config):
    """Evaluate the full training objective.

    Returns ``(f, f_g, f_opt)`` where ``f`` is the squared-error loss over
    observed entries plus the L2 penalty, ``f_g`` the network penalty of the
    constrained mode, and ``f_opt = f + lam_g * f_g``.

    Factor rows of entities that never occur in ``x`` receive no SGD updates
    and are likewise excluded from the L2 penalty, which keeps this value
    equal to the per-sample form the optimizer works on.
    """
    if not isinstance(x, SparseTensor):
        raise ShapeError("x must be a SparseTensor")
    if x.dims != model.dims:
        raise ShapeError(f"data dims {x.dims} do not match model dims {model.dims}")
    res = x.values - reconstruct_entries(model, x.indices)
    f = 0.5 * float(res @ res)
    if config.lam:
        reg = float(np.sum(model.core * model.core))
        for n in range(model.order):
            active = x.row_counts[n] > 0
            u = model.factors[n][active]
            reg += float(np.sum(u * u))
        f += 0.5 * config.lam * reg
    f_g = 0.0
    if graph is not None:
        if not isinstance(graph, ConstraintGraph):
            raise ShapeError("graph must be a ConstraintGraph or None")
        cmode = config.constrained_mode
        if graph.node_count != model.dims[cmode]:
            raise ShapeError(
                f"graph has {graph.node_count} nodes but mode {cmode} has "
                f"{model.dims[cmode]} entities"
            )
        if graph.edge_count:
            u = model.factors[cmode]
            d = u[graph.nodes[:, 0]] - u[graph.nodes[:, 1]]
            f_g = 0.5 * float(graph.weights @ np.einsum("ij,ij->i", d, d))
    return ObjectiveValues(f, f_g, f + config.lam_g * f_g)
