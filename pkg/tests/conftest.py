import numpy as np
import pytest

from nctucker import SparseTensor, TuckerModel


def random_model(rng, dims, core_dims, scale=1.0):
    core = rng.random(core_dims) * scale
    factors = [rng.random((i, j)) * scale for i, j in zip(dims, core_dims)]
    return TuckerModel(core, factors)


def random_sparse(rng, dims, nnz):
    """Sparse tensor with nnz distinct cells and standard-uniform values."""
    total = int(np.prod(dims))
    flat = rng.permutation(total)[:nnz]
    indices = np.stack(np.unravel_index(flat, dims), axis=1)
    return SparseTensor(dims, indices, rng.random(nnz))


def planted_observations(rng, model, fraction):
    """Sample a fraction of all cells and fill them from the model."""
    from nctucker import reconstruct_entries

    dims = model.dims
    total = int(np.prod(dims))
    flat = rng.permutation(total)[: int(fraction * total)]
    indices = np.stack(np.unravel_index(flat, dims), axis=1).astype(np.int64)
    values = reconstruct_entries(model, indices)
    return indices, values


def planted_instance(seed, dims=(50, 40, 5), core_dims=(4, 3, 2), fraction=0.3):
    """Noiseless synthetic: standard-normal model, values rescaled to unit std.

    Returns (generator model, observed index array, observed values).
    """
    from nctucker import reconstruct_entries

    rng = np.random.default_rng(seed)
    model = TuckerModel(
        rng.standard_normal(core_dims),
        [rng.standard_normal((i, j)) for i, j in zip(dims, core_dims)],
    )
    indices, values = planted_observations(rng, model, fraction)
    scale = 1.0 / values.std()
    model.core *= scale
    values *= scale
    return model, indices, values


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
