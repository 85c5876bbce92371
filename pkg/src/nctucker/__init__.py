"""Network-constrained sparse Tucker decomposition and its query tools."""

from .analytics import (
    GapResult,
    QuerySlice,
    SubtypeMatrix,
    fold_in,
    gap_statistic,
    kmeans,
    subtype_matrix,
    top_k,
    within_dispersion,
)
from .engine import (
    METRICS_HEADER,
    TrainReport,
    orthogonalize,
    train,
    update_from_network_edge,
    update_from_tensor_entry,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    ModelArchiveError,
    NormalizationError,
    ShapeError,
)
from .io import (
    DatasetBundle,
    ModelArchive,
    load_model,
    load_network,
    load_query_slice,
    load_sparse_tensor,
    normalize_slices,
    save_model,
    save_network,
    save_sparse_tensor,
)
from .model import (
    ObjectiveValues,
    TrainConfig,
    TuckerModel,
    init_random,
    objective,
    reconstruct_entries,
    reconstruct_entry,
)
from .tensors import (
    ConstraintGraph,
    SparseTensor,
    frobenius_norm,
    mode_gradient_vector,
    mode_n_product,
    scaled_core,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConstraintGraph",
    "DataFormatError",
    "DatasetBundle",
    "DivergenceError",
    "GapResult",
    "METRICS_HEADER",
    "ModelArchive",
    "ModelArchiveError",
    "NormalizationError",
    "ObjectiveValues",
    "QuerySlice",
    "ShapeError",
    "SparseTensor",
    "SubtypeMatrix",
    "TrainConfig",
    "TrainReport",
    "TuckerModel",
    "fold_in",
    "frobenius_norm",
    "gap_statistic",
    "init_random",
    "kmeans",
    "load_model",
    "load_network",
    "load_query_slice",
    "load_sparse_tensor",
    "mode_gradient_vector",
    "mode_n_product",
    "normalize_slices",
    "objective",
    "orthogonalize",
    "reconstruct_entries",
    "reconstruct_entry",
    "save_model",
    "save_network",
    "save_sparse_tensor",
    "scaled_core",
    "subtype_matrix",
    "top_k",
    "train",
    "update_from_network_edge",
    "update_from_tensor_entry",
    "within_dispersion",
]
