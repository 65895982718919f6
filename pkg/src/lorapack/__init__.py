"""lorapack: cluster N single-task LoRA adapters into K merged multi-task adapters."""

from ._kernels import active_backend
from .clustering import FeatureMatrix, KMeansResult, features_flat, features_svd, kmeans
from .errors import (
    AdapterFormatError,
    ConfigError,
    LorapackError,
    OracleError,
    SchemaError,
    SearchError,
)
from .merge import MergeConfig, dare_merge, linear_merge, merge, ties_merge
from .metrics import adjusted_rand_index, purity
from .oracle import (
    CachedOracle,
    CommandOracle,
    EvalCache,
    LossOracle,
    SyntheticOracle,
    SyntheticTaskModel,
    cached,
    synthetic_generate,
)
from .partition import (
    PartitionMap,
    dirichlet_partition,
    random_partition,
    read_partition_manifest,
    storage_fraction,
    write_partition_manifest,
)
from .search import (
    PartitionEvaluation,
    SearchConfig,
    SearchTrace,
    TraceRecord,
    d2c_run,
    evaluate_partition,
)
from .store import (
    read_adapter,
    read_adapter_set,
    write_adapter,
    write_adapter_set,
)
from .tensors import (
    AdapterMeta,
    AdapterSet,
    LoraAdapter,
    Schema,
    TensorMap,
    flatten,
    lora_schema,
    schema_dim,
    unflatten,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterFormatError",
    "AdapterMeta",
    "AdapterSet",
    "CachedOracle",
    "CommandOracle",
    "ConfigError",
    "EvalCache",
    "FeatureMatrix",
    "KMeansResult",
    "LoraAdapter",
    "LorapackError",
    "LossOracle",
    "MergeConfig",
    "OracleError",
    "PartitionEvaluation",
    "PartitionMap",
    "Schema",
    "SchemaError",
    "SearchConfig",
    "SearchError",
    "SearchTrace",
    "SyntheticOracle",
    "SyntheticTaskModel",
    "TensorMap",
    "TraceRecord",
    "active_backend",
    "adjusted_rand_index",
    "cached",
    "d2c_run",
    "dare_merge",
    "dirichlet_partition",
    "evaluate_partition",
    "features_flat",
    "features_svd",
    "flatten",
    "kmeans",
    "linear_merge",
    "lora_schema",
    "merge",
    "purity",
    "random_partition",
    "read_adapter",
    "read_adapter_set",
    "read_partition_manifest",
    "schema_dim",
    "storage_fraction",
    "synthetic_generate",
    "ties_merge",
    "unflatten",
    "write_adapter",
    "write_adapter_set",
    "write_partition_manifest",
]
