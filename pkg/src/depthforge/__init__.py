"""Depth compression planning and convolution kernel fusion.

The package plans which activation layers and convolution layers of a CNN
chain to remove under a latency budget, using exact dynamic programming over
lookup tables, and materializes the resulting merged convolution kernels
with verified functional equivalence.
"""

from .arch import (
    DEPTHWISE_CONV,
    STANDARD_CONV,
    LayerDescriptor,
    NetworkDescriptor,
    compute_irreducible,
    derive_stride_barriers,
    load_network,
    network_to_doc,
    parse_network,
)
from .errors import (
    DepthforgeError,
    DescriptorError,
    InfeasibleBudgetError,
    KeepSetError,
    MergeError,
    TableError,
)
from .kernels import (
    BatchNormParams,
    KernelTensor,
    conv_reference,
    fold_batchnorm,
    identity_kernel,
    merge_pair,
    merge_sequence,
    merged_kernel_size,
    merged_kernel_size_strided,
)
from .keepsets import KeepSetSolution, extend_sets, solve_keep_set
from .planner import (
    LAYER_MERGE,
    LAYER_ONLY,
    DPState,
    MergePlan,
    PlanReport,
    Segment,
    run_recurrence,
    solve,
    solve_layer_only,
    validate_plan,
)
from .tables import (
    AnalyticLatencyProvider,
    BudgetSpec,
    CostTables,
    LatencyProvider,
    MergedLayerQuery,
    RawPerfMeasurement,
    TableLatencyProvider,
    build_importance_table,
    build_latency_table,
    default_discretization,
    discretize,
    enumerate_kernel_keys,
    enumerate_kernel_sizes,
    iter_table_keys,
    segment_query,
)
from .bruteforce import (
    OracleResult,
    brute_force_keep_set,
    brute_force_knapsack,
    brute_force_plan,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticLatencyProvider",
    "BatchNormParams",
    "BudgetSpec",
    "CostTables",
    "DEPTHWISE_CONV",
    "DPState",
    "DepthforgeError",
    "DescriptorError",
    "InfeasibleBudgetError",
    "KeepSetError",
    "KeepSetSolution",
    "KernelTensor",
    "LAYER_MERGE",
    "LAYER_ONLY",
    "LatencyProvider",
    "LayerDescriptor",
    "MergeError",
    "MergePlan",
    "MergedLayerQuery",
    "NetworkDescriptor",
    "OracleResult",
    "PlanReport",
    "RawPerfMeasurement",
    "STANDARD_CONV",
    "Segment",
    "TableError",
    "TableLatencyProvider",
    "brute_force_keep_set",
    "brute_force_knapsack",
    "brute_force_plan",
    "build_importance_table",
    "build_latency_table",
    "compute_irreducible",
    "conv_reference",
    "default_discretization",
    "derive_stride_barriers",
    "discretize",
    "enumerate_kernel_keys",
    "enumerate_kernel_sizes",
    "extend_sets",
    "fold_batchnorm",
    "identity_kernel",
    "iter_table_keys",
    "load_network",
    "merge_pair",
    "merge_sequence",
    "merged_kernel_size",
    "merged_kernel_size_strided",
    "network_to_doc",
    "parse_network",
    "run_recurrence",
    "segment_query",
    "solve",
    "solve_keep_set",
    "solve_layer_only",
    "validate_plan",
]
