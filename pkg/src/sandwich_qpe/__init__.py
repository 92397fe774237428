"""Estimation of the phase of <psi|U^k|psi> by sandwiched selective phase
rotations recursed over random binary sum trees, with shot-noise-faithful
measurement simulation, a sequential baseline, a dense brute-force oracle,
and an analytic circuit-depth cost model."""

from .costmodel import DepthParams, depth_hadamard, depth_sandwich, runtime_summary
from .dense import (
    DenseState,
    DenseUnitary,
    random_dense_instance,
    sandwich_matrix,
    spectralize,
    sprotis,
    two_layer_matrix,
)
from .estimators import (
    AmbiguityError,
    BudgetPolicy,
    DegenerateNodeError,
    EstimateReport,
    NodeEstimate,
    ShotPlan,
    allocate_shots,
    estimate_omega,
    sandwich_test,
    sequential_baseline,
    two_layer_estimate,
)
from .measurement import (
    PowerObservable,
    RngStream,
    SandwichObservable,
    TwoLayerObservable,
    UsageLedger,
    estimate_magnitude,
    hadamard_test_estimate,
    sample_overlap_probability,
)
from .spectral import (
    Amplitude,
    SpectralModel,
    angular_distance,
    exact_amplitude,
    exact_sandwich_magnitude,
    generate_model,
    load_model,
    save_model,
    wrap_angle,
)
from .sumtree import (
    SplitPolicy,
    SumTree,
    TreeNode,
    build_tree,
    count_ones_leaves,
    degenerate_chain_tree,
    nontrivial_nodes,
    tree_smin,
)

__version__ = "0.1.0"
