"""Mixed discrete/continuous representation of eVTOL designs."""

from .features import (
    FEATURE_INDEX,
    FEATURE_KEYS,
    FEATURE_TABLE_VERSION,
    FEATURES,
    IS_COUNT,
    LOWER,
    N_FEATURES,
    UPPER,
    FeatureSpec,
    clamp_to_prior,
    slot,
    slots,
)
from .flatten import FlatDesign, flatten, unflatten, unflatten_design
from .feasibility import (
    FeasibilityReport,
    boom_bending_stress,
    geometric_feasibility,
    structural_feasibility,
    wing_bending_stress,
)
from .geometry import Layout, compute_layout, planform_outline
from .prior import sample_design, truncated_poisson
from .topology import (
    MASK_TOKEN,
    N_TOPOLOGIES,
    VOCAB_SIZE,
    Topology,
    enumerate_topologies,
    mask_for_topology,
    topology_from_index,
    topology_of,
)
from .tree import Aircraft, tree_from_dict, tree_to_dict

__all__ = [
    "FEATURE_INDEX",
    "FEATURE_KEYS",
    "FEATURE_TABLE_VERSION",
    "FEATURES",
    "IS_COUNT",
    "LOWER",
    "N_FEATURES",
    "UPPER",
    "FeatureSpec",
    "clamp_to_prior",
    "slot",
    "slots",
    "FlatDesign",
    "flatten",
    "unflatten",
    "unflatten_design",
    "FeasibilityReport",
    "boom_bending_stress",
    "geometric_feasibility",
    "structural_feasibility",
    "wing_bending_stress",
    "Layout",
    "compute_layout",
    "planform_outline",
    "sample_design",
    "truncated_poisson",
    "MASK_TOKEN",
    "N_TOPOLOGIES",
    "VOCAB_SIZE",
    "Topology",
    "enumerate_topologies",
    "mask_for_topology",
    "topology_from_index",
    "topology_of",
    "Aircraft",
    "tree_from_dict",
    "tree_to_dict",
]
