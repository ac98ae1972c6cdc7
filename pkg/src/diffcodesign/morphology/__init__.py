from .components import (
    ComponentKind,
    ComponentAsset,
    DEFORMATION_CLASS,
    component_database,
)
from .grammar import DesignGraph, DesignNode, expand_grammar, default_rules
from .parameterization import (
    MergedCage,
    MorphologyParams,
    DesignPipeline,
    merge_cages,
    apply_high_level,
    high_level_jacobian,
    mesh_vertex_parameterization,
    single_finger_graph,
    two_finger_graph,
)

__all__ = [
    "ComponentKind", "ComponentAsset", "DEFORMATION_CLASS", "component_database",
    "DesignGraph", "DesignNode", "expand_grammar", "default_rules",
    "MergedCage", "MorphologyParams", "DesignPipeline", "merge_cages",
    "apply_high_level", "high_level_jacobian", "mesh_vertex_parameterization",
    "single_finger_graph", "two_finger_graph",
]
