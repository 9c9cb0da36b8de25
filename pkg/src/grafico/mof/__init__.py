"""Combinatorial MOF design: dedup, assembly, porosity, and candidate search."""

from .design import (
    ASSIGNMENT_THRESHOLD,
    AssignmentCheck,
    AssignmentRejected,
    AtomsDocument,
    BuildQueueItem,
    BuildingBlock,
    CELL_SCALE_DEFAULT,
    ConnectionCountMismatch,
    ConstructedMOF,
    DEDUP_RMSD_TOL,
    FINGERPRINT_QUANTUM,
    GRAFICO_NS,
    LocalStructure,
    MOFS_NS,
    MetalNode,
    OrganicLinker,
    PorosityDescriptors,
    PorosityDocument,
    ScopeViolation,
    Topology,
    assemble_mock_mof,
    dedup_building_blocks,
    fragment_fingerprint,
    framework_mass,
    mof_ontology,
    structure_text,
    validate_assignment,
)
from .porosity import ATOM_RADIUS, GRID_SPACING, NonPeriodic, PROBE_RADIUS, mock_porosity
from .search import (
    Candidate,
    load_template,
    propose_cross_topology,
    propose_intra_topology,
)

__all__ = [
    "ASSIGNMENT_THRESHOLD",
    "ATOM_RADIUS",
    "AssignmentCheck",
    "AssignmentRejected",
    "AtomsDocument",
    "BuildQueueItem",
    "BuildingBlock",
    "CELL_SCALE_DEFAULT",
    "Candidate",
    "ConnectionCountMismatch",
    "ConstructedMOF",
    "DEDUP_RMSD_TOL",
    "FINGERPRINT_QUANTUM",
    "GRAFICO_NS",
    "GRID_SPACING",
    "LocalStructure",
    "MOFS_NS",
    "MetalNode",
    "NonPeriodic",
    "OrganicLinker",
    "PROBE_RADIUS",
    "PorosityDescriptors",
    "PorosityDocument",
    "ScopeViolation",
    "Topology",
    "assemble_mock_mof",
    "dedup_building_blocks",
    "fragment_fingerprint",
    "framework_mass",
    "load_template",
    "mock_porosity",
    "mof_ontology",
    "propose_cross_topology",
    "propose_intra_topology",
    "structure_text",
    "validate_assignment",
]
