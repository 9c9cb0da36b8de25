"""Framework-design domain types, deduplication, and mock assembly.

Building blocks carry real atoms plus Z=0 docking pseudo-atoms; topologies
list the local-structure roles their nets require. Assembly here is a fixed
cubic-lattice convention: it tests data flow and provenance, not
crystallography.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..atoms import IRI, ConceptualAtoms, ElectronicState, TokenGenerator, XYZ
from ..elements import MASSES, is_metal, symbol_for
from ..ogm import (
    ClassDescriptor,
    DataProperty,
    ObjectProperty,
    Ontology,
    mint_iri,
)
from ..rmsd import kabsch_rmsd

MOFS_NS = "https://elagente.ca/ontomof/"
GRAFICO_NS = "https://elagente.ca/grafico/"

_tokens = TokenGenerator()


class ScopeViolation(ValueError):
    """Current scope allows exactly one metal node and one organic linker."""


class ConnectionCountMismatch(ValueError):
    pass


class AssignmentRejected(ValueError):
    def __init__(self, rmsd: float, threshold: float):
        self.rmsd = rmsd
        self.threshold = threshold
        super().__init__(f"assignment rmsd {rmsd:.4f} exceeds threshold {threshold}")


@dataclass
class LocalStructure:
    instance_iri: IRI
    label: str = ""
    connection_points: Optional[XYZ] = None

    def __post_init__(self):
        if self.connection_points is not None and len(self.connection_points) < 2:
            raise ValueError("a local structure needs at least 2 connection points")


@dataclass
class BuildingBlock:
    instance_iri: IRI
    atoms: Optional[ConceptualAtoms] = None
    docking_points: Optional[XYZ] = None
    functions_as: list = field(default_factory=list)
    has_metal: bool = False
    name: str = ""

    def __post_init__(self):
        if self.docking_points is not None:
            if (np.asarray(self.docking_points.atomic_numbers) != 0).any():
                raise ValueError("docking points must be Z=0 pseudo-atoms")


@dataclass
class MetalNode(BuildingBlock):
    def __post_init__(self):
        super().__post_init__()
        if not self.has_metal:
            raise ValueError("MetalNode requires has_metal=True")


@dataclass
class OrganicLinker(BuildingBlock):
    def __post_init__(self):
        super().__post_init__()
        if self.has_metal:
            raise ValueError("OrganicLinker requires has_metal=False")


@dataclass
class Topology:
    instance_iri: IRI
    name: str = ""
    local_structures: list = field(default_factory=list)
    unique_node_types: list = field(default_factory=list)
    unique_edge_types: list = field(default_factory=list)


@dataclass(frozen=True)
class PorosityDescriptors:
    largest_cavity_diameter: float
    pore_limiting_diameter: float
    largest_free_path_diameter: float
    accessible_surface_area: float
    void_fraction: float

    def __post_init__(self):
        if self.pore_limiting_diameter > self.largest_cavity_diameter + 1e-9:
            raise ValueError("PLD cannot exceed LCD")
        if not 0.0 <= self.void_fraction <= 1.0:
            raise ValueError("void fraction must be within [0, 1]")


@dataclass
class ConstructedMOF:
    instance_iri: IRI
    name: str = ""
    source_topology: Optional[Topology] = None
    building_blocks_used: list = field(default_factory=list)
    atoms: Optional[ConceptualAtoms] = None
    structure_text: str = ""
    porosity: Optional[PorosityDescriptors] = None

    def __post_init__(self):
        if self.building_blocks_used:
            metals = sum(1 for b in self.building_blocks_used if b.has_metal)
            linkers = len(self.building_blocks_used) - metals
            if (metals, linkers) != (1, 1):
                raise ScopeViolation(
                    "exactly one metal node and one organic linker required, "
                    f"got {metals} and {linkers}"
                )


@dataclass(frozen=True)
class BuildQueueItem:
    topology: Topology
    node: BuildingBlock
    linker: BuildingBlock
    name: str


# --------------------------------------------------------------------------
# two-stage deduplication

FINGERPRINT_QUANTUM = 0.01
DEDUP_RMSD_TOL = 0.1


def fragment_fingerprint(fragment: XYZ) -> tuple:
    """Order-invariant cheap key: element counts + quantized pair distances."""
    numbers = np.asarray(fragment.atomic_numbers)
    counts = tuple(sorted(zip(*np.unique(numbers, return_counts=True))))
    positions = np.asarray(fragment.positions, dtype=float)
    n = len(positions)
    if n < 2:
        return counts, ()
    deltas = positions[:, None, :] - positions[None, :, :]
    dists = np.linalg.norm(deltas, axis=-1)[np.triu_indices(n, k=1)]
    quantized = tuple(sorted(int(round(d / FINGERPRINT_QUANTUM)) for d in dists))
    return counts, quantized


def _same_fragment(a: XYZ, b: XYZ, rmsd_tol: float) -> bool:
    if len(a) != len(b):
        return False
    try:
        return kabsch_rmsd(a, b, permute_same_element=True) <= rmsd_tol
    except ValueError:
        return False


def _fragment_to_block(fragment: XYZ, tokens: TokenGenerator) -> BuildingBlock:
    numbers = np.asarray(fragment.atomic_numbers)
    positions = np.asarray(fragment.positions, dtype=float)
    real = numbers > 0
    if not real.any():
        raise ValueError("fragment has no real atoms")
    atoms_part = XYZ(numbers[real], positions[real])
    dock_part = XYZ(numbers[~real], positions[~real]) if (~real).any() else None
    has_metal = any(is_metal(int(z)) for z in numbers[real])
    cls = MetalNode if has_metal else OrganicLinker
    class_name = "MetalNode" if has_metal else "OrganicLinker"
    atoms = ConceptualAtoms(
        instance_iri=mint_iri(GRAFICO_NS, "ConceptualAtoms", tokens),
        geometry=atoms_part,
        electronic=ElectronicState(),
        validate_electronic=False,
    )
    return cls(
        instance_iri=mint_iri(MOFS_NS, class_name, tokens),
        atoms=atoms,
        docking_points=dock_part,
        has_metal=has_metal,
    )


def dedup_building_blocks(
    fragments: list[XYZ],
    rmsd_tol: float = DEDUP_RMSD_TOL,
    tokens: Optional[TokenGenerator] = None,
) -> tuple[MetalNode, OrganicLinker]:
    """Collapse equivalent fragments, then classify into the two block roles.

    Stage 1 groups by fingerprint; stage 2 confirms with permutation-aware
    Kabsch RMSD inside multi-member groups. The current scope requires the
    survivors to be exactly one metal node and one organic linker.
    """
    if not fragments:
        raise ValueError("fragments must be non-empty")
    tokens = tokens or _tokens
    groups: dict[tuple, list[XYZ]] = {}
    for fragment in fragments:
        groups.setdefault(fragment_fingerprint(fragment), []).append(fragment)
    representatives: list[XYZ] = []
    for members in groups.values():
        kept: list[XYZ] = []
        for fragment in members:
            if not any(_same_fragment(fragment, seen, rmsd_tol) for seen in kept):
                kept.append(fragment)
        representatives.extend(kept)
    blocks = [_fragment_to_block(f, tokens) for f in representatives]
    metals = [b for b in blocks if b.has_metal]
    linkers = [b for b in blocks if not b.has_metal]
    if len(metals) != 1 or len(linkers) != 1:
        raise ScopeViolation(
            f"expected exactly one unique metal node and one unique organic "
            f"linker, found {len(metals)} and {len(linkers)}"
        )
    return metals[0], linkers[0]


# --------------------------------------------------------------------------
# assignment validation

ASSIGNMENT_THRESHOLD = 0.3


@dataclass(frozen=True)
class AssignmentCheck:
    ok: bool
    rmsd: float
    threshold: float


def _unit_mean_radius(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).mean()
    if radius < 1e-12:
        raise ValueError("degenerate connection geometry")
    return centered / radius


def validate_assignment(
    block: BuildingBlock,
    target: LocalStructure,
    threshold: float = ASSIGNMENT_THRESHOLD,
) -> AssignmentCheck:
    """Geometric fit of the block's docking points to the role's geometry.

    Both point sets are scaled to unit mean radius before the permutation-
    aware Kabsch comparison, so only shape matters.
    """
    if block.docking_points is None or target.connection_points is None:
        raise ValueError("both geometries must carry connection points")
    a = np.asarray(block.docking_points.positions, dtype=float)
    b = np.asarray(target.connection_points.positions, dtype=float)
    if len(a) != len(b):
        raise ConnectionCountMismatch(
            f"block has {len(a)} docking points, role needs {len(b)}"
        )
    zeros = np.zeros(len(a), dtype=int)
    rmsd = kabsch_rmsd(
        XYZ(zeros, _unit_mean_radius(a)),
        XYZ(zeros, _unit_mean_radius(b)),
        permute_same_element=True,
    )
    return AssignmentCheck(rmsd <= threshold, float(rmsd), threshold)


# --------------------------------------------------------------------------
# mock assembly

CELL_SCALE_DEFAULT = 10.0


def assemble_mock_mof(
    item: BuildQueueItem,
    cell_scale: float = CELL_SCALE_DEFAULT,
    threshold: float = ASSIGNMENT_THRESHOLD,
    tokens: Optional[TokenGenerator] = None,
) -> ConstructedMOF:
    """Deterministic cubic placement: node at the cell corner, linker copies
    at the three unique edge midpoints. Raises if the node fails geometric
    validation against any topology role it claims to fill."""
    tokens = tokens or _tokens
    claimed = {ls.instance_iri for ls in item.node.functions_as}
    for role in item.topology.local_structures:
        if role.instance_iri in claimed and role.connection_points is not None:
            check = validate_assignment(item.node, role, threshold)
            if not check.ok:
                raise AssignmentRejected(check.rmsd, threshold)

    node_atoms = item.node.atoms.geometry
    linker_atoms = item.linker.atoms.geometry
    numbers = [np.asarray(node_atoms.atomic_numbers)]
    positions = [np.asarray(node_atoms.positions, dtype=float)]
    half = cell_scale / 2.0
    for midpoint in ([half, 0.0, 0.0], [0.0, half, 0.0], [0.0, 0.0, half]):
        numbers.append(np.asarray(linker_atoms.atomic_numbers))
        positions.append(np.asarray(linker_atoms.positions, dtype=float) + midpoint)
    geometry = XYZ(np.concatenate(numbers), np.vstack(positions))
    atoms = ConceptualAtoms(
        instance_iri=mint_iri(GRAFICO_NS, "ConceptualAtoms", tokens),
        geometry=geometry,
        electronic=ElectronicState(),
        cell=np.eye(3) * cell_scale,
        periodic=(True, True, True),
        validate_electronic=False,
    )
    mof = ConstructedMOF(
        instance_iri=mint_iri(MOFS_NS, "ConstructedMOF", tokens),
        name=item.name,
        source_topology=item.topology,
        building_blocks_used=[item.node, item.linker],
        atoms=atoms,
        structure_text=structure_text(item.name, atoms),
    )
    return mof


def structure_text(name: str, atoms: ConceptualAtoms) -> str:
    """Minimal CIF-style document: cubic cell plus fractional coordinates."""
    cell = atoms.cell
    lengths = np.linalg.norm(cell, axis=1)
    lines = [
        f"data_{name or 'structure'}",
        f"_cell_length_a {lengths[0]:.4f}",
        f"_cell_length_b {lengths[1]:.4f}",
        f"_cell_length_c {lengths[2]:.4f}",
        "_cell_angle_alpha 90.0",
        "_cell_angle_beta 90.0",
        "_cell_angle_gamma 90.0",
        "loop_",
        "_atom_site_type_symbol",
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ]
    fractional = np.asarray(atoms.geometry.positions, dtype=float) / lengths
    fractional = fractional % 1.0
    for z, (x, y, w) in zip(atoms.geometry.atomic_numbers, fractional):
        lines.append(f"{symbol_for(int(z))} {x:.5f} {y:.5f} {w:.5f}")
    return "\n".join(lines) + "\n"


def framework_mass(atoms: ConceptualAtoms) -> float:
    return float(sum(MASSES[int(z)] for z in atoms.geometry.atomic_numbers))


# --------------------------------------------------------------------------
# OGM mapping

def _p(local: str) -> IRI:
    return IRI(MOFS_NS + local)


def _g(local: str) -> IRI:
    return IRI(GRAFICO_NS + local)


@dataclass
class AtomsDocument:
    """Flat, OGM-mappable image of a ConceptualAtoms instance."""

    instance_iri: IRI
    chemical_formula: str = ""
    atomic_numbers: Optional[list] = None
    positions: Optional[list] = None
    charge: int = 0
    spin_multiplicity: int = 1

    @classmethod
    def from_atoms(cls, atoms: ConceptualAtoms) -> "AtomsDocument":
        return cls(
            instance_iri=atoms.instance_iri,
            chemical_formula=atoms.chemical_formula,
            atomic_numbers=[int(z) for z in atoms.geometry.atomic_numbers],
            positions=np.asarray(atoms.geometry.positions, dtype=float).tolist(),
            charge=atoms.electronic.charge,
            spin_multiplicity=atoms.electronic.spin_multiplicity,
        )

    def to_atoms(self) -> ConceptualAtoms:
        return ConceptualAtoms(
            instance_iri=IRI(self.instance_iri),
            geometry=XYZ(np.asarray(self.atomic_numbers), np.asarray(self.positions)),
            electronic=ElectronicState(self.charge, self.spin_multiplicity),
            validate_electronic=False,
        )


@dataclass
class PorosityDocument:
    """Flat, OGM-mappable image of a PorosityDescriptors record."""

    instance_iri: IRI
    largest_cavity_diameter: float = 0.0
    pore_limiting_diameter: float = 0.0
    largest_free_path_diameter: float = 0.0
    accessible_surface_area: float = 0.0
    void_fraction: float = 0.0

    @classmethod
    def from_descriptors(
        cls, desc: PorosityDescriptors, instance_iri: IRI
    ) -> "PorosityDocument":
        return cls(
            instance_iri=instance_iri,
            largest_cavity_diameter=desc.largest_cavity_diameter,
            pore_limiting_diameter=desc.pore_limiting_diameter,
            largest_free_path_diameter=desc.largest_free_path_diameter,
            accessible_surface_area=desc.accessible_surface_area,
            void_fraction=desc.void_fraction,
        )

    def to_descriptors(self) -> PorosityDescriptors:
        return PorosityDescriptors(
            largest_cavity_diameter=self.largest_cavity_diameter,
            pore_limiting_diameter=self.pore_limiting_diameter,
            largest_free_path_diameter=self.largest_free_path_diameter,
            accessible_surface_area=self.accessible_surface_area,
            void_fraction=self.void_fraction,
        )


def mof_ontology() -> Ontology:
    """Class descriptors for the whole design domain under the shared IRIs."""
    onto = Ontology(IRI(MOFS_NS))
    onto.register(
        ClassDescriptor(
            _g("ConceptualAtoms"), "AtomsDocument", AtomsDocument,
            data_properties={
                "chemical_formula": DataProperty(_g("chemical_formula"), "string"),
                "atomic_numbers": DataProperty(_g("atomic_numbers"), "array"),
                "positions": DataProperty(_g("positions"), "array", large=True),
                "charge": DataProperty(_g("charge"), "integer"),
                "spin_multiplicity": DataProperty(_g("spin_multiplicity"), "integer"),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            _p("LocalStructure"), "LocalStructure", LocalStructure,
            data_properties={"label": DataProperty(_p("label"), "string")},
        )
    )
    block_data = {
        "has_metal": DataProperty(_p("has_metal"), "boolean"),
        "name": DataProperty(_p("name"), "string"),
    }
    onto.register(
        ClassDescriptor(
            _p("MetalNode"), "MetalNode", MetalNode,
            data_properties=dict(block_data),
            object_properties={
                "atoms": ObjectProperty(_p("atoms"), "AtomsDocument"),
                "functions_as": ObjectProperty(
                    _p("functions_as"), "LocalStructure", many=True
                ),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            _p("OrganicLinker"), "OrganicLinker", OrganicLinker,
            data_properties=dict(block_data),
            object_properties={
                "atoms": ObjectProperty(_p("atoms"), "AtomsDocument"),
                "functions_as": ObjectProperty(
                    _p("functions_as"), "LocalStructure", many=True
                ),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            _p("Topology"), "Topology", Topology,
            data_properties={"name": DataProperty(_p("name"), "string")},
            object_properties={
                "local_structures": ObjectProperty(
                    _p("local_structures"), "LocalStructure", many=True
                ),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            _p("PorosityDescriptors"), "PorosityDocument", PorosityDocument,
            data_properties={
                "largest_cavity_diameter": DataProperty(_p("lcd"), "double"),
                "pore_limiting_diameter": DataProperty(_p("pld"), "double"),
                "largest_free_path_diameter": DataProperty(_p("lfpd"), "double"),
                "accessible_surface_area": DataProperty(_p("asa"), "double"),
                "void_fraction": DataProperty(_p("void_fraction"), "double"),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            _p("ConstructedMOF"), "ConstructedMOF", ConstructedMOF,
            data_properties={
                "name": DataProperty(_p("name"), "string"),
                "structure_text": DataProperty(
                    _p("structure_text"), "string", large=True
                ),
            },
            object_properties={
                "source_topology": ObjectProperty(_p("source_topology"), "Topology"),
                "building_blocks_used": ObjectProperty(
                    _p("building_blocks_used"), "MetalNode", many=True
                ),
                "atoms": ObjectProperty(_p("atoms"), "AtomsDocument"),
                "porosity": ObjectProperty(_p("porosity"), "PorosityDocument"),
            },
        )
    )
    return onto
