"""Typed execution graphs, knowledge-graph persistence and design search."""

from .atoms import (
    IRI,
    XYZ,
    ConceptualAtoms,
    ElectronicState,
    TokenGenerator,
    from_extxyz,
    to_extxyz,
    verify_electronic_state,
)
from .elements import hill_formula, is_metal
from .rmsd import ShapeMismatchError, kabsch_rmsd

__all__ = [
    "IRI",
    "XYZ",
    "ConceptualAtoms",
    "ElectronicState",
    "TokenGenerator",
    "from_extxyz",
    "to_extxyz",
    "verify_electronic_state",
    "hill_formula",
    "is_metal",
    "kabsch_rmsd",
    "ShapeMismatchError",
]
