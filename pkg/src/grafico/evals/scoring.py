"""Multi-dimensional numerical scoring of computed results against references.

A case declares only the dimensions it has references for; the composite is
the mean over declared dimensions. Thresholds: 0.01 Ha energy, 0.15 A RMSD,
0.1 Ha gap, 0.1 a.u. dipole norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from ..atoms import XYZ
from ..rmsd import kabsch_rmsd

DEFAULT_THRESHOLDS = {"energy": 0.01, "rmsd": 0.15, "gap": 0.1, "dipole": 0.1}


class MissingObservable(KeyError):
    """The result bundle lacks an observable the case declares."""


@dataclass(frozen=True)
class EvalCase:
    expected_parameters: Mapping[str, Any] = field(default_factory=dict)
    reference_energy: Optional[float] = None
    reference_geometry: Optional[XYZ] = None
    reference_gap: Optional[float] = None
    reference_dipole: Optional[tuple] = None
    expect_no_imaginary: bool = False
    thresholds: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_THRESHOLDS)
    )

    def __post_init__(self):
        if any(v <= 0 for v in self.thresholds.values()):
            raise ValueError("thresholds must be positive")

    def declared_dimensions(self) -> list[str]:
        dims = []
        if self.expected_parameters:
            dims.append("parameters")
        if self.reference_energy is not None:
            dims.append("energy")
        if self.reference_geometry is not None:
            dims.append("geometry")
        if self.reference_gap is not None or self.reference_dipole is not None:
            dims.append("electronic")
        if self.expect_no_imaginary:
            dims.append("no_imaginary")
        return dims


@dataclass(frozen=True)
class CompositeScore:
    dimensions: Mapping[str, bool]
    composite: float

    def __post_init__(self):
        if not self.dimensions:
            raise ValueError("at least one dimension must be evaluated")
        mean = sum(self.dimensions.values()) / len(self.dimensions)
        if abs(self.composite - mean) > 1e-12:
            raise ValueError("composite must equal the dimension mean")


def _observable(bundle: Mapping[str, Any], key: str) -> Any:
    if key not in bundle or bundle[key] is None:
        raise MissingObservable(key)
    return bundle[key]


def numerical_evaluate(bundle: Mapping[str, Any], case: EvalCase) -> CompositeScore:
    """Score a result bundle on every dimension the case declares.

    Bundle keys: parameters (mapping), energy, geometry (XYZ), gap,
    dipole (3-vector), n_imaginary.
    """
    thresholds = {**DEFAULT_THRESHOLDS, **dict(case.thresholds)}
    dims: dict[str, bool] = {}
    if case.expected_parameters:
        got = _observable(bundle, "parameters")
        dims["parameters"] = all(
            key in got and got[key] == value
            for key, value in case.expected_parameters.items()
        )
    if case.reference_energy is not None:
        energy = _observable(bundle, "energy")
        dims["energy"] = abs(energy - case.reference_energy) <= thresholds["energy"]
    if case.reference_geometry is not None:
        geometry = _observable(bundle, "geometry")
        rmsd = kabsch_rmsd(geometry, case.reference_geometry, permute_same_element=True)
        dims["geometry"] = rmsd <= thresholds["rmsd"]
    if case.reference_gap is not None or case.reference_dipole is not None:
        ok = True
        if case.reference_gap is not None:
            gap = _observable(bundle, "gap")
            ok = ok and abs(gap - case.reference_gap) <= thresholds["gap"]
        if case.reference_dipole is not None:
            dipole = np.asarray(_observable(bundle, "dipole"), dtype=float)
            delta = dipole - np.asarray(case.reference_dipole, dtype=float)
            ok = ok and float(np.linalg.norm(delta)) <= thresholds["dipole"]
        dims["electronic"] = ok
    if case.expect_no_imaginary:
        dims["no_imaginary"] = _observable(bundle, "n_imaginary") == 0
    if not dims:
        raise ValueError("case declares no dimensions")
    return CompositeScore(dims, sum(dims.values()) / len(dims))


class ConstantJudge:
    """Pluggable judge stub: always returns the configured score."""

    def __init__(self, score: float):
        self.score = score

    def __call__(self, bundle: Mapping[str, Any], case: EvalCase) -> float:
        return self.score
