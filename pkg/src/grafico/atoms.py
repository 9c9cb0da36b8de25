"""Canonical typed geometry containers and electronic-state verification.

``ConceptualAtoms`` is the single in-memory representation for molecular and
periodic systems shared by every other module. Instances are immutable after
construction and carry a stable ``IRI`` identifying them across the in-memory
state and the knowledge graph.
"""

from __future__ import annotations

import random
import re
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elements import hill_formula, symbol_for, SYMBOL_TO_Z

_BASE36 = "0123456789abcdefghijklmnopqrstuvwxyz"
_MINTED_RE = re.compile(r"^(?P<ns>.+)/(?P<cls>[A-Za-z_][A-Za-z0-9_]*)_(?P<suffix>[0-9a-z]+)$")


class IRI(str):
    """Absolute internationalized resource identifier."""

    def __new__(cls, value: str) -> "IRI":
        if not value or "://" not in value:
            raise ValueError(f"not an absolute IRI: {value!r}")
        return super().__new__(cls, value)

    @property
    def fragment(self) -> str:
        """Last path segment, used as a naming fallback."""
        return self.rsplit("/", 1)[-1]


class TokenGenerator:
    """Seedable generator of unique 8-character lowercase base-36 tokens."""

    def __init__(self, seed: Optional[int] = None, length: int = 8):
        self._rng = random.Random(seed)
        self._length = length
        self._issued: set[str] = set()
        self._lock = threading.Lock()

    def next_token(self) -> str:
        with self._lock:
            while True:
                token = "".join(self._rng.choice(_BASE36) for _ in range(self._length))
                if token not in self._issued:
                    self._issued.add(token)
                    return token


def is_minted_iri(iri: str) -> bool:
    return _MINTED_RE.match(iri) is not None


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class XYZ:
    """Atomic numbers plus an N x 3 position array (lengths in Å).

    Z = 0 is permitted only for docking-point pseudo-atoms.
    """

    atomic_numbers: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        z = _as_readonly(np.asarray(self.atomic_numbers, dtype=int))
        pos = _as_readonly(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pos.shape}")
        if len(z) != len(pos):
            raise ValueError(f"{len(z)} atomic numbers but {len(pos)} positions")
        if np.any(z < 0):
            raise ValueError("negative atomic number")
        object.__setattr__(self, "atomic_numbers", z)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.atomic_numbers)

    @property
    def has_pseudo_atoms(self) -> bool:
        return bool(np.any(self.atomic_numbers == 0))

    def symbols(self) -> list[str]:
        return [symbol_for(int(z)) for z in self.atomic_numbers]

    def translated(self, shift: Sequence[float]) -> "XYZ":
        return XYZ(self.atomic_numbers, self.positions + np.asarray(shift, dtype=float))


@dataclass(frozen=True)
class ElectronicState:
    charge: int = 0
    spin_multiplicity: int = 1

    def __post_init__(self):
        if self.spin_multiplicity < 1:
            raise ValueError("spin multiplicity must be >= 1")


def electronic_state_violations(geometry: XYZ, state: ElectronicState) -> list[str]:
    """Check the electron-count rules of a (geometry, state) pair.

    Returns an empty list when the state is admissible, otherwise one message
    per violated rule. The geometry must contain real atoms only.
    """
    if geometry.has_pseudo_atoms:
        raise ValueError("electronic state is defined for real atoms only")
    violations = []
    n_elec = int(geometry.atomic_numbers.sum()) - state.charge
    unpaired = state.spin_multiplicity - 1
    if n_elec < 0:
        violations.append(f"negative electron count: {n_elec}")
    elif n_elec < unpaired:
        violations.append(
            f"multiplicity {state.spin_multiplicity} needs {unpaired} unpaired "
            f"electrons but only {n_elec} are present"
        )
    elif (n_elec - unpaired) % 2 != 0:
        violations.append(
            f"electron-parity mismatch: {n_elec} electrons cannot host "
            f"{unpaired} unpaired electrons"
        )
    return violations


@dataclass(frozen=True)
class ConceptualAtoms:
    """Validated geometry container with a stable instance IRI."""

    instance_iri: IRI
    geometry: XYZ
    electronic: ElectronicState = field(default_factory=ElectronicState)
    cell: Optional[np.ndarray] = None
    periodic: tuple[bool, bool, bool] = (False, False, False)
    chemical_formula: str = field(init=False)
    validate_electronic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "instance_iri", IRI(self.instance_iri))
        if self.geometry.has_pseudo_atoms:
            raise ValueError("ConceptualAtoms holds real atoms only (Z >= 1)")
        periodic = tuple(bool(p) for p in self.periodic)
        if len(periodic) != 3:
            raise ValueError("periodic must have three flags")
        cell = self.cell
        if cell is not None:
            cell = _as_readonly(np.asarray(cell, dtype=float))
            if cell.shape != (3, 3):
                raise ValueError(f"cell must be 3 x 3, got {cell.shape}")
        if (cell is not None) != any(periodic):
            raise ValueError("cell present iff some periodic flag is true")
        if self.validate_electronic:
            violations = electronic_state_violations(self.geometry, self.electronic)
            if violations:
                raise ValueError("; ".join(violations))
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "chemical_formula", hill_formula(self.geometry.atomic_numbers))

    def __len__(self) -> int:
        return len(self.geometry)

    def with_positions(self, positions: np.ndarray, instance_iri: IRI) -> "ConceptualAtoms":
        """New instance with fresh geometry under a fresh IRI."""
        return ConceptualAtoms(
            instance_iri=instance_iri,
            geometry=XYZ(self.geometry.atomic_numbers, positions),
            electronic=self.electronic,
            cell=self.cell,
            periodic=self.periodic,
            validate_electronic=self.validate_electronic,
        )


def verify_electronic_state(atoms: ConceptualAtoms) -> list[str]:
    """Empty list when all electronic-state rules hold, else the violations."""
    return electronic_state_violations(atoms.geometry, atoms.electronic)


def to_extxyz(atoms: ConceptualAtoms) -> str:
    """Extended-XYZ text: count line, key=value metadata line, one row per atom."""
    meta = [
        f"charge={atoms.electronic.charge}",
        f"multiplicity={atoms.electronic.spin_multiplicity}",
        f'instance_iri="{atoms.instance_iri}"',
    ]
    if atoms.cell is not None:
        flat = " ".join(f"{v:.10g}" for v in atoms.cell.ravel())
        meta.append(f'Lattice="{flat}"')
        meta.append('pbc="' + " ".join("T" if p else "F" for p in atoms.periodic) + '"')
    lines = [str(len(atoms)), " ".join(meta)]
    for sym, pos in zip(atoms.geometry.symbols(), atoms.geometry.positions):
        lines.append(f"{sym} {pos[0]:.10f} {pos[1]:.10f} {pos[2]:.10f}")
    return "\n".join(lines) + "\n"


def _parse_meta(line: str) -> dict[str, str]:
    out = {}
    for m in re.finditer(r'(\S+?)=("([^"]*)"|\S+)', line):
        out[m.group(1)] = m.group(3) if m.group(3) is not None else m.group(2)
    return out


def from_extxyz(text: str) -> ConceptualAtoms:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValueError("truncated extended-XYZ text")
    n = int(lines[0].strip())
    meta = _parse_meta(lines[1])
    rows = lines[2 : 2 + n]
    if len(rows) != n:
        raise ValueError(f"expected {n} atom rows, found {len(rows)}")
    numbers, positions = [], []
    for row in rows:
        parts = row.split()
        numbers.append(SYMBOL_TO_Z[parts[0]])
        positions.append([float(v) for v in parts[1:4]])
    cell = None
    periodic = (False, False, False)
    if "Lattice" in meta:
        cell = np.array([float(v) for v in meta["Lattice"].split()]).reshape(3, 3)
        pbc = meta.get("pbc", "T T T").split()
        periodic = tuple(p == "T" for p in pbc)
    return ConceptualAtoms(
        instance_iri=IRI(meta["instance_iri"]),
        geometry=XYZ(np.array(numbers), np.array(positions)),
        electronic=ElectronicState(
            charge=int(meta.get("charge", 0)),
            spin_multiplicity=int(meta.get("multiplicity", 1)),
        ),
        cell=cell,
        periodic=periodic,
    )
