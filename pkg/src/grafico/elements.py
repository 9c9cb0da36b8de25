"""Element data: symbols, masses, metal classification, Hill formulas."""

from __future__ import annotations

from collections import Counter
from typing import Iterable

# Z = 0 is reserved for docking-point pseudo-atoms ("X").
SYMBOLS = [
    "X",
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr",
]

SYMBOL_TO_Z = {sym: z for z, sym in enumerate(SYMBOLS)}

# Standard atomic weights (u), rounded; index by Z. Pseudo-atoms are massless.
MASSES = [
    0.0,
    1.008, 4.003, 6.94, 9.012, 10.81, 12.011, 14.007, 15.999, 18.998, 20.180,
    22.990, 24.305, 26.982, 28.085, 30.974, 32.06, 35.45, 39.948, 39.098, 40.078,
    44.956, 47.867, 50.942, 51.996, 54.938, 55.845, 58.933, 58.693, 63.546, 65.38,
    69.723, 72.630, 74.922, 78.971, 79.904, 83.798, 85.468, 87.62, 88.906, 91.224,
    92.906, 95.95, 97.0, 101.07, 102.906, 106.42, 107.868, 112.414, 114.818, 118.710,
    121.760, 127.60, 126.904, 131.293, 132.905, 137.327, 138.905, 140.116, 140.908, 144.242,
    145.0, 150.36, 151.964, 157.25, 158.925, 162.500, 164.930, 167.259, 168.934, 173.045,
    174.967, 178.49, 180.948, 183.84, 186.207, 190.23, 192.217, 195.084, 196.967, 200.592,
    204.38, 207.2, 208.980, 209.0, 210.0, 222.0, 223.0, 226.0, 227.0, 232.038,
    231.036, 238.029, 237.0, 244.0, 243.0, 247.0, 247.0, 251.0, 252.0, 257.0,
    258.0, 259.0, 262.0,
]

# Alkali, alkaline-earth, transition, post-transition metals, lanthanides, actinides.
_METAL_RANGES = [
    (3, 4), (11, 13), (19, 31), (37, 50), (55, 84), (87, 103),
]
_NONMETAL_EXCEPTIONS = {5, 14, 32, 33, 34, 51, 52, 84, 85}  # metalloids/nonmetals inside ranges

METALS = frozenset(
    z
    for lo, hi in _METAL_RANGES
    for z in range(lo, hi + 1)
    if z not in _NONMETAL_EXCEPTIONS
)


class UnknownElementError(ValueError):
    """Atomic number without an entry in the element tables."""


def symbol_for(z: int) -> str:
    if not 0 <= z < len(SYMBOLS):
        raise UnknownElementError(f"no element with atomic number {z}")
    return SYMBOLS[z]


def mass_for(z: int) -> float:
    if not 0 <= z < len(MASSES):
        raise UnknownElementError(f"no element with atomic number {z}")
    return MASSES[z]


def is_metal(z: int) -> bool:
    return z in METALS


def hill_formula(atomic_numbers: Iterable[int]) -> str:
    """Hill-ordered chemical formula: C, then H, then other symbols alphabetically.

    Counts of one are omitted. Raises UnknownElementError for atomic numbers
    outside the element table and ValueError for pseudo-atoms (Z = 0).
    """
    counts = Counter(symbol_for(int(z)) for z in atomic_numbers)
    if "X" in counts:
        raise ValueError("pseudo-atoms (Z=0) have no place in a chemical formula")
    parts = []
    if "C" in counts:
        order = ["C"] + (["H"] if "H" in counts else [])
        order += sorted(s for s in counts if s not in ("C", "H"))
    else:
        order = sorted(counts)
    for sym in order:
        n = counts[sym]
        parts.append(sym if n == 1 else f"{sym}{n}")
    return "".join(parts)
