"""Grid-based mock porosity descriptors for periodic structures.

Distances are measured on a regular grid under the minimum-image convention
(orthogonal cells only). The descriptors follow common usage: LCD is the
largest cavity, PLD the bottleneck of the best axis-aligned channel, LFPD
the largest cavity on that channel. All of it is deliberately coarse; it
exists to rank mock structures reproducibly, not to reproduce literature
values.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ..atoms import ConceptualAtoms
from .design import PorosityDescriptors, framework_mass

GRID_SPACING = 0.5
ATOM_RADIUS = 1.2
PROBE_RADIUS = 1.0


class NonPeriodic(ValueError):
    """Porosity descriptors are defined for fully periodic structures only."""


def _cell_lengths(atoms: ConceptualAtoms) -> np.ndarray:
    cell = np.asarray(atoms.cell, dtype=float)
    if np.abs(cell - np.diag(np.diag(cell))).max() > 1e-9:
        raise ValueError("porosity grid requires an orthogonal cell")
    return np.diag(cell).copy()


def _distance_grid(atoms: ConceptualAtoms, spacing: float):
    """Min-image distance from every grid point to the nearest atom."""
    lengths = _cell_lengths(atoms)
    shape = tuple(max(2, int(round(L / spacing))) for L in lengths)
    axes = [(np.arange(n) + 0.5) / n * L for n, L in zip(shape, lengths)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    positions = np.asarray(atoms.geometry.positions, dtype=float)
    if len(positions) == 0:
        half_diag = float(np.linalg.norm(lengths / 2.0))
        return np.full(shape, half_diag), shape, lengths
    delta = grid[:, None, :] - (positions[None, :, :] % lengths)
    delta -= lengths * np.round(delta / lengths)
    dmin = np.linalg.norm(delta, axis=-1).min(axis=1)
    return dmin.reshape(shape), shape, lengths


def _percolates(dmin: np.ndarray, threshold: float, axis: int):
    """Cells with clearance >= threshold reachable from face 0; returns the
    reached set if it spans to the opposite face along ``axis``, else None.

    Transverse axes wrap periodically; the scan axis does not, so a spanning
    component is a genuine repeating channel.
    """
    mask = dmin >= threshold
    shape = mask.shape
    n = shape[axis]
    reached = np.zeros(shape, dtype=bool)
    queue: deque = deque()
    for idx in np.argwhere(mask.take(indices=0, axis=axis)):
        cell = list(idx)
        cell.insert(axis, 0)
        cell = tuple(cell)
        reached[cell] = True
        queue.append(cell)
    while queue:
        cell = queue.popleft()
        for ax in range(3):
            for step in (-1, 1):
                nxt = list(cell)
                nxt[ax] += step
                if ax == axis:
                    if not 0 <= nxt[ax] < n:
                        continue
                else:
                    nxt[ax] %= shape[ax]
                nxt = tuple(nxt)
                if mask[nxt] and not reached[nxt]:
                    reached[nxt] = True
                    queue.append(nxt)
    spans = reached.take(indices=n - 1, axis=axis).any()
    return reached if spans else None


def _bottleneck(dmin: np.ndarray, floor: float, axis: int):
    """Largest threshold still percolating along ``axis`` (max-min path)."""
    candidates = np.unique(dmin[dmin >= floor])
    if candidates.size == 0 or _percolates(dmin, candidates[0], axis) is None:
        return None, None
    lo, hi = 0, candidates.size - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _percolates(dmin, candidates[mid], axis) is not None:
            lo = mid
        else:
            hi = mid - 1
    best = float(candidates[lo])
    return best, _percolates(dmin, best, axis)


def _surface_area(void: np.ndarray, lengths: np.ndarray) -> float:
    """Area of void/occupied grid-face crossings, fully periodic."""
    area = 0.0
    spacings = lengths / np.array(void.shape)
    for ax in range(3):
        face = np.prod(np.delete(spacings, ax))
        crossings = void != np.roll(void, 1, axis=ax)
        area += float(crossings.sum()) * face
    return area


def mock_porosity(
    mof_atoms: ConceptualAtoms,
    probe_radius: float = PROBE_RADIUS,
    grid_spacing: float = GRID_SPACING,
    atom_radius: float = ATOM_RADIUS,
) -> PorosityDescriptors:
    if not all(mof_atoms.periodic):
        raise NonPeriodic("structure must be periodic along all three axes")
    dmin, _, lengths = _distance_grid(mof_atoms, grid_spacing)
    clearance = atom_radius + probe_radius
    void = dmin > clearance
    void_fraction = float(void.mean())
    lcd = 2.0 * float(dmin[void].max()) if void.any() else 0.0

    pld = 0.0
    lfpd = 0.0
    for axis in range(3):
        bottleneck, channel = _bottleneck(dmin, clearance + 1e-12, axis)
        if bottleneck is None:
            continue
        if 2.0 * bottleneck > pld:
            pld = 2.0 * bottleneck
            lfpd = 2.0 * float(dmin[channel].max())

    mass = framework_mass(mof_atoms)
    if mass > 0:
        asa = _surface_area(void, lengths) / mass
    else:
        asa = 0.0
    return PorosityDescriptors(
        largest_cavity_diameter=lcd,
        pore_limiting_diameter=min(pld, lcd),
        largest_free_path_diameter=min(lfpd, lcd),
        accessible_surface_area=asa,
        void_fraction=void_fraction,
    )
