"""Deterministic toy computational chemistry.

A pairwise 12-6 potential plus a tiny orbital model stand in for the real
quantum-chemistry backends, so every workflow behavior (optimization,
imaginary-mode repair, conformer ensembles, weighted spectra) is exercised
with analyzable closed-form numbers. No chemical realism is claimed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .atoms import ConceptualAtoms, TokenGenerator, XYZ
from .ogm import mint_iri
from .rmsd import kabsch_rmsd

GRAFICO_NS = "https://elagente.ca/grafico/"

_tokens = TokenGenerator()


def _fresh_iri():
    return mint_iri(GRAFICO_NS, "ConceptualAtoms", _tokens)


class CoincidentAtoms(ValueError):
    pass


class Diverged(RuntimeError):
    """Line search failed 20 consecutive times."""


class InsufficientLevels(ValueError):
    pass


@dataclass(frozen=True)
class ToyPotential:
    well_depth: float = 1.0
    equilibrium: float = 1.0
    cutoff: float = 6.0

    def __post_init__(self):
        if self.well_depth <= 0 or self.equilibrium <= 0:
            raise ValueError("well_depth and equilibrium must be positive")


@dataclass(frozen=True)
class SinglePointResult:
    energy: float
    gradient: np.ndarray  # N x 3
    orbital_energies: np.ndarray  # ascending
    homo_lumo_gap: float
    dipole: np.ndarray  # 3-vector


@dataclass(frozen=True)
class FreqResult:
    eigenvalues: np.ndarray  # ascending curvatures
    n_imaginary: int
    lowest_mode: np.ndarray  # 3N-vector


@dataclass(frozen=True)
class ExcitationResult:
    energies: np.ndarray  # ascending, positive
    oscillator_strengths: np.ndarray


@dataclass(frozen=True)
class Ensemble:
    conformers: tuple  # of (ConceptualAtoms, energy)
    weights: Optional[np.ndarray] = None
    dropped: int = 0  # conformers lost to failed optimizations

    def __post_init__(self):
        object.__setattr__(self, "conformers", tuple(self.conformers))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if len(w) != len(self.conformers):
                raise ValueError("one weight per conformer")
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.conformers)


@dataclass(frozen=True)
class Spectrum:
    grid: np.ndarray  # ascending energies
    intensity: np.ndarray  # same length, non-negative
    sigma: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        intensity = np.asarray(self.intensity, dtype=float)
        if grid.shape != intensity.shape:
            raise ValueError("grid and intensity lengths differ")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if len(grid) > 1 and not (np.diff(grid) > 0).all():
            raise ValueError("grid must be ascending")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "intensity", intensity)


# --------------------------------------------------------------------------
# energies and gradients

def _pair_distances(positions: np.ndarray):
    n = len(positions)
    deltas = positions[:, None, :] - positions[None, :, :]
    dists = np.linalg.norm(deltas, axis=-1)
    iu = np.triu_indices(n, k=1)
    return deltas, dists, iu


def _check_geometry(atoms: ConceptualAtoms) -> np.ndarray:
    positions = np.asarray(atoms.geometry.positions, dtype=float)
    if len(positions) == 0:
        raise ValueError("need at least one atom")
    if len(positions) > 1:
        _, dists, iu = _pair_distances(positions)
        if (dists[iu] < 1e-9).any():
            raise CoincidentAtoms("two atoms occupy the same position")
    return positions


def pair_energy_gradient(positions: np.ndarray, pot: ToyPotential):
    """Total 12-6 pair energy and its analytic gradient."""
    n = len(positions)
    if n < 2:
        return 0.0, np.zeros_like(positions)
    deltas, dists, iu = _pair_distances(positions)
    energy = 0.0
    gradient = np.zeros_like(positions)
    eps, r0 = pot.well_depth, pot.equilibrium
    for i, j in zip(*iu):
        r = dists[i, j]
        if r > pot.cutoff:
            continue
        s6 = (r0 / r) ** 6
        energy += eps * (s6 * s6 - 2.0 * s6)
        # dV/dr = -12 eps/r * (s12 - s6)
        dvdr = -12.0 * eps / r * (s6 * s6 - s6)
        unit = deltas[i, j] / r
        gradient[i] += dvdr * unit
        gradient[j] -= dvdr * unit
    return float(energy), gradient


def _orbital_energies(atoms: ConceptualAtoms, pot: ToyPotential) -> np.ndarray:
    positions = np.asarray(atoms.geometry.positions, dtype=float)
    numbers = np.asarray(atoms.geometry.atomic_numbers, dtype=float)
    n = len(positions)
    h = np.diag(-numbers)
    if n > 1:
        _, dists, iu = _pair_distances(positions)
        for i, j in zip(*iu):
            r = dists[i, j]
            if r <= pot.cutoff:
                h[i, j] = h[j, i] = -1.0 / r
    return np.linalg.eigvalsh(h)


def n_occupied(atoms: ConceptualAtoms) -> int:
    return max(1, len(atoms.geometry) // 2)


def single_point(atoms: ConceptualAtoms, pot: ToyPotential = ToyPotential()) -> SinglePointResult:
    positions = _check_geometry(atoms)
    energy, gradient = pair_energy_gradient(positions, pot)
    levels = _orbital_energies(atoms, pot)
    n_occ = n_occupied(atoms)
    gap = float(levels[n_occ] - levels[n_occ - 1]) if len(levels) > n_occ else 0.0
    numbers = np.asarray(atoms.geometry.atomic_numbers, dtype=float)
    dipole = numbers @ positions - numbers.sum() * positions.mean(axis=0)
    return SinglePointResult(energy, gradient, levels, gap, dipole)


# --------------------------------------------------------------------------
# optimization

def optimize(
    atoms: ConceptualAtoms,
    pot: ToyPotential = ToyPotential(),
    max_steps: int = 500,
    force_tol: float = 1e-6,
):
    """Steepest descent with a backtracking line search.

    Returns (optimized atoms, per-step energy trajectory, converged flag).
    """
    positions = _check_geometry(atoms).copy()
    energy, gradient = pair_energy_gradient(positions, pot)
    trajectory = [energy]
    consecutive_failures = 0
    converged = bool(np.abs(gradient).max() < force_tol)
    steps = 0
    while not converged and steps < max_steps:
        direction = -gradient
        alpha = 1.0
        improved = False
        for _ in range(60):
            trial = positions + alpha * direction
            trial_energy, trial_gradient = pair_energy_gradient(trial, pot)
            if trial_energy < energy:
                positions, energy, gradient = trial, trial_energy, trial_gradient
                improved = True
                break
            alpha *= 0.5
        if improved:
            consecutive_failures = 0
            trajectory.append(energy)
        else:
            consecutive_failures += 1
            if consecutive_failures >= 20:
                raise Diverged("line search failed 20 consecutive times")
        steps += 1
        converged = bool(np.abs(gradient).max() < force_tol)
    if np.allclose(positions, atoms.geometry.positions):
        final = atoms
    else:
        final = atoms.with_positions(positions, _fresh_iri())
    return final, trajectory, converged


# --------------------------------------------------------------------------
# frequencies and repair

def frequencies(
    atoms: ConceptualAtoms,
    pot: ToyPotential = ToyPotential(),
    displacement: float = 1e-4,
    tol: float = 1e-6,
) -> FreqResult:
    """Central finite-difference Cartesian Hessian, symmetrized.

    Eigenvalues inside [-tol, tol] are the translation/rotation zeros; only
    eigenvalues below -tol count as imaginary.
    """
    positions = _check_geometry(atoms)
    n3 = positions.size
    hessian = np.zeros((n3, n3))
    flat = positions.reshape(-1)
    for k in range(n3):
        plus = flat.copy()
        plus[k] += displacement
        minus = flat.copy()
        minus[k] -= displacement
        _, g_plus = pair_energy_gradient(plus.reshape(-1, 3), pot)
        _, g_minus = pair_energy_gradient(minus.reshape(-1, 3), pot)
        hessian[k] = (g_plus - g_minus).reshape(-1) / (2 * displacement)
    hessian = 0.5 * (hessian + hessian.T)
    eigenvalues, vectors = np.linalg.eigh(hessian)
    n_imaginary = int((eigenvalues < -tol).sum())
    return FreqResult(eigenvalues, n_imaginary, vectors[:, 0])


def displace_along_mode(
    atoms: ConceptualAtoms, mode: np.ndarray, delta: float
) -> ConceptualAtoms:
    """New geometry shifted by delta along the normalized mode (fresh IRI)."""
    mode = np.asarray(mode, dtype=float).reshape(-1)
    positions = np.asarray(atoms.geometry.positions, dtype=float)
    if mode.size != positions.size:
        raise ValueError(f"mode must have {positions.size} components")
    norm = np.linalg.norm(mode)
    if norm < 1e-12:
        raise ValueError("mode vector is zero")
    shifted = positions + delta * (mode / norm).reshape(-1, 3)
    return atoms.with_positions(shifted, _fresh_iri())


def repair_displacement_sign(
    atoms: ConceptualAtoms,
    mode: np.ndarray,
    delta: float = 0.2,
    pot: ToyPotential = ToyPotential(),
) -> ConceptualAtoms:
    """Displace along the mode with the sign that lowers the energy."""
    forward = displace_along_mode(atoms, mode, delta)
    backward = displace_along_mode(atoms, mode, -delta)
    if single_point(forward, pot).energy <= single_point(backward, pot).energy:
        return forward
    return backward


# --------------------------------------------------------------------------
# excitations

def excitations(
    atoms: ConceptualAtoms, pot: ToyPotential = ToyPotential(), n_states: int = 3
) -> ExcitationResult:
    levels = _orbital_energies(atoms, pot)
    n_occ = n_occupied(atoms)
    available = len(levels) - n_occ
    if available < 1:
        raise InsufficientLevels(
            f"{len(levels)} levels with {n_occ} occupied leave no excitations"
        )
    count = min(n_states, available)
    energies = levels[n_occ:n_occ + count] - levels[n_occ - 1]
    strengths = 1.0 / np.arange(1, count + 1)
    return ExcitationResult(np.asarray(energies), strengths)


# --------------------------------------------------------------------------
# ensembles

def generate_conformers(
    seed: ConceptualAtoms,
    n: int,
    rng_seed: int = 0,
    sigma_pos: float = 0.3,
    pot: ToyPotential = ToyPotential(),
) -> Ensemble:
    """n locally optimized Gaussian perturbations of the seed geometry.

    Conformers whose optimization diverges are dropped and counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng_seed)
    positions = np.asarray(seed.geometry.positions, dtype=float)
    conformers = []
    dropped = 0
    for _ in range(n):
        noise = rng.normal(0.0, sigma_pos, size=positions.shape) if sigma_pos > 0 else 0.0
        start = seed.with_positions(positions + noise, _fresh_iri())
        try:
            relaxed, trajectory, _ = optimize(start, pot)
        except (Diverged, CoincidentAtoms):
            dropped += 1
            continue
        conformers.append((relaxed, trajectory[-1]))
    return Ensemble(tuple(conformers), dropped=dropped)


def boltzmann_weights(energies: Sequence[float], beta: float = 1.0) -> np.ndarray:
    if len(energies) == 0:
        raise ValueError("energies must be non-empty")
    if beta <= 0:
        raise ValueError("beta must be positive")
    energies = np.asarray(energies, dtype=float)
    shifted = np.exp(-beta * (energies - energies.min()))
    return shifted / shifted.sum()


def with_boltzmann_weights(ensemble: Ensemble, beta: float = 1.0) -> Ensemble:
    weights = boltzmann_weights([e for _, e in ensemble.conformers], beta)
    return Ensemble(ensemble.conformers, weights, ensemble.dropped)


def select_by_cumulative_weight(ensemble: Ensemble, threshold: float = 0.95) -> Ensemble:
    """Shortest heaviest-first prefix reaching the cumulative threshold.

    The surviving weights are renormalized so the sub-ensemble is well-formed.
    """
    if ensemble.weights is None:
        raise ValueError("ensemble has no weights")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    order = sorted(
        range(len(ensemble)),
        key=lambda i: (-ensemble.weights[i], ensemble.conformers[i][1]),
    )
    kept = []
    total = 0.0
    for i in order:
        kept.append(i)
        total += ensemble.weights[i]
        if total >= threshold - 1e-12:
            break
    conformers = tuple(ensemble.conformers[i] for i in kept)
    weights = np.array([ensemble.weights[i] for i in kept])
    return Ensemble(conformers, weights / weights.sum(), ensemble.dropped)


def dedup_conformers(
    ensemble: Ensemble, e_tol: float = 1e-3, rmsd_tol: float = 0.1
) -> Ensemble:
    """Greedy duplicate removal in ascending energy order.

    A conformer duplicates a kept one only when both the energy difference is
    within e_tol and the Kabsch RMSD is within rmsd_tol.
    """
    if e_tol <= 0 or rmsd_tol <= 0:
        raise ValueError("tolerances must be positive")
    order = sorted(range(len(ensemble)), key=lambda i: ensemble.conformers[i][1])
    kept: list[int] = []
    for i in order:
        atoms_i, energy_i = ensemble.conformers[i]
        duplicate = False
        for j in kept:
            atoms_j, energy_j = ensemble.conformers[j]
            if abs(energy_i - energy_j) > e_tol:
                continue
            rmsd = kabsch_rmsd(atoms_i.geometry, atoms_j.geometry)
            if rmsd <= rmsd_tol:
                duplicate = True
                break
        if not duplicate:
            kept.append(i)
    kept.sort()
    conformers = tuple(ensemble.conformers[i] for i in kept)
    weights = None
    if ensemble.weights is not None:
        w = np.array([ensemble.weights[i] for i in kept])
        weights = w / w.sum()
    return Ensemble(conformers, weights, ensemble.dropped)


# --------------------------------------------------------------------------
# spectra

def broaden_spectrum(
    excitation_sets: Sequence[ExcitationResult],
    weights: Sequence[float],
    sigma: float,
    grid: np.ndarray,
) -> Spectrum:
    """Weighted sum of Gaussians centered on every excitation line."""
    if len(excitation_sets) != len(weights):
        raise ValueError("one excitation set per weight")
    grid = np.asarray(grid, dtype=float)
    intensity = np.zeros_like(grid)
    for result, weight in zip(excitation_sets, weights):
        for energy, strength in zip(result.energies, result.oscillator_strengths):
            intensity += weight * strength * np.exp(
                -((grid - energy) ** 2) / (2 * sigma ** 2)
            )
    return Spectrum(grid, intensity, sigma)


def export_spectrum(
    spectrum: Spectrum,
    base_path: str | Path,
    beta: Optional[float] = None,
    weights: Optional[Sequence[float]] = None,
) -> tuple[Path, Path]:
    """Two-column TSV plus a JSON sidecar with the broadening metadata."""
    base = Path(base_path)
    tsv = base.with_suffix(".tsv")
    sidecar = base.with_suffix(".json")
    lines = ["energy\tintensity"]
    lines += [f"{e:.8g}\t{i:.8g}" for e, i in zip(spectrum.grid, spectrum.intensity)]
    tsv.write_text("\n".join(lines) + "\n")
    meta = {"sigma": spectrum.sigma}
    if beta is not None:
        meta["beta"] = beta
    if weights is not None:
        meta["weights"] = [float(w) for w in weights]
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return tsv, sidecar
