"""Structural superposition: Kabsch alignment with optional permutation matching."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .atoms import XYZ

_MAX_ASSIGNMENT_ROUNDS = 10


class ShapeMismatchError(ValueError):
    """Atom counts or element multisets differ between the two structures."""


def kabsch_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Proper rotation R minimizing |a @ R.T - b| for centered coordinates.

    Closed form via SVD of the cross-covariance, with determinant sign
    correction so only proper rotations are returned.
    """
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def _aligned_rmsd(a: np.ndarray, b: np.ndarray) -> float:
    rot = kabsch_rotation(a, b)
    return float(np.sqrt(np.mean(np.sum((a @ rot.T - b) ** 2, axis=1))))


def _element_groups(z: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(z == v) for v in np.unique(z)]


def kabsch_rmsd(a: XYZ, b: XYZ, permute_same_element: bool = False) -> float:
    """Minimum RMSD after optimal translation and proper rotation.

    With ``permute_same_element`` the assignment of same-element atoms is also
    minimized, by alternating Hungarian assignment per element group with
    Kabsch re-alignment until a fixed point (at most 10 rounds).
    """
    if len(a) != len(b):
        raise ShapeMismatchError(f"atom counts differ: {len(a)} vs {len(b)}")
    za, zb = a.atomic_numbers, b.atomic_numbers
    if sorted(za.tolist()) != sorted(zb.tolist()):
        raise ShapeMismatchError("element multisets differ")

    pa = a.positions - a.positions.mean(axis=0)
    pb = b.positions - b.positions.mean(axis=0)

    if not permute_same_element:
        if not np.array_equal(za, zb):
            raise ShapeMismatchError("element orders differ; pass permute_same_element")
        return _aligned_rmsd(pa, pb)

    # Reorder b so element sequences line up, then refine the assignment.
    order = np.empty(len(b), dtype=int)
    for v in np.unique(za):
        order[np.flatnonzero(za == v)] = np.flatnonzero(zb == v)
    pb = pb[order]

    best = _aligned_rmsd(pa, pb)
    for rot0 in _initial_rotations(pa, pb):
        best = min(best, _refine_assignment(pa, pb, za, rot0))
    return best


def _initial_rotations(pa: np.ndarray, pb: np.ndarray) -> list[np.ndarray]:
    """Starting rotations for the assignment refinement.

    Identity, the Kabsch rotation of the current order, and the four proper
    alignments of the principal axes (covariance eigenvectors with sign
    ambiguity), so a badly permuted input cannot trap the search.
    """
    rots = [np.eye(3), kabsch_rotation(pa, pb)]
    _, va = np.linalg.eigh(pa.T @ pa)
    _, vb = np.linalg.eigh(pb.T @ pb)
    if np.linalg.det(va) < 0:
        va[:, 0] *= -1
    if np.linalg.det(vb) < 0:
        vb[:, 0] *= -1
    for signs in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]):
        rots.append(vb @ np.diag(signs) @ va.T)
    return rots


def _refine_assignment(
    pa: np.ndarray, pb: np.ndarray, za: np.ndarray, rot: np.ndarray
) -> float:
    best = np.inf
    for _ in range(_MAX_ASSIGNMENT_ROUNDS):
        rotated = pa @ rot.T
        perm = np.arange(len(pb))
        for idx in _element_groups(za):
            cost = np.linalg.norm(rotated[idx][:, None, :] - pb[idx][None, :, :], axis=2)
            rows, cols = linear_sum_assignment(cost)
            perm[idx[rows]] = idx[cols]
        candidate = _aligned_rmsd(pa, pb[perm])
        if candidate >= best - 1e-15:
            break
        best = candidate
        pb = pb[perm]
        rot = kabsch_rotation(pa, pb)
    return best
