"""Marginal-polytope geometry and calibration sets.

The calibration set H_eps(z) collects the score vectors u for which output z
is within eps of Bayes-optimal: <psi(z) - psi(z'), u> <= eps for every z'.
The exact calibration formulas need Euclidean facts about these cones: the
distance from H_0(z) to the complement of H_eps(z), and whether two optimal
cells intersect.  Both reduce to small linear programs at desk scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .tasks import AffineDecomposition

__all__ = [
    "MarginalPolytope",
    "polytope_of",
    "in_calibration_set",
    "calibration_set_distance",
    "cells_adjacent",
    "adjacency_pairs",
    "ambient_box",
]

RANK_TOL = 1e-9


@dataclass(frozen=True)
class MarginalPolytope:
    vertices: np.ndarray  # n_vertices x dim_ambient, deduplicated
    dim_ambient: int
    dim_affine: int


def polytope_of(decomp: AffineDecomposition) -> MarginalPolytope:
    """hull(phi(Y)): vertices plus ambient and affine dimensions."""
    vertices = np.unique(decomp.phi_mat, axis=0)
    diffs = vertices - vertices[0]
    if vertices.shape[0] == 1:
        rank = 0
    else:
        svals = np.linalg.svd(diffs, compute_uv=False)
        rank = int(np.sum(svals > RANK_TOL * svals[0])) if svals[0] > 0 else 0
    return MarginalPolytope(vertices, decomp.phi_mat.shape[1], rank)


def is_full_dimensional(decomp: AffineDecomposition) -> bool:
    p = polytope_of(decomp)
    return p.dim_affine == p.dim_ambient


def ambient_box(decomp: AffineDecomposition, scale: float = 2.0):
    """Box with `scale` times the polytope's extent around its center.

    Degenerate (constant) coordinates get a unit half-width so the box always
    has interior.
    """
    lo = decomp.phi_mat.min(axis=0)
    hi = decomp.phi_mat.max(axis=0)
    center = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0, 1.0)
    return center - scale * half, center + scale * half


def _cone_rows(decomp: AffineDecomposition, z_index: int) -> np.ndarray:
    """Rows psi(z) - psi(z') for z' != z; u in H_0(z) iff rows @ u <= 0."""
    psi = decomp.psi_mat
    rows = psi[z_index] - psi
    return np.delete(rows, z_index, axis=0)


def in_calibration_set(decomp: AffineDecomposition, u, z, eps: float,
                       slack: float = 1e-12) -> bool:
    """Whether u lies in H_eps(z)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    u = np.asarray(u, dtype=float)
    rows = _cone_rows(decomp, decomp.task.Z.index(z))
    return bool(np.all(rows @ u <= eps + slack))


def _hyperplane_offset(decomp, z_index: int, w: np.ndarray) -> float:
    """min |<w, u>| / ||w|| over u in H_0(z) intersected with the ambient box.

    This is the distance term delta_{z,z'} of the exact calibration formula.
    H_0(z) is an unbounded cone, so the box keeps the program bounded; since
    the origin belongs to every cell the optimum is zero whenever the box
    contains it.  Solved as an LP: min s subject to -s <= <w,u> <= s.
    """
    k = decomp.k_emb
    rows = _cone_rows(decomp, z_index)
    lo, hi = ambient_box(decomp)
    n_rows = rows.shape[0]
    # variables: (u, s)
    A_ub = np.zeros((n_rows + 2, k + 1))
    A_ub[:n_rows, :k] = rows
    A_ub[n_rows, :k] = w
    A_ub[n_rows, k] = -1.0
    A_ub[n_rows + 1, :k] = -w
    A_ub[n_rows + 1, k] = -1.0
    b_ub = np.zeros(n_rows + 2)
    c = np.zeros(k + 1)
    c[k] = 1.0
    bounds = [(float(l), float(h)) for l, h in zip(lo, hi)] + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"hyperplane distance LP failed: {res.message}")
    return float(res.fun) / float(np.linalg.norm(w))


def calibration_set_distance(decomp: AffineDecomposition, z, eps: float) -> float:
    """d_2(H_eps(z)^c, H_0(z)) = min_{z'!=z} eps/||psi(z)-psi(z')|| + delta_{z,z'}."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    zi = decomp.task.Z.index(z)
    psi = decomp.psi_mat
    best = np.inf
    for zj in range(psi.shape[0]):
        if zj == zi:
            continue
        w = psi[zi] - psi[zj]
        norm = np.linalg.norm(w)
        if norm < 1e-14:
            warnings.warn(
                f"psi({decomp.task.Z.elements[zi]}) == psi({decomp.task.Z.elements[zj]});"
                " skipping degenerate direction")
            continue
        best = min(best, eps / norm + _hyperplane_offset(decomp, zi, w))
    return best


def cells_adjacent(decomp: AffineDecomposition, z, z_other) -> bool:
    """Whether H_0(z) and H_0(z') intersect within the ambient box.

    Solved as a feasibility LP minimizing the largest constraint violation.
    """
    zi = decomp.task.Z.index(z)
    zj = decomp.task.Z.index(z_other)
    if zi == zj:
        raise ValueError("cells_adjacent requires z != z'")
    rows = np.vstack([_cone_rows(decomp, zi), _cone_rows(decomp, zj)])
    lo, hi = ambient_box(decomp)
    k = decomp.k_emb
    A_ub = np.hstack([rows, -np.ones((rows.shape[0], 1))])
    b_ub = np.zeros(rows.shape[0])
    c = np.zeros(k + 1)
    c[k] = 1.0
    bounds = [(float(l), float(h)) for l, h in zip(lo, hi)] + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"adjacency LP failed: {res.message}")
    return bool(res.fun <= 1e-9)


def adjacency_pairs(decomp: AffineDecomposition) -> list:
    """All ordered index pairs (i, j), i != j, whose optimal cells intersect."""
    n = decomp.psi_mat.shape[0]
    out = []
    for i in range(n):
        for j in range(n):
            if i != j and cells_adjacent(decomp, decomp.task.Z.elements[i],
                                         decomp.task.Z.elements[j]):
                out.append((i, j))
    return out
