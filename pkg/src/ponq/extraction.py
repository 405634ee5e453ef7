"""Closed-surface extraction from a PoNQ grid.

The fitted points (plus eight padding corners) are tetrahedralized; every
tetrahedron is labelled inside or outside by the tangent plane of the sample
nearest to its centroid, and the faces separating the two labels form the
output surface. Being the boundary of a set of tetrahedra, the surface is
closed, and being made of Delaunay faces, it does not self-intersect.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import ExtractionError
from .geometry.mesh import TriangleMesh
from .rep.grid import PoNQGrid

log = logging.getLogger(__name__)

JITTER = 1e-9
# fitted points closer than this (relative to the grid extent) are welded
WELD = 1e-7
CORNER_SCALE = 1.5
_JITTER_SEED = 0x504F4E51

# face k of a tetrahedron omits vertex k; these orders point away from vertex k
# for a positively oriented tetrahedron (0, 1, 2, 3)
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


@dataclass(frozen=True, eq=False)
class LabeledTetMesh:
    points: np.ndarray  # sample points followed by the 8 hull corners
    normals: np.ndarray  # per sample point (corners excluded)
    tetrahedra: np.ndarray
    neighbors: np.ndarray
    inside: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.normals)


def _nearest_lowest_index(tree: cKDTree, queries: np.ndarray, n: int) -> np.ndarray:
    k = min(8, n)
    d, j = tree.query(queries, k=k)
    if k == 1:
        return np.asarray(j).reshape(-1)
    d = d.reshape(len(queries), k)
    j = j.reshape(len(queries), k)
    tied = d == d[:, :1]
    return np.where(tied, j, np.iinfo(np.int64).max).min(axis=1)


def signed_side(point, sample_points, sample_normals=None) -> np.ndarray | float:
    """``n_j . (x - v_j)`` for the sample ``j`` nearest to each query point.

    ``sample_points`` may also be a :class:`PoNQGrid`. Equidistant samples
    resolve to the lowest index.
    """
    if isinstance(sample_points, PoNQGrid):
        sample_points, sample_normals = sample_points.points, sample_points.normals
    sp = np.asarray(sample_points, dtype=np.float64).reshape(-1, 3)
    sn = np.asarray(sample_normals, dtype=np.float64).reshape(-1, 3)
    if len(sp) == 0:
        raise ValueError("need at least one sample")
    x = np.asarray(point, dtype=np.float64)
    q = x.reshape(-1, 3)
    j = _nearest_lowest_index(cKDTree(sp), q, len(sp))
    s = np.einsum("ij,ij->i", sn[j], q - sp[j])
    return float(s[0]) if x.ndim == 1 else s.reshape(x.shape[:-1])


def _canonical_samples(points: np.ndarray, normals: np.ndarray):
    order = np.lexsort(tuple(np.concatenate([points, normals], axis=1).T[::-1]))
    p, n = points[order], normals[order]
    keep = np.ones(len(p), dtype=bool)
    if len(p) > 1:
        keep[1:] = np.any(p[1:] != p[:-1], axis=1)
    return p[keep], n[keep]


def _weld(points: np.ndarray, tol: float) -> np.ndarray:
    """Representative (lowest index of its cluster) for every point; clusters link points within ``tol``."""
    n = len(points)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(g, directed=False)
    first = np.full(label.max() + 1, n)
    np.minimum.at(first, label, np.arange(n))
    return first[label]


def tetrahedralize(grid: PoNQGrid) -> LabeledTetMesh:
    """Delaunay tetrahedra of the fitted points and eight far corners, labelled inside/outside.

    Points closer than ``WELD`` times the grid extent are merged into one
    vertex (QEM minimizers of neighbouring cells often meet at sharp corners),
    but every sample still takes part in the labelling.
    """
    samples, sample_normals = _canonical_samples(np.asarray(grid.points), np.asarray(grid.normals))
    lo, hi = grid.lo, grid.hi
    extent = float((hi - lo).max())
    diag = {"n_points": len(samples), "n_cells": grid.n_cells}
    if len(samples) < 4:
        raise ExtractionError(f"<4 points after masking ({len(samples)} available)", diag)
    rep = _weld(samples, WELD * extent)
    keep = rep == np.arange(len(samples))
    pts, nrm = samples[keep], sample_normals[keep]
    n = len(pts)
    diag["n_welded"] = n
    if n < 4:
        raise ExtractionError(f"<4 points after masking ({n} distinct available)", diag)
    rng = np.random.default_rng(_JITTER_SEED)
    jittered = pts + rng.uniform(-1.0, 1.0, size=(n, 3)) * (JITTER * extent)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * CORNER_SCALE
    signs = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float)
    corners = center + signs * half
    allp = np.concatenate([jittered, corners])
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise ExtractionError("sample points are coplanar or collinear", {**diag, "singular_values": sv.tolist()})
    try:
        dt = Delaunay(allp)
    except QhullError as exc:
        raise ExtractionError(f"tetrahedralization failed: {exc}", diag) from exc
    tets = dt.simplices.astype(np.int64)
    nb = dt.neighbors.astype(np.int64)
    t = allp[tets]
    vol = np.einsum("ij,ij->i", t[:, 1] - t[:, 0], np.cross(t[:, 2] - t[:, 0], t[:, 3] - t[:, 0]))
    neg = vol < 0
    # swapping vertices 0 and 1 swaps the matching neighbour slots too
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]
    nb[neg] = nb[neg][:, [1, 0, 2, 3]]
    centroid = allp[tets].mean(axis=1)
    j = _nearest_lowest_index(cKDTree(samples), centroid, len(samples))
    side = np.einsum("ij,ij->i", sample_normals[j], centroid - samples[j])
    inside = (side < 0) & ~np.any(tets >= n, axis=1)
    return LabeledTetMesh(allp, nrm, tets, nb, inside)


def _orient_components(faces: np.ndarray, points: np.ndarray, vnormals: np.ndarray) -> np.ndarray:
    """Flip any connected component whose faces mostly disagree with the sample normals."""
    nv = len(points)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv))
    n_comp, label = connected_components(adj, directed=False)
    t = points[faces]
    fn = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    agree = np.sign(np.einsum("ij,ij->i", fn, vnormals[faces].sum(axis=1)))
    vote = np.bincount(label[faces[:, 0]], weights=agree, minlength=n_comp)
    flip = vote[label[faces[:, 0]]] < 0
    if flip.any():
        log.info("reoriented %d faces against the stored normals", int(flip.sum()))
        faces = faces.copy()
        faces[flip] = faces[flip][:, ::-1]
    return faces


def extract_mesh(masked_grid: PoNQGrid) -> TriangleMesh:
    """Closed triangle mesh bounding the inside-labelled tetrahedra."""
    tm = tetrahedralize(masked_grid)
    inside = tm.inside
    if not inside.any():
        raise ExtractionError("no tetrahedron labelled inside", {"n_points": tm.n_samples, "n_tets": len(inside)})
    nb = tm.neighbors
    nb_inside = np.where(nb >= 0, inside[np.maximum(nb, 0)], False)
    boundary = inside[:, None] & ~nb_inside
    tet_id, k = np.nonzero(boundary)
    local = _TET_FACES[k]
    faces = np.take_along_axis(tm.tetrahedra[tet_id], local, axis=1)
    faces = _orient_components(faces, tm.points, np.concatenate([tm.normals, np.zeros((8, 3))]))
    return TriangleMesh(tm.points, faces).compact()
