"""Exact point-to-triangle distances."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh


def closest_point_on_triangle(p, a, b, c) -> np.ndarray:
    """Closest point on triangle ``abc`` to ``p``; all arguments broadcast over (..., 3).

    Region classification after Ericson, Real-Time Collision Detection 5.1.5.
    Degenerate triangles fall through to an edge or vertex region.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(p.shape[:-1], dtype=bool)

    def put(mask, value):
        m = mask & ~done
        if m.any():
            out[m] = np.broadcast_to(value, out.shape)[m]
            done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        inner = a + v[..., None] * ab + w[..., None] * ac
        put(np.isfinite(inner).all(axis=-1), inner)
    # only fully degenerate (point) triangles remain
    put(np.ones_like(done), a)
    return out


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    q = closest_point_on_triangle(p, a, b, c)
    return np.linalg.norm(np.asarray(p, dtype=float) - q, axis=-1)


def mesh_distance(points, mesh: TriangleMesh, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Unsigned distance from each point to the nearest mesh triangle.

    Returns ``(distance, face_index)``. Candidate faces are pruned with a
    centroid k-d tree: any face closer than the current upper bound must have
    its centroid within that bound plus the largest centroid-to-corner radius.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    if len(tri) == 0:
        raise ValueError("mesh has no faces")
    cen = tri.mean(axis=1)
    rad = np.linalg.norm(tri - cen[:, None], axis=2).max()
    tree = cKDTree(cen)
    dist = np.empty(len(pts))
    arg = np.empty(len(pts), dtype=np.int64)
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        _, j0 = tree.query(p)
        upper = point_triangle_distance(p, tri[j0, 0], tri[j0, 1], tri[j0, 2])
        cand = tree.query_ball_point(p, upper + rad + 1e-12)
        lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(cand))
        rows = np.repeat(np.arange(len(p)), lens)
        cols = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
        d = point_triangle_distance(p[rows], tri[cols, 0], tri[cols, 1], tri[cols, 2])
        # lexsort by (row, distance, face) so ties resolve to the lowest face index
        order = np.lexsort((cols, d, rows))
        rows, cols, d = rows[order], cols[order], d[order]
        first = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
        dist[s : s + len(p)] = d[first]
        arg[s : s + len(p)] = cols[first]
    return dist, arg
