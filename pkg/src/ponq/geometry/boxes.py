"""Triangle/axis-aligned-box overlap and triangle-to-cell rasterization."""
from __future__ import annotations

import numpy as np

_EYE = np.eye(3)


def triangle_box_overlap(tri: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis test for closed boxes, vectorized over leading axes.

    ``tri`` is (..., 3, 3); ``center`` and ``half`` broadcast to (..., 3).
    Touching counts as overlap.
    """
    center = np.asarray(center, dtype=np.float64)
    half = np.broadcast_to(np.asarray(half, dtype=np.float64), center.shape)
    v = tri - center[..., None, :]
    hit = np.ones(v.shape[:-2], dtype=bool)
    # box face normals
    hit &= np.all(v.min(axis=-2) <= half, axis=-1) & np.all(v.max(axis=-2) >= -half, axis=-1)
    e = np.stack([v[..., 1, :] - v[..., 0, :], v[..., 2, :] - v[..., 1, :], v[..., 0, :] - v[..., 2, :]], axis=-2)
    # triangle plane
    n = np.cross(e[..., 0, :], e[..., 1, :])
    d = np.einsum("...i,...i", n, v[..., 0, :])
    r = np.einsum("...i,...i", np.abs(n), half)
    hit &= np.abs(d) <= r
    # edge x box-axis cross products
    for i in range(3):
        for j in range(3):
            ax = np.cross(_EYE[j], e[..., i, :])
            proj = np.einsum("...ki,...i->...k", v, ax)
            rr = np.einsum("...i,...i", np.abs(ax), half)
            hit &= (proj.min(axis=-1) <= rr) & (proj.max(axis=-1) >= -rr)
    return hit


def rasterize_triangles(tri: np.ndarray, origin, spacing: float, n: int, chunk: int = 200_000):
    """Cells of an ``n^3`` grid whose closed boxes overlap each triangle.

    Returns ``(cell_ijk, face)`` pairs, cell as (M, 3) int indices. Candidates
    are the cells inside each triangle's bounding box.
    """
    origin = np.asarray(origin, dtype=np.float64)
    if len(tri) == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    lo = np.floor((tri.min(axis=1) - origin) / spacing).astype(np.int64)
    hi = np.floor((tri.max(axis=1) - origin) / spacing).astype(np.int64)
    # a triangle touching a cell face from outside also overlaps the neighbour
    lo = np.clip(lo - 1, 0, n - 1)
    hi = np.clip(hi + 1, 0, n - 1)
    ext = hi - lo + 1
    far = origin + n * spacing
    inside = ~np.any((tri.max(axis=1) < origin) | (tri.min(axis=1) > far), axis=1)
    counts = np.where(inside, ext.prod(axis=1), 0)
    faces_out = []
    cells_out = []
    face_ids = np.arange(len(tri))
    start = 0
    while start < len(tri):
        # group faces so each batch holds about `chunk` candidates
        csum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(csum, chunk, side="right")))
        sel = face_ids[start:stop]
        cnt = counts[sel]
        f = np.repeat(sel, cnt)
        if len(f):
            local = np.arange(len(f)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            ex = ext[f]
            i = local % ex[:, 0]
            j = (local // ex[:, 0]) % ex[:, 1]
            k = local // (ex[:, 0] * ex[:, 1])
            ijk = lo[f] + np.stack([i, j, k], axis=1)
            center = origin + (ijk + 0.5) * spacing
            ok = triangle_box_overlap(tri[f], center, np.full(3, 0.5 * spacing))
            faces_out.append(f[ok])
            cells_out.append(ijk[ok])
        start = stop
    if not faces_out:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(cells_out), np.concatenate(faces_out)
