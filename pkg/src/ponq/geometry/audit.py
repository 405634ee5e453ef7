"""Watertightness and self-intersection audits."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mesh import TriangleMesh


@dataclass(frozen=True)
class MeshAuditReport:
    boundary_edge_count: int
    non_manifold_edge_count: int
    self_intersection_pair_count: int
    watertight: bool

    def to_dict(self) -> dict:
        return asdict(self)


def edge_face_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges (E, 2) and the number of faces using each."""
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


# --- triangle/triangle narrow phase ---------------------------------------

def _dot(a, b):
    return np.einsum("...i,...i", a, b)


def _plane_interval(tri, dist, line_dir, eps):
    """Interval of ``tri`` ∩ (other plane) projected on the intersection line."""
    lo = np.full(tri.shape[0], np.inf)
    hi = np.full(tri.shape[0], -np.inf)
    on = np.abs(dist) <= eps[:, None]
    for k in range(3):
        t = _dot(tri[:, k], line_dir)
        lo = np.where(on[:, k], np.minimum(lo, t), lo)
        hi = np.where(on[:, k], np.maximum(hi, t), hi)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        di, dj = dist[:, i], dist[:, j]
        cross = ((di > eps) & (dj < -eps)) | ((di < -eps) & (dj > eps))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(cross, di / (di - dj), 0.0)
        p = tri[:, i] + s[:, None] * (tri[:, j] - tri[:, i])
        t = _dot(p, line_dir)
        lo = np.where(cross, np.minimum(lo, t), lo)
        hi = np.where(cross, np.maximum(hi, t), hi)
    return lo, hi


def _coplanar_overlap(t1, t2, normal, eps):
    hit = np.ones(len(t1), dtype=bool)
    for tri in (t1, t2):
        for i, j in ((0, 1), (1, 2), (2, 0)):
            ax = np.cross(normal, tri[:, j] - tri[:, i])
            ln = np.linalg.norm(ax, axis=1)
            ax = ax / np.where(ln > 0, ln, 1.0)[:, None]
            p1 = np.einsum("nki,ni->nk", t1, ax)
            p2 = np.einsum("nki,ni->nk", t2, ax)
            overlap = np.minimum(p1.max(1), p2.max(1)) - np.maximum(p1.min(1), p2.min(1))
            hit &= overlap > eps
    return hit


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, rel_eps: float = 1e-9) -> np.ndarray:
    """Whether the interiors of paired triangles cross, for (M, 3, 3) inputs.

    Contact of measure zero (shared boundary points, a vertex resting on a face)
    is not an intersection. Distances within ``rel_eps`` times the pair's
    largest edge are treated as zero.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if len(t1) == 0:
        return np.zeros(0, dtype=bool)
    edges = np.concatenate([t1 - np.roll(t1, 1, axis=1), t2 - np.roll(t2, 1, axis=1)], axis=1)
    eps = rel_eps * np.linalg.norm(edges, axis=2).max(axis=1)
    n1 = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    n2 = np.cross(t2[:, 1] - t2[:, 0], t2[:, 2] - t2[:, 0])
    l1 = np.linalg.norm(n1, axis=1)
    l2 = np.linalg.norm(n2, axis=1)
    valid = (l1 > 0) & (l2 > 0)
    n1 = n1 / np.where(l1 > 0, l1, 1.0)[:, None]
    n2 = n2 / np.where(l2 > 0, l2, 1.0)[:, None]
    d1 = np.einsum("nki,ni->nk", t1 - t2[:, :1], n2)
    d2 = np.einsum("nki,ni->nk", t2 - t1[:, :1], n1)
    e = eps[:, None]
    sep = (
        np.all(d1 > e, axis=1) | np.all(d1 < -e, axis=1)
        | np.all(d2 > e, axis=1) | np.all(d2 < -e, axis=1)
    )
    coplanar = np.all(np.abs(d1) <= e, axis=1) | np.all(np.abs(d2) <= e, axis=1)
    out = np.zeros(len(t1), dtype=bool)
    gen = valid & ~sep & ~coplanar
    if gen.any():
        line = np.cross(n1[gen], n2[gen])
        line /= np.linalg.norm(line, axis=1)[:, None]
        lo1, hi1 = _plane_interval(t1[gen], d1[gen], line, eps[gen])
        lo2, hi2 = _plane_interval(t2[gen], d2[gen], line, eps[gen])
        out[gen] = (np.minimum(hi1, hi2) - np.maximum(lo1, lo2)) > eps[gen]
    cop = valid & ~sep & coplanar
    if cop.any():
        out[cop] = _coplanar_overlap(t1[cop], t2[cop], n1[cop], eps[cop])
    return out


# --- bounding volume hierarchy ---------------------------------------------

class BVH:
    """Median-split AABB tree over triangles, stored as flat arrays."""

    def __init__(self, tri: np.ndarray, leaf_size: int = 8):
        self.box_lo_all = tri.min(axis=1)
        self.box_hi_all = tri.max(axis=1)
        cen = tri.mean(axis=1)
        self.order = np.arange(len(tri))
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def build(s: int, e: int) -> int:
            idx = self.order[s:e]
            node = len(lo)
            lo.append(self.box_lo_all[idx].min(axis=0))
            hi.append(self.box_hi_all[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            if e - s > leaf_size:
                c = cen[idx]
                axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
                perm = np.argsort(c[:, axis], kind="stable")
                self.order[s:e] = idx[perm]
                mid = (s + e) // 2
                left[node] = build(s, mid)
                right[node] = build(mid, e)
            return node

        if len(tri):
            build(0, len(tri))
        self.lo = np.array(lo).reshape(-1, 3)
        self.hi = np.array(hi).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    def _leaf(self, node):
        return self.order[self.start[node] : self.start[node] + self.count[node]]

    def self_overlap_pairs(self) -> np.ndarray:
        """Index pairs (i < j) of triangles whose bounding boxes overlap."""
        if len(self.lo) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        leaf_pairs: list[tuple[int, int]] = []
        stack = [(0, 0)]
        while stack:
            a, b = stack.pop()
            if a != b and (np.any(self.lo[a] > self.hi[b]) or np.any(self.lo[b] > self.hi[a])):
                continue
            la, lb = self.left[a] < 0, self.left[b] < 0
            if la and lb:
                leaf_pairs.append((a, b))
            elif a == b:
                l, r = self.left[a], self.right[a]
                stack.extend([(l, l), (r, r), (l, r)])
            elif la or (not lb and self.count[b] > self.count[a]):
                stack.extend([(a, self.left[b]), (a, self.right[b])])
            else:
                stack.extend([(self.left[a], b), (self.right[a], b)])
        chunks = []
        for a, b in leaf_pairs:
            ia, ib = self._leaf(a), self._leaf(b)
            ii, jj = np.meshgrid(ia, ib, indexing="ij")
            chunks.append(np.stack([ii.ravel(), jj.ravel()], axis=1))
        pairs = np.concatenate(chunks)
        pairs.sort(axis=1)
        pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        lo, hi = self.box_lo_all, self.box_hi_all
        ok = np.all(lo[pairs[:, 0]] <= hi[pairs[:, 1]], axis=1) & np.all(
            lo[pairs[:, 1]] <= hi[pairs[:, 0]], axis=1
        )
        return np.unique(pairs[ok], axis=0)


def _share_vertex(faces: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    fa = faces[pairs[:, 0]]
    fb = faces[pairs[:, 1]]
    return np.any(fa[:, :, None] == fb[:, None, :], axis=(1, 2))


def self_intersecting_pairs(mesh: TriangleMesh, chunk: int = 200_000) -> np.ndarray:
    """Pairs of non-adjacent faces whose interiors cross, sorted (i < j)."""
    if mesh.n_faces < 2:
        return np.zeros((0, 2), dtype=np.int64)
    tri = mesh.triangles
    pairs = BVH(tri).self_overlap_pairs()
    pairs = pairs[~_share_vertex(mesh.faces, pairs)]
    hits = []
    for s in range(0, len(pairs), chunk):
        p = pairs[s : s + chunk]
        hits.append(p[triangles_intersect(tri[p[:, 0]], tri[p[:, 1]])])
    return np.concatenate(hits) if hits else np.zeros((0, 2), dtype=np.int64)


def audit_mesh(mesh: TriangleMesh, self_intersections: bool = True) -> MeshAuditReport:
    """Count boundary, non-manifold and self-intersecting elements.

    Pairs sharing a vertex index are never tested for intersection.
    """
    _, counts = edge_face_counts(mesh.faces)
    boundary = int((counts == 1).sum())
    nonmanifold = int((counts >= 3).sum())
    n_int = len(self_intersecting_pairs(mesh)) if self_intersections else 0
    return MeshAuditReport(boundary, nonmanifold, n_int, boundary == 0)
