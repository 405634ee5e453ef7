from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GeometryError
from .mesh import TriangleMesh, _frozen


@dataclass(frozen=True, eq=False)
class SurfaceSampleSet:
    """Points drawn on a mesh surface with their face normals.

    ``faces`` records the source triangle of every sample.
    """

    points: np.ndarray
    normals: np.ndarray
    faces: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("points", "normals", "faces"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (len(self.points) == len(self.normals) == len(self.faces)):
            raise ValueError("points, normals and faces must have equal length")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> SurfaceSampleSet:
        return SurfaceSampleSet(self.points[idx], self.normals[idx], self.faces[idx], self.seed)


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> SurfaceSampleSet:
    """Draw ``count`` area-uniform samples from the mesh surface.

    Triangles are picked with probability proportional to area and points are
    placed with the square-root barycentric warp, so each sample is uniform
    inside its triangle.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = mesh.face_areas() if mesh.n_faces else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise GeometryError("mesh has no non-degenerate faces to sample")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(count), side="right")
    face = np.minimum(face, mesh.n_faces - 1)
    # searchsorted can land on a zero-area face sharing a cdf value with its predecessor
    bad = areas[face] == 0
    if bad.any():
        nz = np.flatnonzero(areas > 0)
        face[bad] = nz[np.searchsorted(nz, face[bad], side="left").clip(max=len(nz) - 1)]
    r = rng.random((count, 2))
    s = np.sqrt(r[:, 0])
    w0 = 1.0 - s
    w1 = s * (1.0 - r[:, 1])
    w2 = s * r[:, 1]
    tri = mesh.triangles[face]
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    normals = mesh.face_normals()[face]
    return SurfaceSampleSet(pts, normals, face.astype(np.int64), int(seed))
