from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from ..errors import MeshStructureError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    ``vertices`` is a (V, 3) float64 array and ``faces`` a (F, 3) int64 array of
    vertex indices. Both are stored read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __init__(self, vertices: ArrayLike, faces: ArrayLike):
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(faces)
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshStructureError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshStructureError(f"faces must be triangles, got shape {f.shape}")
        if f.size and not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise MeshStructureError("face indices must be integers")
        f = f.astype(np.int64)
        if not np.all(np.isfinite(v)):
            raise MeshStructureError("vertex coordinates must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshStructureError(
                f"face index out of range [0, {len(v)}): min {f.min()}, max {f.max()}"
            )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates per face."""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        t = self.triangles
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals; zero rows for degenerate faces."""
        c = self.face_cross()
        ln = np.linalg.norm(c, axis=1)
        out = np.zeros_like(c)
        ok = ln > 0
        out[ok] = c[ok] / ln[ok, None]
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_vertices == 0:
            raise MeshStructureError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def signed_volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, scale: float, offset: ArrayLike) -> TriangleMesh:
        """Mesh with vertices mapped by ``v * scale + offset``."""
        return TriangleMesh(self.vertices * scale + np.asarray(offset, dtype=float), self.faces)

    def compact(self) -> TriangleMesh:
        """Drop vertices that no face references, keeping relative order."""
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.faces.ravel()] = True
        remap = np.cumsum(used) - 1
        return TriangleMesh(self.vertices[used], remap[self.faces])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(
            self.faces, other.faces
        )

    def __repr__(self) -> str:
        return f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def normalization_transform(mesh: TriangleMesh, half_extent: float = 0.45) -> tuple[float, np.ndarray]:
    """Scale and offset mapping the mesh bounding box into ``[-half_extent, half_extent]^3``.

    The box is centred at the origin and scaled uniformly so its longest side
    spans ``2 * half_extent``.
    """
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise MeshStructureError("mesh bounding box is degenerate")
    scale = 2.0 * half_extent / extent
    center = 0.5 * (lo + hi)
    return scale, -center * scale


def normalize_mesh(mesh: TriangleMesh, half_extent: float = 0.45) -> TriangleMesh:
    scale, offset = normalization_transform(mesh, half_extent)
    return mesh.transformed(scale, offset)
