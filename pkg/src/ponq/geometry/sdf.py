from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError, NotWatertightError
from .audit import audit_mesh, edge_face_counts
from .distance import mesh_distance
from .mesh import TriangleMesh, _frozen

SDF_MAGIC = b"SDFG"
SDF_VERSION = 1
_SDF_HEADER = struct.Struct("<4sI3I3dd")

GRAZE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distances sampled on grid nodes ``origin + index * spacing``.

    ``values`` has shape (nx, ny, nz) and dtype float32; negative inside.
    """

    resolution: tuple[int, int, int]
    origin: tuple[float, float, float]
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != tuple(self.resolution):
            raise ValueError(f"values shape {v.shape} != resolution {self.resolution}")
        object.__setattr__(self, "values", _frozen(v))

    def node_positions(self) -> np.ndarray:
        axes = [self.origin[a] + np.arange(self.resolution[a]) * self.spacing for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1)

    def __eq__(self, other):
        if not isinstance(other, SdfGrid):
            return NotImplemented
        return (
            tuple(self.resolution) == tuple(other.resolution)
            and tuple(self.origin) == tuple(other.origin)
            and self.spacing == other.spacing
            and self.values.tobytes() == other.values.tobytes()
        )


def _axis_ray_hits(tri, ray_u, ray_w, a, u, w, tol):
    """Triangles hit by rays parallel to axis ``a`` at perpendicular coords (ray_u, ray_w).

    Returns (ray index, intercept along ``a``, grazing flag per ray).
    """
    n_rays = len(ray_u)
    tri_ids = np.arange(len(tri))
    pu, pw = tri[:, :, u], tri[:, :, w]
    # triangles parallel to the ray cannot be crossed; neighbours report grazing
    area2 = (pu[:, 1] - pu[:, 0]) * (pw[:, 2] - pw[:, 0]) - (pw[:, 1] - pw[:, 0]) * (pu[:, 2] - pu[:, 0])
    live = np.abs(area2) > tol
    tri_ids, pu, pw = tri_ids[live], pu[live], pw[live]
    order = np.argsort(ray_u, kind="stable")
    su = ray_u[order]
    lo = np.searchsorted(su, pu.min(axis=1), side="left")
    hi = np.searchsorted(su, pu.max(axis=1), side="right")
    cnt = hi - lo
    f = np.repeat(np.arange(len(pu)), cnt)
    r = order[np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(lo, cnt)]
    wmin, wmax = pw.min(axis=1)[f], pw.max(axis=1)[f]
    keep = (ray_w[r] >= wmin) & (ray_w[r] <= wmax)
    f, r = f[keep], r[keep]
    qu, qw = ray_u[r], ray_w[r]
    e = []
    for i, j in ((0, 1), (1, 2), (2, 0)):
        e.append((pu[f, j] - pu[f, i]) * (qw - pw[f, i]) - (pw[f, j] - pw[f, i]) * (qu - pu[f, i]))
    e = np.stack(e, axis=1)
    graze_pair = np.any(np.abs(e) <= tol, axis=1)
    graze = np.zeros(n_rays, dtype=bool)
    graze[r[graze_pair]] = True
    inside = (np.all(e > tol, axis=1) | np.all(e < -tol, axis=1)) & ~graze_pair
    f, r = tri_ids[f[inside]], r[inside]
    v0 = tri[f, 0]
    nrm = np.cross(tri[f, 1] - v0, tri[f, 2] - v0)
    icpt = v0[:, a] - (nrm[:, u] * (ray_u[r] - v0[:, u]) + nrm[:, w] * (ray_w[r] - v0[:, w])) / nrm[:, a]
    return r, icpt, graze


def ray_parity_inside(mesh: TriangleMesh, origin, spacing: float, resolution) -> np.ndarray:
    """Majority vote of +x, +y, +z ray parities for every grid node.

    Rays that graze an edge or vertex are re-cast from an origin shifted by
    ``GRAZE_EPS`` until they hit only triangle interiors.
    """
    res = tuple(int(r) for r in resolution)
    origin = np.asarray(origin, dtype=np.float64)
    tri = mesh.triangles
    coords = [origin[a] + np.arange(res[a]) * spacing for a in range(3)]
    scale = float(np.abs(tri).max()) if len(tri) else 1.0
    tol = 1e-14 * max(scale, spacing) ** 2
    votes = np.zeros(res, dtype=np.int64)
    for a in range(3):
        u, w = [x for x in range(3) if x != a]
        gu, gw = np.meshgrid(coords[u], coords[w], indexing="ij")
        base_u, base_w = gu.ravel(), gw.ravel()
        n_rays = base_u.size
        # per ray: list of intercepts along a
        rays_pending = np.arange(n_rays)
        hit_ray = []
        hit_t = []
        shift = 0
        while len(rays_pending):
            du = GRAZE_EPS * shift
            dw = GRAZE_EPS * shift * np.sqrt(2.0)
            r, t, graze = _axis_ray_hits(tri, base_u[rays_pending] + du, base_w[rays_pending] + dw, a, u, w, tol)
            ok = ~graze[r]
            hit_ray.append(rays_pending[r[ok]])
            hit_t.append(t[ok])
            rays_pending = rays_pending[graze]
            shift += 1
            if shift > 16:
                raise RuntimeError("ray casting failed to escape grazing configurations")
        hr = np.concatenate(hit_ray)
        ht = np.concatenate(hit_t)
        # nodes strictly before the intercept are crossed by the +a ray from that node
        k = np.searchsorted(coords[a], ht, side="left")
        diff = np.zeros((n_rays, res[a] + 1), dtype=np.int64)
        np.add.at(diff, (hr, np.zeros_like(hr)), 1)
        np.add.at(diff, (hr, k), -1)
        crossings = np.cumsum(diff, axis=1)[:, : res[a]]
        parity = (crossings % 2).reshape(res[u], res[w], res[a])
        # back to (x, y, z) index order
        axes_order = [u, w, a]
        votes += np.transpose(parity, np.argsort(axes_order))
    return votes >= 2


def mesh_to_sdf_grid(mesh: TriangleMesh, resolution: int = 32, padding: float = 0.05) -> SdfGrid:
    """Signed distance to a closed mesh on a cubic-cell node grid.

    Magnitudes are exact point-to-triangle distances; signs come from
    :func:`ray_parity_inside`. Open meshes are refused.
    """
    _, counts = edge_face_counts(mesh.faces)
    if mesh.n_faces == 0 or np.any(counts == 1):
        raise NotWatertightError(audit_mesh(mesh))
    res = (int(resolution),) * 3 if np.isscalar(resolution) else tuple(int(r) for r in resolution)
    if min(res) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    lo, hi = mesh.bounds()
    lo = lo - padding
    spacing = float(((hi + padding) - lo).max() / (max(res) - 1))
    grid = SdfGrid(res, tuple(float(x) for x in lo), spacing, np.zeros(res, dtype=np.float32))
    nodes = grid.node_positions().reshape(-1, 3)
    dist, _ = mesh_distance(nodes, mesh)
    inside = ray_parity_inside(mesh, lo, spacing, res).reshape(-1)
    values = np.where(inside, -dist, dist).reshape(res)
    return SdfGrid(res, grid.origin, spacing, values.astype(np.float32))


def write_sdf(grid: SdfGrid) -> bytes:
    head = _SDF_HEADER.pack(SDF_MAGIC, SDF_VERSION, *grid.resolution, *grid.origin, grid.spacing)
    return head + grid.values.astype("<f4").ravel(order="F").tobytes()


def read_sdf(data: bytes) -> SdfGrid:
    if len(data) < _SDF_HEADER.size:
        raise FormatError("SDFG payload truncated in header")
    magic, version, nx, ny, nz, ox, oy, oz, spacing = _SDF_HEADER.unpack_from(data)
    if magic != SDF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SDF_MAGIC!r}")
    if version != SDF_VERSION:
        raise FormatError(f"unsupported SDFG version {version}")
    n = nx * ny * nz
    body = data[_SDF_HEADER.size :]
    if len(body) != 4 * n:
        raise FormatError(f"SDFG payload has {len(body)} value bytes, expected {4 * n}")
    vals = np.frombuffer(body, dtype="<f4").reshape((nx, ny, nz), order="F")
    return SdfGrid((nx, ny, nz), (ox, oy, oz), spacing, vals.astype(np.float32))
