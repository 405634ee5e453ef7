"""Closed toy meshes used by tests, demos and the acceptance suite."""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .geometry.mesh import TriangleMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        edges, inv = np.unique(e, axis=0, return_inverse=True)
        mid = v[edges].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)
        a, b, c = f.T
        ab, bc, ca = m.T
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
        v = np.concatenate([v, mid])
    return TriangleMesh(v * radius + np.asarray(center, float), f)


def box(half_extent=0.5, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    h = np.broadcast_to(np.asarray(half_extent, float), (3,))
    v = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], float) * h
    f = np.array([
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
        [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]])
    return TriangleMesh(v + np.asarray(center, float), f)


def subdivided_box(half_extent: float = 0.45, divisions: int = 8) -> TriangleMesh:
    """Closed cube whose faces are ``divisions x divisions`` grids of quads, outward oriented."""
    n = int(divisions)
    if n < 1:
        raise ValueError("divisions must be >= 1")
    index: dict[tuple[int, int, int], int] = {}
    verts, faces = [], []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for axis in range(3):
        u_ax, w_ax = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n):
            for a in range(n):
                for b in range(n):
                    quad = []
                    for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis], p[u_ax], p[w_ax] = side, a + da, b + db
                        quad.append(vid(tuple(p)))
                    # (u, w, axis) is right-handed, so this winding faces +axis
                    if side == 0:
                        quad = quad[::-1]
                    faces.append([quad[0], quad[1], quad[2]])
                    faces.append([quad[0], quad[2], quad[3]])
    v = (np.array(verts, dtype=float) / n * 2.0 - 1.0) * half_extent
    return TriangleMesh(v, np.array(faces))


def torus(major: float = 0.3, minor: float = 0.12, nu: int = 32, nv: int = 16) -> TriangleMesh:
    u = np.arange(nu) * 2 * np.pi / nu
    w = np.arange(nv) * 2 * np.pi / nv
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    v = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], -1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = i * nv + j
    b = ((i + 1) % nu) * nv + j
    c = ((i + 1) % nu) * nv + (j + 1) % nv
    d = i * nv + (j + 1) % nv
    f = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(v, f)


def cylinder(radius: float = 0.3, height: float = 0.8, segments: int = 32, rings: int = 4) -> TriangleMesh:
    th = np.arange(segments) * 2 * np.pi / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    ring = np.stack([radius * np.cos(th), radius * np.sin(th)], -1)
    side = np.concatenate([np.column_stack([ring, np.full(segments, z)]) for z in zs])
    v = np.concatenate([side, [[0, 0, zs[0]], [0, 0, zs[-1]]]])
    bot, top = len(side), len(side) + 1
    faces = []
    for k in range(rings):
        for s in range(segments):
            a = k * segments + s
            b = k * segments + (s + 1) % segments
            faces += [[a, b, b + segments], [a, b + segments, a + segments]]
    last = rings * segments
    for s in range(segments):
        faces.append([bot, (s + 1) % segments, s])
        faces.append([top, last + s, last + (s + 1) % segments])
    return TriangleMesh(v, np.array(faces))


def convex_hull(points) -> TriangleMesh:
    """Outward-oriented hull of a point set (unused points are dropped)."""
    pts = np.asarray(points, float)
    hull = ConvexHull(pts)
    f = hull.simplices.copy()
    c = pts[hull.vertices].mean(axis=0)
    t = pts[f]
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    flip = np.einsum("ij,ij->i", n, t[:, 0] - c) < 0
    f[flip] = f[flip][:, ::-1]
    return TriangleMesh(pts, f).compact()


def random_convex_hull(n_points: int = 40, seed: int = 0, radius: float = 0.4) -> TriangleMesh:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.6, 1.0, size=(n_points, 1))
    aniso = rng.uniform(0.6, 1.0, size=3)
    return convex_hull(d * r * aniso)


def sphere_union(centers=((-0.15, 0.0, 0.0), (0.17, 0.05, 0.0)), radii=(0.28, 0.22), resolution: int = 40) -> TriangleMesh:
    """Surface of a union of overlapping spheres via marching cubes on the min-distance field."""
    from skimage.measure import marching_cubes

    c = np.asarray(centers, float)
    r = np.asarray(radii, float)
    lo = (c - r[:, None]).min(axis=0) - 0.1
    hi = (c + r[:, None]).max(axis=0) + 0.1
    step = float((hi - lo).max() / (resolution - 1))
    axes = [lo[a] + np.arange(int(np.ceil((hi[a] - lo[a]) / step)) + 1) * step for a in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    field = np.min(np.linalg.norm(g[..., None, :] - c, axis=-1) - r, axis=-1)
    verts, faces, _, _ = marching_cubes(field, level=0.0, spacing=(step, step, step))
    mesh = TriangleMesh(verts + lo, faces[:, ::-1])
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def regular_tetrahedron(scale: float = 0.3) -> TriangleMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) * scale
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, f)


def toy_suite(seed: int = 0) -> list[tuple[str, TriangleMesh]]:
    """Twelve closed shapes: primitives, a sphere union and seven random hulls."""
    shapes = [
        ("sphere", icosphere(3, 0.45)),
        ("cube", box(0.45)),
        ("torus", torus()),
        ("cylinder", cylinder()),
        ("two_sphere_union", sphere_union()),
    ]
    for k in range(7):
        shapes.append((f"hull_{k}", random_convex_hull(30 + 5 * k, seed=seed * 100 + k)))
    return shapes
