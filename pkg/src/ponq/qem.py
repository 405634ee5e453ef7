"""Quadric error metrics: tangent planes, quadric accumulation and minimization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .geometry.mesh import TriangleMesh

UPPER = np.triu_indices(4)
UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class HPlane:
    """Homogeneous plane ``[a, b, c, d]`` with unit ``(a, b, c)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(4)
        if abs(float(np.dot(c[:3], c[:3])) - 1.0) > UNIT_TOL:
            raise ValueError("plane normal must have unit length")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def normal(self) -> np.ndarray:
        return self.coeffs[:3]

    @property
    def offset(self) -> float:
        return float(self.coeffs[3])

    def evaluate(self, position: ArrayLike) -> np.ndarray:
        """Signed distance of position(s) to the plane."""
        p = np.asarray(position, dtype=np.float64)
        return p @ self.coeffs[:3] + self.coeffs[3]


def upper_to_matrix(upper: ArrayLike) -> np.ndarray:
    """(..., 10) upper-triangular coefficients to (..., 4, 4) symmetric matrices."""
    u = np.asarray(upper, dtype=np.float64)
    m = np.zeros(u.shape[:-1] + (4, 4))
    m[..., UPPER[0], UPPER[1]] = u
    m[..., UPPER[1], UPPER[0]] = u
    return m


def matrix_to_upper(m: ArrayLike) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return m[..., UPPER[0], UPPER[1]].copy()


@dataclass(frozen=True, eq=False)
class Quadric:
    """Symmetric 4x4 error quadric stored as its 10 upper-triangular entries (row-major)."""

    upper: np.ndarray

    def __post_init__(self):
        u = np.array(self.upper, dtype=np.float64).reshape(10)
        u.setflags(write=False)
        object.__setattr__(self, "upper", u)

    @classmethod
    def zero(cls) -> Quadric:
        return cls(np.zeros(10))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> Quadric:
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_upper(0.5 * (m + m.T)))

    @property
    def matrix(self) -> np.ndarray:
        return upper_to_matrix(self.upper)

    @property
    def A(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def b(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @property
    def c(self) -> float:
        return float(self.upper[9])

    def __add__(self, other: Quadric) -> Quadric:
        return Quadric(self.upper + other.upper)

    def scaled(self, s: float) -> Quadric:
        return Quadric(self.upper * s)

    def __eq__(self, other):
        if not isinstance(other, Quadric):
            return NotImplemented
        return self.upper.tobytes() == other.upper.tobytes()

    def __repr__(self):
        return f"Quadric({np.array2string(self.upper, precision=4)})"


@dataclass(frozen=True)
class QemMinimizerConfig:
    """Settings for :func:`qem_minimize`.

    ``tau`` is the eigenvalue cutoff relative to the largest eigenvalue of the
    3x3 block. ``anchor`` selects the fallback point used by the fitters:
    ``"centroid"`` of the contributing samples or the ``"cell_center"``.
    """

    tau: float = 1e-3
    clamp: bool = True
    anchor: str = "centroid"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.anchor not in ("centroid", "cell_center"):
            raise ValueError(f"unknown anchor policy {self.anchor!r}")


def plane_from_sample(point: ArrayLike, unit_normal: ArrayLike) -> HPlane:
    """Tangent plane through ``point``: offset ``d = -n . p``."""
    p = np.asarray(point, dtype=np.float64)
    n = np.asarray(unit_normal, dtype=np.float64)
    return HPlane(np.append(n, -np.dot(n, p)))


def planes_from_samples(points: ArrayLike, normals: ArrayLike) -> np.ndarray:
    """Vectorized :func:`plane_from_sample`; returns (M, 4) without unit checks."""
    p = np.asarray(points, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    return np.concatenate([n, -np.einsum("ij,ij->i", n, p)[:, None]], axis=1)


def quadric_from_plane(plane: HPlane | ArrayLike) -> Quadric:
    n = plane.coeffs if isinstance(plane, HPlane) else np.asarray(plane, dtype=np.float64)
    return Quadric(matrix_to_upper(np.outer(n, n)))


def plane_quadrics(planes: ArrayLike) -> np.ndarray:
    """(M, 4) planes to (M, 10) rank-1 quadrics."""
    p = np.asarray(planes, dtype=np.float64)
    return p[:, UPPER[0]] * p[:, UPPER[1]]


def quadric_sum(*quadrics: Quadric) -> Quadric:
    total = np.zeros(10)
    for q in quadrics:
        total = total + q.upper
    return Quadric(total)


def qem_eval(quadric: Quadric | ArrayLike, position: ArrayLike) -> np.ndarray | float:
    """``v^T Q v`` with ``v = [x, y, z, 1]``; broadcasts over positions."""
    m = quadric.matrix if isinstance(quadric, Quadric) else upper_to_matrix(quadric)
    p = np.asarray(position, dtype=np.float64)
    v = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    val = np.einsum("...i,...ij,...j->...", v, m, v)
    val = np.maximum(val, 0.0) if np.ndim(val) else max(float(val), 0.0)
    return val


def minimize_batch(A, b, anchor, lo=None, hi=None, tau: float = 1e-3):
    """Truncated-eigenvalue minimizers of ``x^T A x + 2 b^T x + c`` for stacked problems.

    Directions whose eigenvalue falls below ``tau * lambda_max`` keep the
    anchor's component. With bounds, the result is the better of the clamped
    point and the anchor-to-optimum segment cut at the box, so the error never
    exceeds the anchor's.

    Returns ``(points, rank)``; ``rank == 0`` marks problems answered by the anchor.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    w, U = np.linalg.eigh(A)
    lam_max = w[..., -1:]
    keep = (w > tau * lam_max) & (lam_max > 0)
    rank = keep.sum(axis=-1)
    g = -b - np.einsum("...ij,...j->...i", A, anchor)
    coef = np.einsum("...ji,...j->...i", U, g)
    coef = np.where(keep, coef / np.where(keep, w, 1.0), 0.0)
    x = anchor + np.einsum("...ij,...j->...i", U, coef)
    full = rank == A.shape[-1]
    if np.any(full):
        # nothing truncated: the plain solve is the same point with less rounding
        x = np.where(full[..., None], _solve_full(A, b, full), x)
    if lo is not None:
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        clamped = np.clip(x, lo, hi)
        step = x - anchor
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(step > 0, (hi - anchor) / step, np.inf)
            t_lo = np.where(step < 0, (lo - anchor) / step, np.inf)
        t = np.clip(np.min(np.minimum(t_hi, t_lo), axis=-1), 0.0, 1.0)
        retract = np.clip(anchor + t[..., None] * step, lo, hi)
        e_cl = _quad_err(A, b, clamped)
        e_rt = _quad_err(A, b, retract)
        x = np.where((e_cl <= e_rt)[..., None], clamped, retract)
    return x, rank


def _solve_full(A, b, full):
    out = np.zeros(b.shape)
    if A.ndim == 2:
        return np.linalg.solve(A, -b)
    out[full] = np.linalg.solve(A[full], -b[full][..., None])[..., 0]
    return out


def _quad_err(A, b, x):
    return np.einsum("...i,...ij,...j->...", x, A, x) + 2.0 * np.einsum("...i,...i->...", b, x)


def qem_minimize(
    quadric: Quadric,
    anchor_point: ArrayLike,
    bounds: tuple[ArrayLike, ArrayLike] | None = None,
    config: QemMinimizerConfig | None = None,
    full_output: bool = False,
):
    """Optimal position of a quadric, stabilized around ``anchor_point``.

    Parameters
    ----------
    quadric : Quadric
        Error quadric, typically a sum of tangent-plane quadrics.
    anchor_point : array_like, shape (3,)
        Fallback for directions the quadric does not constrain.
    bounds : (lo, hi), optional
        Axis-aligned box the result must stay in (used when ``config.clamp``).
    config : QemMinimizerConfig, optional
    full_output : bool
        Also return ``{"rank": int, "degenerate": bool}``.

    Returns
    -------
    point : ndarray, shape (3,)
    """
    config = config or QemMinimizerConfig()
    if not np.all(np.isfinite(quadric.upper)):
        raise ValueError("quadric has non-finite entries")
    anchor = np.asarray(anchor_point, dtype=np.float64)
    if not np.all(np.isfinite(anchor)):
        raise ValueError("anchor must be finite")
    m = quadric.matrix
    lo = hi = None
    if bounds is not None and config.clamp:
        lo, hi = bounds
    x, rank = minimize_batch(m[:3, :3], m[:3, 3], anchor, lo, hi, config.tau)
    if full_output:
        return x, {"rank": int(rank), "degenerate": bool(rank == 0)}
    return x


def cluster_decimate(
    mesh: TriangleMesh, grid_resolution: int, config: QemMinimizerConfig | None = None
) -> TriangleMesh:
    """Vertex-clustering simplification with QEM-optimal representatives.

    Vertices are binned on a ``grid_resolution^3`` grid spanning the mesh
    bounding box. Each cell's vertices merge into one point minimizing the sum
    of the face-plane quadrics of those vertices, anchored at their mean and
    kept within the cell box grown by half a cell. Faces whose corners fall into
    fewer than three cells are dropped; every occupied cell keeps its vertex.
    """
    if grid_resolution < 1:
        raise ValueError("grid_resolution must be >= 1")
    config = config or QemMinimizerConfig()
    if mesh.n_vertices == 0:
        return TriangleMesh.empty()
    lo, hi = mesh.bounds()
    extent = np.where(hi - lo > 0, hi - lo, 1.0)
    cell = extent / grid_resolution
    ijk = np.clip(np.floor((mesh.vertices - lo) / cell).astype(np.int64), 0, grid_resolution - 1)
    key = (ijk[:, 2] * grid_resolution + ijk[:, 1]) * grid_resolution + ijk[:, 0]
    cells, label = np.unique(key, return_inverse=True)
    n_cells = len(cells)

    face_n = mesh.face_normals()
    ok = np.linalg.norm(face_n, axis=1) > 0
    planes = np.zeros((mesh.n_faces, 4))
    planes[ok] = planes_from_samples(mesh.vertices[mesh.faces[ok, 0]], face_n[ok])
    fq = plane_quadrics(planes)
    vq = np.zeros((mesh.n_vertices, 10))
    for k in range(3):
        np.add.at(vq, mesh.faces[:, k], fq)
    cq = np.zeros((n_cells, 10))
    np.add.at(cq, label, vq)
    cnt = np.bincount(label, minlength=n_cells)
    anchor = np.zeros((n_cells, 3))
    np.add.at(anchor, label, mesh.vertices)
    anchor /= cnt[:, None]

    cell_ijk = np.stack([cells % grid_resolution, (cells // grid_resolution) % grid_resolution,
                         cells // grid_resolution ** 2], axis=1)
    box_lo = lo + (cell_ijk - 0.5) * cell
    box_hi = lo + (cell_ijk + 1.5) * cell
    m = upper_to_matrix(cq)
    if config.clamp:
        pts, _ = minimize_batch(m[:, :3, :3], m[:, :3, 3], anchor, box_lo, box_hi, config.tau)
    else:
        pts, _ = minimize_batch(m[:, :3, :3], m[:, :3, 3], anchor, tau=config.tau)
    faces = label[mesh.faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 2] != faces[:, 0])
    return TriangleMesh(pts, faces[keep])
