"""Crust occupancy, latent-grid feature sampling and mask application."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike

from .errors import FormatError
from .geometry.boxes import rasterize_triangles
from .geometry.mesh import TriangleMesh, _frozen
from .geometry.sampling import sample_surface
from .rep.grid import DEFAULT_BOUNDS, PoNQGrid, _bounds_arrays, cell_of_points, linear_index

OCC_MAGIC = b"OCCG"
LAT_MAGIC = b"LATG"
_OCC_HEADER = struct.Struct("<4sII")
_LAT_HEADER = struct.Struct("<4sIII6d")
_LAT_STATS = struct.Struct("<2d")


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean N^3 crust mask, ``values[i, j, k]`` with x index first."""

    N: int
    values: np.ndarray
    bounds: tuple[float, ...] = DEFAULT_BOUNDS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.shape != (self.N,) * 3:
            raise ValueError(f"occupancy values must have shape {(self.N,) * 3}")
        object.__setattr__(self, "values", _frozen(v))

    def linear_true(self) -> np.ndarray:
        """Sorted linear indices of occupied cells (x-fastest)."""
        return np.flatnonzero(self.values.ravel(order="F"))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.N == other.N and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class TrainPoint:
    position: np.ndarray
    occupied: bool


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """``c`` feature channels on an ``n^3`` node grid; nodes sit at cell centres.

    ``stats`` optionally carries the (min, max) used to normalize the values.
    """

    values: np.ndarray
    bounds: tuple[float, ...] = DEFAULT_BOUNDS
    stats: tuple[float, float] | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 4 or not (v.shape[1] == v.shape[2] == v.shape[3]):
            raise ValueError(f"latent values must have shape (c, n, n, n), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent values must be finite")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "bounds", tuple(float(x) for x in np.asarray(self.bounds).reshape(6)))

    @property
    def c(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = _bounds_arrays(self.bounds)
        return (hi - lo) / self.n

    def __eq__(self, other):
        if not isinstance(other, LatentGrid):
            return NotImplemented
        return (
            self.values.dtype == other.values.dtype
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.bounds == other.bounds
            and self.stats == other.stats
        )


class OccupancyPredictor(Protocol):
    """Maps (M, 7c + 3) feature rows to occupancy probabilities in [0, 1]."""

    def __call__(self, features: np.ndarray) -> np.ndarray: ...


# --- ground truth ----------------------------------------------------------

def occupancy_from_mesh(mesh: TriangleMesh, N: int, bounds=DEFAULT_BOUNDS) -> OccupancyGrid:
    """Cells whose closed box meets at least one triangle."""
    lo, hi = _bounds_arrays(bounds)
    spacing = (hi - lo) / N
    if not np.allclose(spacing, spacing[0], rtol=0, atol=1e-15 * np.abs(spacing).max()):
        raise ValueError("occupancy grids need cubic cells")
    vals = np.zeros((N, N, N), dtype=bool)
    if mesh.n_faces:
        ijk, _ = rasterize_triangles(mesh.triangles, lo, float(spacing[0]), N)
        vals[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True
    return OccupancyGrid(N, vals, tuple(float(x) for x in np.asarray(bounds).reshape(6)))


def sample_train_points(
    mesh: TriangleMesh,
    count: int,
    displacement_sigma: float = 1.5,
    seed: int = 0,
    N: int = 32,
    bounds=DEFAULT_BOUNDS,
    occupancy: OccupancyGrid | None = None,
) -> list[TrainPoint]:
    """Surface samples displaced by isotropic Gaussian noise and labelled by crust occupancy.

    ``displacement_sigma`` is in cell units.
    """
    pts, occ = train_point_arrays(mesh, count, displacement_sigma, seed, N, bounds, occupancy)
    return [TrainPoint(p, bool(o)) for p, o in zip(pts, occ)]


def train_point_arrays(mesh, count, displacement_sigma=1.5, seed=0, N=32, bounds=DEFAULT_BOUNDS, occupancy=None):
    """Array form of :func:`sample_train_points`: ``(positions (M, 3), labels (M,))``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = _bounds_arrays(bounds)
    spacing = (hi - lo) / N
    rng = np.random.default_rng(seed)
    surf = sample_surface(mesh, count, int(rng.integers(2 ** 63)))
    pts = surf.points + rng.normal(size=(count, 3)) * (displacement_sigma * spacing)
    pts = np.clip(pts, lo, hi)
    occ = occupancy if occupancy is not None else occupancy_from_mesh(mesh, N, bounds)
    ijk = cell_of_points(pts, bounds, N)
    return pts, occ.values[ijk[:, 0], ijk[:, 1], ijk[:, 2]]


# --- latent sampling -------------------------------------------------------

NODE_SNAP = 1e-12


def trilinear_sample(latent: LatentGrid, position: ArrayLike) -> np.ndarray:
    """Trilinear blend of node features; positions beyond the outer nodes clamp to them.

    ``position`` is (3,) or (M, 3); returns (c,) or (M, c).
    """
    p = np.asarray(position, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("position must be finite")
    q = p.reshape(-1, 3)
    lo, _ = _bounds_arrays(latent.bounds)
    n = latent.n
    u = (q - lo) / latent.spacing - 0.5
    u = np.clip(u, 0.0, n - 1)
    # node positions round-trip through (q - lo) / spacing with a few ulps of error
    r = np.round(u)
    u = np.where(np.abs(u - r) <= NODE_SNAP * np.maximum(1.0, r), r, u)
    i0 = np.minimum(np.floor(u).astype(np.int64), max(n - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, n - 1)
    vals = latent.values.astype(np.float64, copy=False)
    out = np.zeros((len(q), latent.c))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        ix = i1[:, 0] if dx else i0[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            iy = i1[:, 1] if dy else i0[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                iz = i1[:, 2] if dz else i0[:, 2]
                out += (wx * wy * wz)[:, None] * vals[:, ix, iy, iz].T
    return out[0] if p.ndim == 1 else out


NEIGHBOR_OFFSETS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)


def gather_feature(latent: LatentGrid, position: ArrayLike, h: float | None = None) -> np.ndarray:
    """Feature row ``[F(p), F(p+h x), F(p-h x), F(p+h y), F(p-h y), F(p+h z), F(p-h z), p01]``.

    ``h`` defaults to one cell; ``p01`` is the position normalized to [0, 1]^3
    by the latent bounds. Rows have length ``7c + 3``.
    """
    p = np.asarray(position, dtype=np.float64)
    q = p.reshape(-1, 3)
    lo, hi = _bounds_arrays(latent.bounds)
    step = latent.spacing if h is None else np.full(3, float(h))
    blocks = [trilinear_sample(latent, q)]
    for off in NEIGHBOR_OFFSETS:
        blocks.append(trilinear_sample(latent, q + off * step))
    blocks.append((q - lo) / (hi - lo))
    z = np.concatenate(blocks, axis=1)
    return z[0] if p.ndim == 1 else z


def cell_centers(N: int, bounds=DEFAULT_BOUNDS) -> np.ndarray:
    """(N^3, 3) centres in x-fastest linear order."""
    lo, hi = _bounds_arrays(bounds)
    s = (hi - lo) / N
    k, j, i = np.meshgrid(np.arange(N), np.arange(N), np.arange(N), indexing="ij")
    ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
    return lo + (ijk + 0.5) * s


class MeshOraclePredictor:
    """Predictor reading ground-truth occupancy at the cell addressed by a feature row.

    Uses only the trailing normalized coordinates of the row.
    """

    def __init__(self, occupancy: OccupancyGrid):
        self.occupancy = occupancy

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, N: int, bounds=DEFAULT_BOUNDS) -> MeshOraclePredictor:
        return cls(occupancy_from_mesh(mesh, N, bounds))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        N = self.occupancy.N
        p01 = np.asarray(features)[:, -3:]
        ijk = np.clip(np.floor(p01 * N).astype(np.int64), 0, N - 1)
        return self.occupancy.values[ijk[:, 0], ijk[:, 1], ijk[:, 2]].astype(np.float64)


class ConstantPredictor:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return np.full(len(features), self.value)


def _probabilities(predictor, features):
    prob = np.asarray(predictor(features), dtype=np.float64).reshape(-1)
    if len(prob) != len(features):
        raise ValueError("predictor returned the wrong number of probabilities")
    if np.any(~np.isfinite(prob)) or np.any(prob < 0) or np.any(prob > 1):
        raise ValueError("predictor output must lie in [0, 1]")
    return prob


def predict_mask(
    predictor: OccupancyPredictor, latent: LatentGrid, N: int | None = None,
    threshold: float = 0.5, chunk: int = 65536,
) -> OccupancyGrid:
    """Evaluate the predictor at every cell centre; cells with probability >= threshold are kept."""
    N = latent.n if N is None else int(N)
    centers = cell_centers(N, latent.bounds)
    keep = np.empty(len(centers), dtype=bool)
    for s in range(0, len(centers), chunk):
        feats = gather_feature(latent, centers[s : s + chunk])
        keep[s : s + chunk] = _probabilities(predictor, feats) >= threshold
    vals = keep.reshape(N, N, N).transpose(2, 1, 0)
    return OccupancyGrid(N, vals, latent.bounds)


def predict_sample_mask(predictor: OccupancyPredictor, latent: LatentGrid, grid: PoNQGrid, threshold: float = 0.5) -> np.ndarray:
    """Per-sample alternative: query the predictor at each stored point, not per cell."""
    if grid.n_samples == 0:
        return np.zeros(0, dtype=bool)
    return _probabilities(predictor, gather_feature(latent, grid.points)) >= threshold


def mask_apply(ponq_grid: PoNQGrid, mask: OccupancyGrid) -> PoNQGrid:
    """Drop every stored cell the mask marks false."""
    if mask.N != ponq_grid.N:
        raise ValueError(f"mask resolution {mask.N} != grid resolution {ponq_grid.N}")
    flat = mask.values.ravel(order="F")
    return ponq_grid.select_cells(flat[ponq_grid.cell_index])


def mask_apply_samples(ponq_grid: PoNQGrid, keep: np.ndarray) -> PoNQGrid:
    """Keep individual samples (for the per-sample mask); emptied cells disappear."""
    keep = np.asarray(keep, dtype=bool)
    counts = np.bincount(np.repeat(np.arange(ponq_grid.n_cells), ponq_grid.counts)[keep], minlength=ponq_grid.n_cells)
    alive = counts > 0
    return PoNQGrid(ponq_grid.N, ponq_grid.K, ponq_grid.bounds, ponq_grid.cell_index[alive], counts[alive],
                    ponq_grid.points[keep], ponq_grid.normals[keep], ponq_grid.quadrics[keep])


def latent_from_occupancy(occ: OccupancyGrid) -> LatentGrid:
    """One-channel surrogate latent: +1 on the crust, -1 elsewhere, box-smoothed over one cell."""
    from scipy.ndimage import uniform_filter

    signed = np.where(occ.values, 1.0, -1.0)
    smooth = uniform_filter(signed, size=3, mode="nearest")
    return LatentGrid(smooth[None], occ.bounds)


# --- file formats ----------------------------------------------------------

def write_occupancy(grid: OccupancyGrid) -> bytes:
    bits = np.packbits(grid.values.ravel(order="F"), bitorder="little")
    return _OCC_HEADER.pack(OCC_MAGIC, 1, grid.N) + bits.tobytes()


def read_occupancy(data: bytes, bounds=DEFAULT_BOUNDS) -> OccupancyGrid:
    if len(data) < _OCC_HEADER.size:
        raise FormatError("OCCG payload truncated in header")
    magic, version, N = _OCC_HEADER.unpack_from(data)
    if magic != OCC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {OCC_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported OCCG version {version}")
    body = np.frombuffer(data, dtype=np.uint8, offset=_OCC_HEADER.size)
    need = (N ** 3 + 7) // 8
    if len(body) != need:
        raise FormatError(f"OCCG payload has {len(body)} bytes of cells, expected {need}")
    bits = np.unpackbits(body, bitorder="little")[: N ** 3].astype(bool)
    return OccupancyGrid(N, bits.reshape((N, N, N), order="F"), bounds)


def write_latent(latent: LatentGrid) -> bytes:
    """LATG payload; version 2 appends the (min, max) normalization stats."""
    version = 1 if latent.stats is None else 2
    head = _LAT_HEADER.pack(LAT_MAGIC, version, latent.c, latent.n, *latent.bounds)
    if latent.stats is not None:
        head += _LAT_STATS.pack(*latent.stats)
    # channel-major, x fastest within a channel
    body = np.ascontiguousarray(latent.values.astype("<f4").transpose(0, 3, 2, 1)).tobytes()
    return head + body


def read_latent(data: bytes) -> LatentGrid:
    if len(data) < _LAT_HEADER.size:
        raise FormatError("LATG payload truncated in header")
    magic, version, c, n, *bounds = _LAT_HEADER.unpack_from(data)
    if magic != LAT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LAT_MAGIC!r}")
    pos = _LAT_HEADER.size
    stats = None
    if version == 2:
        if len(data) < pos + _LAT_STATS.size:
            raise FormatError("LATG payload truncated in stats")
        stats = tuple(float(x) for x in _LAT_STATS.unpack_from(data, pos))
        pos += _LAT_STATS.size
    elif version != 1:
        raise FormatError(f"unsupported LATG version {version}")
    need = 4 * c * n ** 3
    if len(data) - pos != need:
        raise FormatError(f"LATG payload has {len(data) - pos} value bytes, expected {need}")
    vals = np.frombuffer(data, dtype="<f4", offset=pos).reshape(c, n, n, n).transpose(0, 3, 2, 1)
    try:
        return LatentGrid(vals.astype(np.float32), tuple(bounds), stats)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
