from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry.mesh import _frozen
from ..geometry.sampling import SurfaceSampleSet
from ..qem import QemMinimizerConfig, Quadric

DEFAULT_BOUNDS = (-0.5, -0.5, -0.5, 0.5, 0.5, 0.5)


def _bounds_arrays(bounds) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(bounds, dtype=np.float64).reshape(6)
    lo, hi = b[:3], b[3:]
    if np.any(hi <= lo):
        raise ValueError(f"invalid bounds {tuple(b)}")
    return lo, hi


def linear_index(ijk: np.ndarray, n: int) -> np.ndarray:
    """x-fastest linearization ``i + n * (j + n * k)``."""
    ijk = np.asarray(ijk, dtype=np.int64)
    return ijk[..., 0] + n * (ijk[..., 1] + n * ijk[..., 2])


def unravel_index(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return np.stack([idx % n, (idx // n) % n, idx // (n * n)], axis=-1)


@dataclass(frozen=True)
class PoNQSample:
    point: np.ndarray
    normal: np.ndarray
    quadric: Quadric

    def __eq__(self, other):
        if not isinstance(other, PoNQSample):
            return NotImplemented
        return (
            self.point.tobytes() == other.point.tobytes()
            and self.normal.tobytes() == other.normal.tobytes()
            and self.quadric == other.quadric
        )


@dataclass(frozen=True)
class FitConfig:
    """Weights and knobs for fitting cell parameters.

    ``quadric_mode="mean"`` stores the mean of the sample quadrics (the
    Frobenius-loss minimizer); ``"sum"`` stores their sum. Positions do not depend
    on this choice.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    K: int = 1
    min_samples_per_cell: int = 3
    qem: QemMinimizerConfig = field(default_factory=QemMinimizerConfig)
    quadric_mode: str = "mean"
    kmeans_iterations: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("loss weights must be non-negative with a positive sum")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.min_samples_per_cell < 1:
            raise ValueError("min_samples_per_cell must be >= 1")
        if self.quadric_mode not in ("mean", "sum"):
            raise ValueError(f"unknown quadric_mode {self.quadric_mode!r}")


@dataclass(frozen=True, eq=False)
class PoNQGrid:
    """Sparse N^3 grid of per-cell (point, normal, quadric) samples.

    Samples are stored flat and grouped by cell: cell ``m`` (linear index
    ``cell_index[m]``) owns rows ``offsets[m]:offsets[m + 1]`` of ``points``,
    ``normals`` and ``quadrics`` (upper-triangular, 10 columns). Cells are
    sorted by linear index.
    """

    N: int
    K: int
    bounds: tuple[float, ...]
    cell_index: np.ndarray
    counts: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    quadrics: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "bounds", tuple(float(x) for x in np.asarray(self.bounds).reshape(6)))
        _bounds_arrays(self.bounds)
        ci = np.asarray(self.cell_index, dtype=np.int64).reshape(-1)
        cnt = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(self.quadrics, dtype=np.float64).reshape(-1, 10)
        if self.N < 1 or self.K < 1:
            raise ValueError("N and K must be >= 1")
        if len(ci) != len(cnt):
            raise ValueError("cell_index and counts differ in length")
        if len(ci) and (np.any(np.diff(ci) <= 0) or ci[0] < 0 or ci[-1] >= self.N ** 3):
            raise ValueError("cell indices must be strictly increasing and < N^3")
        if np.any(cnt < 1) or np.any(cnt > self.K):
            raise ValueError("every stored cell must hold between 1 and K samples")
        if not (len(pts) == len(nrm) == len(q) == int(cnt.sum())):
            raise ValueError("sample arrays disagree with cell counts")
        for name, arr in (("cell_index", ci), ("counts", cnt), ("points", pts), ("normals", nrm), ("quadrics", q)):
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def empty(cls, N: int, K: int = 1, bounds=DEFAULT_BOUNDS) -> PoNQGrid:
        z = np.zeros(0)
        return cls(N, K, bounds, z, z, z, z, z)

    @property
    def n_cells(self) -> int:
        return len(self.cell_index)

    @property
    def n_samples(self) -> int:
        return len(self.points)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.bounds[:3])

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.bounds[3:])

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / self.N

    def sample_cells(self) -> np.ndarray:
        """Linear cell index of every stored sample."""
        return np.repeat(self.cell_index, self.counts)

    def cell_box(self, idx) -> tuple[np.ndarray, np.ndarray]:
        ijk = unravel_index(idx, self.N)
        return self.lo + ijk * self.spacing, self.lo + (ijk + 1) * self.spacing

    def cells(self) -> dict[int, list[PoNQSample]]:
        out = {}
        off = self.offsets
        for m, c in enumerate(self.cell_index.tolist()):
            out[c] = [
                PoNQSample(self.points[s].copy(), self.normals[s].copy(), Quadric(self.quadrics[s]))
                for s in range(off[m], off[m + 1])
            ]
        return out

    def select_cells(self, keep: np.ndarray) -> PoNQGrid:
        """Grid restricted to the stored cells flagged in ``keep`` (length n_cells)."""
        keep = np.asarray(keep, dtype=bool)
        rows = np.repeat(keep, self.counts)
        return PoNQGrid(self.N, self.K, self.bounds, self.cell_index[keep], self.counts[keep],
                        self.points[rows], self.normals[rows], self.quadrics[rows])

    def __eq__(self, other):
        if not isinstance(other, PoNQGrid):
            return NotImplemented
        return (
            self.N == other.N and self.K == other.K
            and np.array_equal(np.asarray(self.bounds).view(np.uint64), np.asarray(other.bounds).view(np.uint64))
            and np.array_equal(self.cell_index, other.cell_index)
            and np.array_equal(self.counts, other.counts)
            and self.points.tobytes() == other.points.tobytes()
            and self.normals.tobytes() == other.normals.tobytes()
            and self.quadrics.tobytes() == other.quadrics.tobytes()
        )

    def __repr__(self):
        return f"PoNQGrid(N={self.N}, K={self.K}, cells={self.n_cells}, samples={self.n_samples})"


@dataclass(frozen=True, eq=False)
class CellBins:
    """Assignment of surface samples to grid cells.

    ``order`` lists sample indices grouped by cell (ascending within a cell);
    cell ``m`` owns ``order[offsets[m]:offsets[m + 1]]``.
    """

    N: int
    bounds: tuple[float, ...]
    cells: np.ndarray
    order: np.ndarray
    offsets: np.ndarray
    sample_cell: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = _bounds_arrays(self.bounds)
        return (hi - lo) / self.N

    def cell_centers(self) -> np.ndarray:
        lo, _ = _bounds_arrays(self.bounds)
        return lo + (unravel_index(self.cells, self.N) + 0.5) * self.spacing

    def cell_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        lo, _ = _bounds_arrays(self.bounds)
        ijk = unravel_index(self.cells, self.N)
        return lo + ijk * self.spacing, lo + (ijk + 1) * self.spacing

    def members(self, m: int) -> np.ndarray:
        return self.order[self.offsets[m] : self.offsets[m + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def cell_of_points(points, bounds, N: int) -> np.ndarray:
    """Integer (i, j, k) cell of each point: floor rule, clamped to [0, N - 1]."""
    lo, hi = _bounds_arrays(bounds)
    spacing = (hi - lo) / N
    ijk = np.floor((np.asarray(points, dtype=np.float64) - lo) / spacing).astype(np.int64)
    return np.clip(ijk, 0, N - 1)


def bin_samples(samples: SurfaceSampleSet, bounds=DEFAULT_BOUNDS, N: int = 32) -> CellBins:
    """Split samples into the cells of an N^3 grid over ``bounds``.

    Cells are half-open ``[lo, hi)`` per axis, except the last which also
    takes points on the upper bound.
    """
    pts = samples.points if isinstance(samples, SurfaceSampleSet) else np.asarray(samples, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot bin an empty sample set")
    lo, hi = _bounds_arrays(bounds)
    if np.any(pts < lo) or np.any(pts > hi):
        raise ValueError("sample points fall outside the grid bounds")
    lin = linear_index(cell_of_points(pts, bounds, N), N)
    order = np.argsort(lin, kind="stable")
    cells, start = np.unique(lin[order], return_index=True)
    offsets = np.append(start, len(order))
    b = tuple(float(x) for x in np.asarray(bounds).reshape(6))
    return CellBins(int(N), b, _frozen(cells), _frozen(order), _frozen(offsets), _frozen(lin))
