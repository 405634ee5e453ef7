"""Supervision losses of a fitted grid against its surface samples."""
from __future__ import annotations

import numpy as np

from ..geometry.sampling import SurfaceSampleSet
from ..qem import plane_quadrics, planes_from_samples, upper_to_matrix
from .grid import CellBins, FitConfig, PoNQGrid


class GridMismatchError(ValueError):
    pass


def assign_samples(grid: PoNQGrid, bins: CellBins, samples: SurfaceSampleSet) -> np.ndarray:
    """Row of ``grid`` charged with each surface sample.

    The row is the fitted sample of the same cell whose point is nearest to
    the surface sample (lowest row on ties).
    """
    if grid.N != bins.N or not np.array_equal(grid.cell_index, bins.cells):
        raise GridMismatchError("grid cells do not match the sample bins")
    cell_row = np.searchsorted(grid.cell_index, bins.sample_cell)
    off = grid.offsets
    if grid.K == 1 or np.all(grid.counts == 1):
        return off[cell_row]
    K = int(grid.counts.max())
    first = off[cell_row]
    cand = first[:, None] + np.arange(K)[None]
    valid = np.arange(K)[None] < grid.counts[cell_row][:, None]
    cand = np.where(valid, cand, first[:, None])
    d = np.sum((grid.points[cand] - samples.points[:, None]) ** 2, axis=2)
    d = np.where(valid, d, np.inf)
    return cand[np.arange(len(cand)), np.argmin(d, axis=1)]


def _residuals(grid, bins, samples):
    rows = assign_samples(grid, bins, samples)
    planes = planes_from_samples(samples.points, samples.normals)
    return rows, planes


def _per_cell_mean(values: np.ndarray, bins: CellBins) -> float:
    # sum within each cell in sample-index order, then sum cells, over cell count
    per_cell = np.add.reduceat(values[bins.order], bins.offsets[:-1])
    return float(per_cell.sum() / bins.n_cells)


def loss_v(grid: PoNQGrid, bins: CellBins, samples: SurfaceSampleSet) -> float:
    """Mean over cells of summed squared homogeneous-plane residuals of the fitted points."""
    rows, planes = _residuals(grid, bins, samples)
    v = np.concatenate([grid.points[rows], np.ones((len(rows), 1))], axis=1)
    r = np.einsum("ij,ij->i", v, planes)
    return _per_cell_mean(r * r, bins)


def loss_n(grid: PoNQGrid, bins: CellBins, samples: SurfaceSampleSet) -> float:
    rows = assign_samples(grid, bins, samples)
    d = grid.normals[rows] - samples.normals
    return _per_cell_mean(np.einsum("ij,ij->i", d, d), bins)


def loss_q(grid: PoNQGrid, bins: CellBins, samples: SurfaceSampleSet) -> float:
    """Mean over cells of summed squared Frobenius distances to the sample quadrics."""
    rows, planes = _residuals(grid, bins, samples)
    diff = upper_to_matrix(grid.quadrics[rows] - plane_quadrics(planes))
    return _per_cell_mean(np.einsum("ijk,ijk->i", diff, diff), bins)


def loss_feat(grid: PoNQGrid, bins: CellBins, samples: SurfaceSampleSet, config: FitConfig | None = None) -> float:
    config = config or FitConfig()
    return (
        config.alpha * loss_v(grid, bins, samples)
        + config.beta * loss_n(grid, bins, samples)
        + config.gamma * loss_q(grid, bins, samples)
    )


def loss_summary(grid, bins, samples, config: FitConfig | None = None) -> dict[str, float]:
    config = config or FitConfig()
    lv, ln, lq = loss_v(grid, bins, samples), loss_n(grid, bins, samples), loss_q(grid, bins, samples)
    return {
        "loss_v": lv, "loss_n": ln, "loss_q": lq,
        "loss_feat": config.alpha * lv + config.beta * ln + config.gamma * lq,
    }
