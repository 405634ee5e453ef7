from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..geometry.mesh import TriangleMesh, normalize_mesh
from ..geometry.sampling import SurfaceSampleSet, sample_surface
from .fit import FitFlags, fit_groups, kmeans_partition
from .grid import DEFAULT_BOUNDS, CellBins, FitConfig, PoNQGrid, bin_samples

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncodeResult:
    grid: PoNQGrid
    mesh: TriangleMesh
    samples: SurfaceSampleSet
    bins: CellBins
    flags: FitFlags


def fit_bins(samples: SurfaceSampleSet, bins: CellBins, config: FitConfig | None = None) -> tuple[PoNQGrid, FitFlags]:
    """Fit every occupied cell of ``bins`` into a :class:`PoNQGrid`."""
    config = config or FitConfig()
    pts = samples.points[bins.order]
    nrm = samples.normals[bins.order]
    cell_counts = bins.counts()
    box_lo, box_hi = bins.cell_boxes()
    pad = 0.5 * bins.spacing
    if config.K == 1:
        offsets = bins.offsets
        group_cells = np.arange(bins.n_cells)
        perm = np.arange(len(pts))
    else:
        # split each cell by k-means; groups stay contiguous and cell-ordered
        perm_parts, group_cells, sizes = [], [], []
        for m in range(bins.n_cells):
            s, e = bins.offsets[m], bins.offsets[m + 1]
            lab = kmeans_partition(pts[s:e], config.K, config.kmeans_iterations, (config.seed, int(bins.cells[m])))
            o = np.argsort(lab, kind="stable")
            perm_parts.append(s + o)
            c = np.bincount(lab)
            sizes.extend(c.tolist())
            group_cells.extend([m] * len(c))
        perm = np.concatenate(perm_parts)
        group_cells = np.asarray(group_cells, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
    anchors = None
    if config.qem.anchor == "cell_center":
        anchors = bins.cell_centers()[group_cells]
    v, n, q, flags = fit_groups(
        pts[perm], nrm[perm], offsets,
        (box_lo - pad)[group_cells], (box_hi + pad)[group_cells],
        config, anchors,
    )
    counts = np.bincount(group_cells, minlength=bins.n_cells)
    assert np.all(counts <= config.K) and np.all(counts <= cell_counts)
    grid = PoNQGrid(bins.N, config.K, bins.bounds, bins.cells, counts, v, n, q)
    return grid, flags


def encode_mesh(
    mesh: TriangleMesh,
    N: int = 32,
    K: int = 1,
    sample_count: int = 100_000,
    seed: int = 0,
    config: FitConfig | None = None,
    normalize: bool = True,
    bounds=DEFAULT_BOUNDS,
    full_output: bool = False,
):
    """Encode a mesh as a PoNQ grid.

    The mesh is first scaled into ``[-0.45, 0.45]^3`` (unless ``normalize`` is
    false), sampled, binned on an ``N^3`` grid over ``bounds`` and fitted cell
    by cell.
    """
    config = config or FitConfig(K=K)
    if config.K != K:
        config = replace(config, K=K)
    if normalize:
        mesh = normalize_mesh(mesh)
    samples = sample_surface(mesh, sample_count, seed)
    bins = bin_samples(samples, bounds, N)
    grid, flags = fit_bins(samples, bins, config)
    n_deg = int(flags.degenerate.sum())
    n_anti = int(flags.antipodal.sum())
    if n_deg or n_anti:
        log.info("fitted %d cells: %d thin, %d with cancelling normals", grid.n_cells, n_deg, n_anti)
    if full_output:
        return EncodeResult(grid, mesh, samples, bins, flags)
    return grid
