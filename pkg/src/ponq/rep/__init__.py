"""Point/normal/quadric voxel-grid representation."""
from .encode import EncodeResult, encode_mesh, fit_bins
from .fit import FitFlags, fit_cell, fit_groups, kmeans_partition
from .grid import (
    DEFAULT_BOUNDS, CellBins, FitConfig, PoNQGrid, PoNQSample, bin_samples,
    cell_of_points, linear_index, unravel_index,
)
from .io import read_ponq, write_ponq
from .losses import GridMismatchError, assign_samples, loss_feat, loss_n, loss_q, loss_summary, loss_v

__all__ = [
    "DEFAULT_BOUNDS", "CellBins", "EncodeResult", "FitConfig", "FitFlags", "GridMismatchError",
    "PoNQGrid", "PoNQSample", "assign_samples", "bin_samples", "cell_of_points", "encode_mesh",
    "fit_bins", "fit_cell", "fit_groups", "kmeans_partition", "linear_index", "loss_feat",
    "loss_n", "loss_q", "loss_summary", "loss_v", "read_ponq", "unravel_index", "write_ponq",
]
