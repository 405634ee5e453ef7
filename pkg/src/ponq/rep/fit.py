"""Closed-form per-cell fits of point, normal and quadric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry.sampling import SurfaceSampleSet
from ..qem import Quadric, minimize_batch, plane_quadrics, planes_from_samples, upper_to_matrix
from .grid import FitConfig, PoNQSample

ANTIPODAL_TOL = 1e-12


@dataclass(frozen=True)
class FitFlags:
    """Per-group diagnostics from :func:`fit_groups`."""

    degenerate: np.ndarray  # fewer than min_samples_per_cell samples
    antipodal: np.ndarray  # mean normal vanished, covariance fallback used
    rank: np.ndarray  # rank kept by the quadric solve


def _principal_normal(normals: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(normals.T @ normals)
    n = U[:, -1]
    dots = normals @ n
    pos, neg = int((dots > 0).sum()), int((dots < 0).sum())
    if neg > pos or (neg == pos and n[np.flatnonzero(np.abs(n) > 0)[0]] < 0):
        n = -n
    return n


def fit_groups(
    points: np.ndarray,
    normals: np.ndarray,
    offsets: np.ndarray,
    box_lo: np.ndarray | None,
    box_hi: np.ndarray | None,
    config: FitConfig,
    anchors: np.ndarray | None = None,
):
    """Fit one (point, normal, quadric) per contiguous group of samples.

    ``points``/``normals`` are pre-sorted so group ``g`` spans
    ``offsets[g]:offsets[g + 1]``. Boxes are the clamp region per group
    (ignored when ``None`` or when clamping is disabled). Returns
    ``(v_hat, n, q_upper, FitFlags)``.
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    starts = np.asarray(offsets[:-1], dtype=np.int64)
    cnt = np.diff(offsets).astype(np.int64)
    if np.any(cnt < 1):
        raise ValueError("empty sample group")
    G = len(cnt)
    planes = planes_from_samples(points, normals)
    kq = plane_quadrics(planes)

    n_sum = np.add.reduceat(normals, starts, axis=0)
    q_sum = np.add.reduceat(kq, starts, axis=0)
    centroid = np.add.reduceat(points, starts, axis=0) / cnt[:, None]

    n_len = np.linalg.norm(n_sum, axis=1)
    antipodal = n_len <= ANTIPODAL_TOL * cnt
    n_fit = n_sum / np.where(antipodal, 1.0, n_len)[:, None]
    for g in np.flatnonzero(antipodal):
        n_fit[g] = _principal_normal(normals[starts[g] : starts[g] + cnt[g]])
    q_fit = q_sum / cnt[:, None] if config.quadric_mode == "mean" else q_sum

    degenerate = cnt < config.min_samples_per_cell
    if degenerate.any():
        first = starts[degenerate]
        n_fit[degenerate] = normals[first]
        q_fit[degenerate] = kq[first]
        antipodal = antipodal & ~degenerate

    anchor = centroid if anchors is None else np.asarray(anchors, dtype=np.float64)
    m = upper_to_matrix(q_fit)
    if box_lo is not None and config.qem.clamp:
        v_fit, rank = minimize_batch(m[:, :3, :3], m[:, :3, 3], anchor, box_lo, box_hi, config.qem.tau)
    else:
        v_fit, rank = minimize_batch(m[:, :3, :3], m[:, :3, 3], anchor, tau=config.qem.tau)
    assert v_fit.shape == (G, 3)
    return v_fit, n_fit, q_fit, FitFlags(degenerate, antipodal, rank)


def kmeans_partition(points: np.ndarray, k: int, iterations: int = 20, seed=0) -> np.ndarray:
    """Lloyd k-means labels with seeded farthest-point initialization.

    Ties in assignment go to the lowest centre index. Labels are renumbered
    to be contiguous in order of first appearance of each centre index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    k = min(k, len(np.unique(pts, axis=0)))
    if k <= 1:
        return np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    centers = [pts[int(rng.integers(n))]]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        j = int(np.argmax(d2))
        centers.append(pts[j])
        d2 = np.minimum(d2, np.sum((pts - pts[j]) ** 2, axis=1))
    c = np.array(centers)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iterations):
        dist = np.sum((pts[:, None, :] - c[None]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        for j in range(k):
            sel = new == j
            if sel.any():
                c[j] = pts[sel].mean(axis=0)
        if np.array_equal(new, labels):
            break
        labels = new
    used = np.unique(labels)
    return np.searchsorted(used, labels)


def fit_cell(
    cell_samples: SurfaceSampleSet | tuple[np.ndarray, np.ndarray],
    K: int = 1,
    config: FitConfig | None = None,
    cell_box: tuple[np.ndarray, np.ndarray] | None = None,
    seed=None,
) -> list[PoNQSample]:
    """Optimal PoNQ samples for the surface samples of one cell.

    For ``K == 1`` the normal is the normalized mean sample normal, the
    quadric is the mean (or sum) of the tangent-plane quadrics and the point
    minimizes the quadric, anchored at the sample centroid. ``cell_box`` bounds
    the point after growing it by half a cell on every side. For ``K > 1`` the
    samples are split by k-means first and each cluster is fitted alone.
    """
    config = config or FitConfig()
    if isinstance(cell_samples, SurfaceSampleSet):
        pts, nrm = cell_samples.points, cell_samples.normals
    else:
        pts, nrm = (np.asarray(a, dtype=np.float64) for a in cell_samples)
    if len(pts) == 0:
        raise ValueError("cell has no samples")
    labels = kmeans_partition(pts, K, config.kmeans_iterations, config.seed if seed is None else seed)
    order = np.argsort(labels, kind="stable")
    offsets = np.append(np.searchsorted(labels[order], np.arange(labels.max() + 1)), len(order))
    lo = hi = None
    if cell_box is not None:
        blo, bhi = (np.asarray(b, dtype=np.float64) for b in cell_box)
        pad = 0.5 * (bhi - blo)
        lo = np.broadcast_to(blo - pad, (len(offsets) - 1, 3))
        hi = np.broadcast_to(bhi + pad, (len(offsets) - 1, 3))
    anchors = None
    if config.qem.anchor == "cell_center" and cell_box is not None:
        anchors = np.broadcast_to(0.5 * (blo + bhi), (len(offsets) - 1, 3))
    v, n, q, _ = fit_groups(pts[order], nrm[order], offsets, lo, hi, config, anchors)
    return [PoNQSample(v[g], n[g], Quadric(q[g])) for g in range(len(v))]
