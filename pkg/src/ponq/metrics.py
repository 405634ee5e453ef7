"""Point-cloud generation metrics: CD, EMD, MMD, COV, 1-NNA, JSD and mesh-quality rates."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import PonqError
from .geometry.audit import audit_mesh
from .geometry.mesh import TriangleMesh
from .geometry.obj import read_obj
from .geometry.sampling import sample_surface
from .seeding import derive_seed

log = logging.getLogger(__name__)

HUNGARIAN_MAX = 512
AUCTION_RTOL = 1e-4
METRICS = ("cd", "emd")


def _cloud(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError("point cloud has non-finite coordinates")
    return a


def chamfer(a, b) -> float:
    """Average of the two one-sided mean squared nearest-neighbour distances."""
    a, b = _cloud(a), _cloud(b)
    return 0.5 * (_mean_sq_nn(a, b) + _mean_sq_nn(b, a))


def _mean_sq_nn(a: np.ndarray, b: np.ndarray) -> float:
    _, j = cKDTree(b).query(a)
    # recompute from coordinates rather than squaring the tree's rounded distance
    d2 = np.sum((a - b[j]) ** 2, axis=1)
    return float(np.mean(d2))


def _auction(cost: np.ndarray, eps_final: float) -> np.ndarray:
    """Assignment within ``n * eps_final`` of the optimal total cost.

    Jacobi forward auction with epsilon scaling; returns ``col[i]`` for each row.
    """
    n = len(cost)
    benefit = -cost
    price = np.zeros(n)
    eps = max(float(cost.max()) / 4.0, eps_final)
    rows = np.arange(n)
    while True:
        owner = np.full(n, -1, dtype=np.int64)
        assign = np.full(n, -1, dtype=np.int64)
        free = rows
        while len(free):
            val = benefit[free] - price[None]
            top2 = np.argpartition(-val, 1, axis=1)[:, :2]
            v2 = np.take_along_axis(val, top2, axis=1)
            swap = v2[:, 1] > v2[:, 0]
            best = np.where(swap, top2[:, 1], top2[:, 0])
            w1 = np.maximum(v2[:, 0], v2[:, 1])
            w2 = np.minimum(v2[:, 0], v2[:, 1])
            bid = price[best] + (w1 - w2) + eps
            # highest bid per object wins; lowest bidder row on ties
            order = np.lexsort((free, -bid, best))
            first = np.ones(len(order), dtype=bool)
            first[1:] = best[order][1:] != best[order][:-1]
            win = order[first]
            objs, bidders = best[win], free[win]
            prev = owner[objs]
            released = prev[prev >= 0]
            assign[released] = -1
            owner[objs] = bidders
            assign[bidders] = objs
            price[objs] = bid[win]
            free = np.flatnonzero(assign < 0)
        if eps <= eps_final:
            return assign
        eps = max(eps / 5.0, eps_final)


def emd(a, b, exact: bool | None = None) -> float:
    """Mean Euclidean cost of the optimal bijection between equal-size clouds.

    Exact (Hungarian) up to ``HUNGARIAN_MAX`` points; above that an
    epsilon-scaled auction whose mean cost exceeds the optimum by at most
    ``AUCTION_RTOL`` relative. ``exact`` forces either path.
    """
    a, b = _cloud(a), _cloud(b)
    if len(a) != len(b):
        raise ValueError(f"emd needs equal sizes, got {len(a)} and {len(b)}")
    cost = cdist(a, b)
    if exact is None:
        exact = len(a) <= HUNGARIAN_MAX
    if exact:
        r, c = linear_sum_assignment(cost)
        return _mean(cost[r, c])
    # the mean of row minima bounds the optimum from below
    lower = float(cost.min(axis=1).mean())
    if lower == 0.0:
        r, c = linear_sum_assignment(cost)
        return _mean(cost[r, c])
    col = _auction(cost, AUCTION_RTOL * lower)
    return _mean(cost[np.arange(len(a)), col])


def _mean(x: np.ndarray) -> float:
    # correctly rounded, so the result does not depend on matching order
    return math.fsum(x.tolist()) / len(x)


_DIST = {"cd": chamfer, "emd": emd}


def _metric_fn(metric: str):
    try:
        return _DIST[metric.lower()]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}") from None


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Rows are the generated set, columns the reference set."""

    values: np.ndarray
    metric: str


def distance_matrix(rows: Sequence, cols: Sequence, metric: str = "cd") -> DistanceMatrix:
    fn = _metric_fn(metric)
    if not len(rows) or not len(cols):
        raise ValueError("distance matrix needs non-empty sets")
    m = np.empty((len(rows), len(cols)))
    if rows is cols:
        # both metrics are symmetric, so a self-matrix needs one triangle
        for i, a in enumerate(rows):
            m[i, i] = fn(a, a)
            for j in range(i + 1, len(cols)):
                m[i, j] = m[j, i] = fn(a, cols[j])
        return DistanceMatrix(m, metric.lower())
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            m[i, j] = fn(a, b)
    return DistanceMatrix(m, metric.lower())


def _as_matrix(d) -> np.ndarray:
    m = np.asarray(d.values if isinstance(d, DistanceMatrix) else d, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ValueError("need a non-empty 2D distance matrix")
    return m


def mmd_from_matrix(d_gen_ref) -> float:
    """Mean over reference clouds of the distance to their closest generated cloud."""
    return float(_as_matrix(d_gen_ref).min(axis=0).mean())


def coverage_from_matrix(d_gen_ref) -> float:
    """Percent of reference clouds that are the nearest match of some generated cloud."""
    m = _as_matrix(d_gen_ref)
    matched = np.unique(np.argmin(m, axis=1))
    return 100.0 * len(matched) / m.shape[1]


def one_nna_from_matrices(d_gg, d_rr, d_gr) -> float:
    """Leave-one-out 1-NN accuracy (percent) on the pooled set.

    An element counts as correctly classified only when its nearest same-set
    neighbour is strictly closer than its nearest cross-set neighbour.
    """
    gg, rr, gr = _as_matrix(d_gg), _as_matrix(d_rr), _as_matrix(d_gr)
    ng, nr = len(gg), len(rr)
    if gg.shape != (ng, ng) or rr.shape != (nr, nr) or gr.shape != (ng, nr):
        raise ValueError("inconsistent matrix shapes for 1-NNA")
    gg = gg.copy()
    rr = rr.copy()
    np.fill_diagonal(gg, np.inf)
    np.fill_diagonal(rr, np.inf)
    ok_g = gg.min(axis=1) < gr.min(axis=1)
    ok_r = rr.min(axis=1) < gr.min(axis=0)
    return 100.0 * (int(ok_g.sum()) + int(ok_r.sum())) / (ng + nr)


def _check_sets(gen, ref):
    if not len(gen) or not len(ref):
        raise ValueError("metric sets must be non-empty")


def mmd(gen: Sequence, ref: Sequence, metric: str = "cd") -> float:
    _check_sets(gen, ref)
    fn = _metric_fn(metric)
    return float(np.mean([min(fn(g, r) for g in gen) for r in ref]))


def coverage(gen: Sequence, ref: Sequence, metric: str = "cd") -> float:
    _check_sets(gen, ref)
    fn = _metric_fn(metric)
    matched = set()
    for g in gen:
        d = [fn(g, r) for r in ref]
        matched.add(int(np.argmin(d)))
    return 100.0 * len(matched) / len(ref)


def one_nna(gen: Sequence, ref: Sequence, metric: str = "cd") -> float:
    _check_sets(gen, ref)
    fn = _metric_fn(metric)
    pooled = [(c, 0) for c in gen] + [(c, 1) for c in ref]
    correct = 0
    for i, (a, la) in enumerate(pooled):
        same = cross = np.inf
        for j, (b, lb) in enumerate(pooled):
            if i == j:
                continue
            d = fn(a, b)
            if lb == la:
                same = min(same, d)
            else:
                cross = min(cross, d)
        correct += same < cross
    return 100.0 * correct / len(pooled)


def occupancy_histogram(clouds: Sequence, resolution: int = 28, bounds=(-0.5, 0.5)) -> np.ndarray:
    """Per-cell count of clouds that put at least one point in the cell."""
    lo, hi = bounds
    counts = np.zeros(resolution ** 3)
    for c in clouds:
        p = _cloud(c)
        ijk = np.clip(np.floor((p - lo) / (hi - lo) * resolution).astype(np.int64), 0, resolution - 1)
        lin = np.unique(ijk[:, 0] + resolution * (ijk[:, 1] + resolution * ijk[:, 2]))
        counts[lin] += 1
    return counts


def js_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)

    def kl(x):
        nz = x > 0
        return float(np.sum(x[nz] * np.log(x[nz] / m[nz])))

    return max(0.0, 0.5 * kl(p) + 0.5 * kl(q))


def jsd(gen: Sequence, ref: Sequence, resolution: int = 28) -> float:
    """Jensen-Shannon divergence (natural log) of the two sets' occupancy histograms."""
    _check_sets(gen, ref)
    return js_divergence(occupancy_histogram(gen, resolution), occupancy_histogram(ref, resolution))


REPORT_FIELDS = ("MMD-CD", "MMD-EMD", "COV-CD", "COV-EMD", "1NNA-CD", "1NNA-EMD", "JSD",
                 "watertight_rate", "self_intersection_rate")


@dataclass
class GenEvalReport:
    mmd_cd: float
    mmd_emd: float
    cov_cd: float
    cov_emd: float
    nna_cd: float
    nna_emd: float
    jsd: float
    watertight_rate: float
    self_intersection_rate: float
    n_gen: int = 0
    n_ref: int = 0
    errors: list[str] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        vals = (self.mmd_cd, self.mmd_emd, self.cov_cd, self.cov_emd, self.nna_cd, self.nna_emd,
                self.jsd, self.watertight_rate, self.self_intersection_rate)
        return dict(zip(REPORT_FIELDS, vals))

    def to_dict(self) -> dict:
        return {**self.metrics(), "n_gen": self.n_gen, "n_ref": self.n_ref, "errors": list(self.errors)}

    def table(self) -> str:
        """Aligned text table; CD is shown x1e3 and EMD x1e1."""
        heads = ["MMD-CD(x1e3)", "MMD-EMD(x1e1)", "COV-CD(%)", "COV-EMD(%)", "1NNA-CD(%)", "1NNA-EMD(%)",
                 "JSD", "Watertight(%)", "Self-int(%)"]
        vals = [self.mmd_cd * 1e3, self.mmd_emd * 10, self.cov_cd, self.cov_emd, self.nna_cd, self.nna_emd,
                self.jsd, self.watertight_rate, self.self_intersection_rate]
        cells = [f"{v:.4f}" for v in vals]
        widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(heads, widths))
        line2 = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line1 + "\n" + line2 + "\n"


@dataclass(frozen=True)
class EvalConfig:
    n_points: int = 2048
    seed: int = 0
    jsd_resolution: int = 28
    self_intersections: bool = True


def _collect(items, role: str, errors: list[str]) -> list[tuple[str, TriangleMesh]]:
    """Named meshes from a directory, a list of paths, or a list of meshes."""
    if isinstance(items, (str, os.PathLike)):
        d = Path(items)
        if not d.is_dir():
            raise PonqError(f"{role} directory {d} does not exist")
        items = sorted(p for p in d.iterdir() if p.suffix.lower() == ".obj")
    out = []
    for i, it in enumerate(items):
        if isinstance(it, TriangleMesh):
            out.append((f"mesh{i}", it))
            continue
        p = Path(it)
        try:
            mesh = read_obj(p)
            if mesh.n_faces == 0:
                raise PonqError("mesh has no faces")
        except (OSError, PonqError, ValueError) as exc:
            msg = f"{role}: {p.name}: {exc}"
            log.warning("skipping %s", msg)
            errors.append(msg)
            continue
        out.append((p.name, mesh))
    return out


def evaluate_generation(gen_meshes, ref_meshes, config: EvalConfig | None = None) -> GenEvalReport:
    """Evaluate generated meshes against references.

    Inputs are directories of OBJ files or sequences of paths or meshes.
    Every mesh is sampled with a seed derived from the run seed and its name,
    so a set evaluated against itself yields identical clouds.
    """
    config = config or EvalConfig()
    errors: list[str] = []
    gen = _collect(gen_meshes, "gen", errors)
    ref = _collect(ref_meshes, "ref", errors)
    if not gen or not ref:
        raise PonqError(f"nothing to evaluate ({len(gen)} generated, {len(ref)} reference meshes)")

    def clouds(named):
        return [sample_surface(m, config.n_points, derive_seed(config.seed, name)).points for name, m in named]

    g, r = clouds(gen), clouds(ref)
    vals = {}
    for metric in METRICS:
        d_gr = distance_matrix(g, r, metric)
        d_gg = distance_matrix(g, g, metric)
        d_rr = distance_matrix(r, r, metric)
        vals[metric] = (mmd_from_matrix(d_gr), coverage_from_matrix(d_gr), one_nna_from_matrices(d_gg, d_rr, d_gr))
    audits = [audit_mesh(m, self_intersections=config.self_intersections) for _, m in gen]
    wt = 100.0 * sum(a.boundary_edge_count == 0 for a in audits) / len(audits)
    si = 100.0 * sum(a.self_intersection_pair_count > 0 for a in audits) / len(audits)
    return GenEvalReport(
        vals["cd"][0], vals["emd"][0], vals["cd"][1], vals["emd"][1], vals["cd"][2], vals["emd"][2],
        jsd(g, r, config.jsd_resolution), wt, si, len(gen), len(ref), errors,
    )
