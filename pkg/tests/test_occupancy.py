import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from oracles import occupancy_oracle, trilinear_hand
from ponq.errors import FormatError
from ponq.geometry.mesh import TriangleMesh, normalize_mesh
from ponq.geometry.sampling import sample_surface
from ponq.occupancy import (
    ConstantPredictor,
    LatentGrid,
    MeshOraclePredictor,
    OccupancyGrid,
    cell_centers,
    gather_feature,
    latent_from_occupancy,
    mask_apply,
    mask_apply_samples,
    occupancy_from_mesh,
    predict_mask,
    predict_sample_mask,
    read_latent,
    read_occupancy,
    sample_train_points,
    train_point_arrays,
    trilinear_sample,
    write_latent,
    write_occupancy,
)
from ponq.rep.encode import encode_mesh
from ponq.shapes import box, icosphere, random_convex_hull, torus


# --- ground truth -----------------------------------------------------------

def test_unit_cube_crust():
    occ = occupancy_from_mesh(box(0.5), 4)
    assert occ.values.sum() == 56
    assert not occ.values[1:3, 1:3, 1:3].any()
    assert np.array_equal(occ.values, occupancy_oracle(box(0.5), 4))


def test_empty_mesh():
    assert not occupancy_from_mesh(TriangleMesh.empty(), 8).values.any()


def test_single_triangle_one_cell():
    tri = TriangleMesh([[0.01, 0.02, 0.03], [0.05, 0.02, 0.03], [0.02, 0.06, 0.04]], [[0, 1, 2]])
    occ = occupancy_from_mesh(tri, 8)
    assert occ.values.sum() == 1 and occ.values[4, 4, 4]


@pytest.mark.parametrize("mesh", [torus(), random_convex_hull(30, seed=9), icosphere(2, 0.33, center=(0.05, -0.02, 0.1))], ids=["torus", "hull", "sphere"])
def test_matches_oracle(mesh):
    for N in (5, 16):
        assert np.array_equal(occupancy_from_mesh(mesh, N).values, occupancy_oracle(mesh, N))


def test_linear_true_x_fastest():
    v = np.zeros((3, 3, 3), dtype=bool)
    v[1, 0, 0] = v[0, 0, 2] = True
    assert OccupancyGrid(3, v).linear_true().tolist() == [1, 18]


# --- training points ----------------------------------------------------------

def test_zero_sigma_all_occupied():
    pts = sample_train_points(torus(), 2000, displacement_sigma=0.0, seed=1, N=16)
    assert all(p.occupied for p in pts)


def test_train_points_deterministic_and_in_bounds():
    a = sample_train_points(torus(), 500, seed=3)
    b = sample_train_points(torus(), 500, seed=3)
    assert all(np.array_equal(x.position, y.position) and x.occupied == y.occupied for x, y in zip(a, b))
    pos = np.array([p.position for p in a])
    assert np.all(np.abs(pos) <= 0.5)


def test_large_sigma_rate_matches_displacement_law():
    # small sphere, sigma = 10 cells; oracle integrates the clamped Gaussian over crust cells
    N, sigma_cells = 8, 10.0
    mesh = icosphere(2, 0.12)
    occ = occupancy_from_mesh(mesh, N)
    h = 1.0 / N
    sigma = sigma_cells * h
    count = 1_000_000
    _, labels = train_point_arrays(mesh, count, sigma_cells, seed=0, N=N, occupancy=occ)
    rate = labels.mean()

    surf = sample_surface(mesh, 4000, seed=99).points
    edges = -0.5 + np.arange(N + 1) * h
    edges[0], edges[-1] = -np.inf, np.inf  # clamping folds outside mass onto border cells
    ijk = np.argwhere(occ.values)
    per_axis = [ndtr((edges[None, 1:] - surf[:, a:a + 1]) / sigma) - ndtr((edges[None, :-1] - surf[:, a:a + 1]) / sigma)
                for a in range(3)]
    prob = np.zeros(len(surf))
    for i, j, k in ijk:
        prob += per_axis[0][:, i] * per_axis[1][:, j] * per_axis[2][:, k]
    p = prob.mean()
    tol = 3 * math.sqrt(p * (1 - p) / count) + 3 * prob.std() / math.sqrt(len(prob))
    assert abs(rate - p) <= tol


# --- latent sampling ----------------------------------------------------------

def _latent(rng, c=3, n=5, bounds=(-0.5, -0.5, -0.5, 0.5, 0.5, 0.5)):
    return LatentGrid(rng.normal(size=(c, n, n, n)), bounds)


def test_trilinear_at_nodes_and_midpoints():
    lat = _latent(np.random.default_rng(0))
    nodes = cell_centers(5)
    vals = trilinear_sample(lat, nodes)
    k, j, i = np.meshgrid(np.arange(5), np.arange(5), np.arange(5), indexing="ij")
    expect = lat.values[:, i.ravel(), j.ravel(), k.ravel()].T
    assert np.array_equal(vals, expect)
    mid = trilinear_sample(lat, 0.5 * (nodes[0] + nodes[1]))
    assert np.allclose(mid, 0.5 * (lat.values[:, 0, 0, 0] + lat.values[:, 1, 0, 0]), atol=1e-15)


def test_trilinear_clamps_outside_nodes():
    lat = _latent(np.random.default_rng(1))
    assert np.array_equal(trilinear_sample(lat, [-0.5, -0.5, -0.5]), lat.values[:, 0, 0, 0])
    assert np.array_equal(trilinear_sample(lat, [9.0, 9.0, 9.0]), lat.values[:, -1, -1, -1])


def test_constant_latent_blocks_identical():
    lat = LatentGrid(np.full((2, 4, 4, 4), 0.7), (-1, -1, -1, 1, 1, 1))
    f = gather_feature(lat, [0.1, -0.3, 0.9])
    assert len(f) == 7 * 2 + 3
    assert np.allclose(f[:14].reshape(7, 2), 0.7, atol=1e-15)
    assert np.allclose(f[14:], [0.55, 0.35, 0.95])


def test_two_node_hand_calculation():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(2, 2, 2, 2))
    lat = LatentGrid(vals)
    f = gather_feature(lat, [0.0, 0.0, 0.0])
    # h = 0.5; nodes at +-0.25, so each offset point lands on a face of the node cube
    fracs = [(0.5, 0.5, 0.5), (1, 0.5, 0.5), (0, 0.5, 0.5), (0.5, 1, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 1), (0.5, 0.5, 0)]
    expect = [trilinear_hand(vals[ch], fr) for fr in fracs for ch in range(2)]
    assert np.allclose(f[:14], expect, atol=1e-15)
    assert np.array_equal(f[14:], [0.5, 0.5, 0.5])


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_gather_feature_locality(seed):
    rng = np.random.default_rng(seed)
    lat = _latent(rng, c=2, n=9)
    p = rng.uniform(-0.5, 0.5, size=3)
    nodes = cell_centers(9).reshape(9, 9, 9, 3).transpose(2, 1, 0, 3)
    far = np.max(np.abs(nodes - p), axis=-1) > 2 * lat.spacing[0] + 1e-12
    changed = lat.values.copy()
    changed[:, far] = rng.normal(size=(2, int(far.sum())))
    assert np.array_equal(gather_feature(lat, p), gather_feature(LatentGrid(changed), p))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_trilinear_lipschitz(seed):
    rng = np.random.default_rng(seed)
    lat = _latent(rng, c=1, n=6)
    p = rng.uniform(-0.6, 0.6, size=3)
    d = rng.normal(scale=0.05, size=3)
    L = (lat.values.max() - lat.values.min()) / lat.spacing[0]
    diff = abs(trilinear_sample(lat, p)[0] - trilinear_sample(lat, p + d)[0])
    assert diff <= L * np.abs(d).sum() + 1e-12


def test_latent_rejects_non_finite():
    with pytest.raises(ValueError):
        LatentGrid(np.full((1, 2, 2, 2), np.nan))


# --- masks --------------------------------------------------------------------

def test_oracle_predictor_reproduces_gt():
    mesh = normalize_mesh(random_convex_hull(30, seed=4))
    occ = occupancy_from_mesh(mesh, 16)
    lat = latent_from_occupancy(occ)
    assert predict_mask(MeshOraclePredictor(occ), lat) == occ


def test_constant_predictors():
    lat = LatentGrid(np.zeros((1, 4, 4, 4)))
    assert not predict_mask(ConstantPredictor(0.0), lat).values.any()
    assert not predict_mask(ConstantPredictor(0.99), lat, threshold=1.0).values.any()
    assert predict_mask(ConstantPredictor(1.0), lat, threshold=1.0).values.all()
    assert predict_mask(ConstantPredictor(0.5), lat).values.all()


def test_predictor_out_of_range():
    with pytest.raises(ValueError):
        predict_mask(ConstantPredictor(1.5), LatentGrid(np.zeros((1, 2, 2, 2))))


def test_oracle_mask_apply_identity():
    mesh = torus()
    grid = encode_mesh(mesh, N=16, sample_count=20_000)
    occ = occupancy_from_mesh(normalize_mesh(mesh), 16)
    mask = predict_mask(MeshOraclePredictor(occ), latent_from_occupancy(occ))
    assert mask_apply(grid, mask) == grid


def test_mask_set_algebra():
    grid = encode_mesh(torus(), N=16, sample_count=20_000)
    assert mask_apply(grid, OccupancyGrid(16, np.ones((16,) * 3))) == grid
    assert mask_apply(grid, OccupancyGrid(16, np.zeros((16,) * 3))).n_cells == 0
    rng = np.random.default_rng(0)
    mask = OccupancyGrid(16, rng.random((16,) * 3) < 0.5)
    out = mask_apply(grid, mask)
    assert set(out.cell_index.tolist()) == set(grid.cell_index.tolist()) & set(mask.linear_true().tolist())
    kept = np.isin(grid.cell_index, out.cell_index)
    assert np.array_equal(out.points, grid.points[np.repeat(kept, grid.counts)])


def test_mask_resolution_mismatch():
    grid = encode_mesh(torus(), N=8, sample_count=5000)
    with pytest.raises(ValueError):
        mask_apply(grid, OccupancyGrid(16, np.ones((16,) * 3)))


def test_per_sample_mask():
    mesh = torus()
    grid = encode_mesh(mesh, N=16, sample_count=20_000)
    occ = occupancy_from_mesh(normalize_mesh(mesh), 16)
    keep = predict_sample_mask(MeshOraclePredictor(occ), latent_from_occupancy(occ), grid)
    assert keep.all()
    half = mask_apply_samples(grid, np.arange(grid.n_samples) % 2 == 0)
    assert half.n_samples == (grid.n_samples + 1) // 2


def test_latent_surrogate_values():
    occ = OccupancyGrid(4, np.zeros((4, 4, 4)))
    lat = latent_from_occupancy(occ)
    assert lat.c == 1 and np.all(lat.values == -1)


# --- formats ------------------------------------------------------------------

def test_occupancy_round_trip_and_bits():
    v = np.zeros((3, 3, 3), dtype=bool)
    v[1, 0, 0] = True
    data = write_occupancy(OccupancyGrid(3, v))
    assert data[:4] == b"OCCG" and len(data) == 12 + 4 and data[12] == 0b10
    rng = np.random.default_rng(3)
    g = OccupancyGrid(7, rng.random((7, 7, 7)) < 0.3)
    assert read_occupancy(write_occupancy(g)) == g


def test_occupancy_errors():
    data = write_occupancy(OccupancyGrid(4, np.ones((4, 4, 4))))
    for bad in (b"XXXX" + data[4:], data[:-1], data[:6], data[:4] + b"\x02\0\0\0" + data[8:]):
        with pytest.raises(FormatError):
            read_occupancy(bad)


def test_latent_round_trip_versions():
    rng = np.random.default_rng(4)
    lat = LatentGrid(rng.normal(size=(2, 3, 3, 3)).astype(np.float32), (-1, -1, -1, 1, 1, 1))
    data = write_latent(lat)
    assert data[4:8] == b"\x01\0\0\0"
    assert read_latent(data) == lat
    with_stats = LatentGrid(lat.values, lat.bounds, (-0.25, 3.5))
    data2 = write_latent(with_stats)
    assert data2[4:8] == b"\x02\0\0\0" and read_latent(data2) == with_stats
    # x fastest within a channel
    assert np.frombuffer(data, "<f4", offset=64)[1] == lat.values[0, 1, 0, 0]


def test_latent_errors():
    data = write_latent(LatentGrid(np.zeros((1, 2, 2, 2), np.float32)))
    for bad in (b"GTAL" + data[4:], data[:-4], data[:20], data[:4] + b"\x03\0\0\0" + data[8:]):
        with pytest.raises(FormatError):
            read_latent(bad)
