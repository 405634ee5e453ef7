import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chamfer_bruteforce, emd_bruteforce, jsd_direct, set_metrics_bruteforce
from ponq.errors import PonqError
from ponq.extraction import extract_mesh
from ponq.geometry.mesh import TriangleMesh
from ponq.geometry.obj import write_obj
from ponq.metrics import (
    EvalConfig,
    REPORT_FIELDS,
    chamfer,
    coverage,
    coverage_from_matrix,
    distance_matrix,
    emd,
    evaluate_generation,
    js_divergence,
    jsd,
    mmd,
    mmd_from_matrix,
    occupancy_histogram,
    one_nna,
    one_nna_from_matrices,
)
from ponq.rep.encode import encode_mesh
from ponq.shapes import box, icosphere, random_convex_hull, torus


def test_chamfer_examples():
    a = np.random.default_rng(0).uniform(size=(20, 3))
    assert chamfer(a, a) == 0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 1.0


def test_chamfer_matches_bruteforce():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(64, 3)), rng.uniform(size=(50, 3))
    assert chamfer(a, b) == pytest.approx(chamfer_bruteforce(a, b), rel=1e-14)


def test_emd_swap_example():
    a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    b = np.array([[1.0, 0, 0.1], [0.0, 0, 0.1]])
    assert emd(a, b) == pytest.approx(0.1, abs=1e-15)
    assert emd(a, a) == 0


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_emd_bruteforce_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(6, 3)), rng.uniform(size=(6, 3))
    assert emd(a, b) == emd_bruteforce(a, b)
    assert emd(a, b) == pytest.approx(emd(b, a), rel=1e-14)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-14)


def test_emd_auction_close_to_exact():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(300, 3)), rng.uniform(size=(300, 3))
    exact = emd(a, b, exact=True)
    approx = emd(a, b, exact=False)
    assert exact <= approx <= exact * (1 + 1e-3)


def test_emd_size_mismatch():
    with pytest.raises(ValueError):
        emd(np.zeros((3, 3)), np.zeros((4, 3)))


def _clouds(seed, n_sets=6, n=16):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-0.4, 0.4, size=(n, 3)) + rng.uniform(-0.05, 0.05, size=3) for _ in range(n_sets)]


def test_identical_sets():
    g = _clouds(3)
    for metric in ("cd", "emd"):
        assert mmd(g, g, metric) == 0
        assert coverage(g, g, metric) == 100.0
        assert one_nna(g, g, metric) == 0.0
    assert jsd(g, g) == 0


@pytest.mark.parametrize("metric,dist", [("cd", chamfer_bruteforce), ("emd", emd_bruteforce)])
def test_set_metrics_vs_bruteforce(metric, dist):
    g, r = _clouds(4, n=6), _clouds(5, n=6)
    want = set_metrics_bruteforce(g, r, dist)
    got = (mmd(g, r, metric), coverage(g, r, metric), one_nna(g, r, metric))
    assert got[1] == want[1] and got[2] == want[2]
    assert got[0] == pytest.approx(want[0], rel=1e-14)


def test_matrix_forms_equal_streaming():
    g, r = _clouds(6), _clouds(7, n_sets=5)
    for metric in ("cd", "emd"):
        d_gr = distance_matrix(g, r, metric)
        assert mmd_from_matrix(d_gr) == mmd(g, r, metric)
        assert coverage_from_matrix(d_gr) == coverage(g, r, metric)
        nna = one_nna_from_matrices(distance_matrix(g, g, metric), distance_matrix(r, r, metric), d_gr)
        assert nna == one_nna(g, r, metric)
        d_gg = distance_matrix(g, g, metric).values
        assert np.array_equal(d_gg, d_gg.T) and np.all(np.diag(d_gg) == 0)


def test_jsd_disjoint_cells():
    a = [np.full((4, 3), -0.4)]
    b = [np.full((4, 3), 0.4)]
    assert jsd(a, b) == pytest.approx(math.log(2), abs=1e-15)


def test_jsd_direct_formula():
    g, r = _clouds(8), _clouds(9)
    P, Q = occupancy_histogram(g), occupancy_histogram(r)
    assert js_divergence(P, Q) == pytest.approx(jsd_direct(P, Q), abs=1e-12)
    assert jsd(g, r) == js_divergence(P, Q)


def test_jsd_invariances():
    g, r = _clouds(10), _clouds(11)
    base = jsd(g, r)
    rng = np.random.default_rng(0)
    shuffled = [c[rng.permutation(len(c))] for c in g]
    doubled = [np.concatenate([c, c, c]) for c in g]
    assert jsd(shuffled, r) == base
    assert jsd(doubled, r) == base


def test_empty_sets_rejected():
    with pytest.raises(ValueError):
        mmd([], _clouds(0))


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


def test_evaluate_self(tmp_path):
    meshes = [icosphere(2, 0.4), box(0.4), torus()]
    for i, m in enumerate(meshes):
        write_obj(tmp_path / f"m{i}.obj", m)
    rep = evaluate_generation(tmp_path, tmp_path, EvalConfig(n_points=256))
    assert rep.mmd_cd == 0 and rep.mmd_emd == 0
    assert rep.cov_cd == 100 and rep.cov_emd == 100
    assert rep.jsd == 0
    assert rep.watertight_rate == 100 and rep.self_intersection_rate == 0
    assert list(rep.metrics()) == list(REPORT_FIELDS)
    assert "MMD-CD(x1e3)" in rep.table()


def test_evaluate_extractions_clean():
    gen = [extract_mesh(encode_mesh(m, N=16, sample_count=30_000)) for m in (icosphere(3, 0.45), box(0.45), random_convex_hull(30, seed=1))]
    rep = evaluate_generation(gen, [icosphere(3, 0.45), box(0.45)], EvalConfig(n_points=256))
    assert rep.watertight_rate == 100 and rep.self_intersection_rate == 0
    assert rep.n_gen == 3 and rep.n_ref == 2


def test_evaluate_skips_malformed(tmp_path):
    for i in range(9):
        write_obj(tmp_path / f"ok{i}.obj", icosphere(1, 0.3 + 0.01 * i))
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 x 0\n")
    rep = evaluate_generation(tmp_path, [icosphere(2, 0.4)], EvalConfig(n_points=128))
    assert rep.n_gen == 9
    assert len(rep.errors) == 1 and "bad.obj" in rep.errors[0]


def test_evaluate_rates_count_defects():
    cube = box(0.4)
    opened = TriangleMesh(cube.vertices, cube.faces[1:])
    rep = evaluate_generation([cube, opened], [cube], EvalConfig(n_points=64))
    assert rep.watertight_rate == 50


def test_evaluate_empty_raises(tmp_path):
    with pytest.raises(PonqError):
        evaluate_generation(tmp_path, [box(0.4)])


def test_evaluate_deterministic():
    gen = [icosphere(2, 0.4), torus()]
    ref = [box(0.4), random_convex_hull(20, seed=0)]
    a = evaluate_generation(gen, ref, EvalConfig(n_points=128, seed=5))
    b = evaluate_generation(gen, ref, EvalConfig(n_points=128, seed=5))
    assert a.to_dict() == b.to_dict()
