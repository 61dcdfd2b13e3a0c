"""Small closed-form cases and direct oracles for each public operation."""

import copy
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import exact_graph, small_instance
from transavg import baselines as bl
from transavg.bata import BataConfig, bata_objective, h_theta, optimal_penalty_equivalence, solve, update_d
from transavg.core import ViewGraph, centralize_normalize, is_connected, rotation_residual, world_direction
from transavg.experiments import SweepGrid, run_sweep, run_toy_grid, trial_seed
from transavg.lls import (
    EdgeRows,
    build_bata_constraints,
    build_centroid_constraints,
    scale_row,
    solve_constrained,
)
from transavg.loss import Cauchy, Huber, L21Smooth, SquaredL2, combined_residual
from transavg.metrics import nrmse, percentile, robust_align, squash_r1_r2, squash_r3
from transavg.synthetic import (
    TwoClusterConfig,
    axis_angle_rotate,
    corrupt_direction,
    gen_er_edges,
    gen_locations,
    gen_two_cluster,
    sample_orthogonal_unit,
    uniform_sphere,
)


def _rand_rot(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return Q * np.sign(np.linalg.det(Q))


# ---------------------------------------------------------------- core


def test_rotation_residual_cases(rng):
    Rz = np.diag([-1.0, -1.0, 1.0])
    assert rotation_residual(np.eye(3), np.eye(3), np.eye(3)) == 0.0
    assert rotation_residual(np.eye(3), np.eye(3), Rz) == pytest.approx(2 * math.sqrt(2))
    Ri, Rj = _rand_rot(rng), _rand_rot(rng)
    Rij = Ri.T @ Rj
    assert rotation_residual(Ri, Rj, Rij) < 1e-12
    c, sn = math.cos(0.2), math.sin(0.2)
    Rp = Rij @ np.array([[c, -sn, 0], [sn, c, 0], [0, 0, 1]])
    direct = math.sqrt(sum((a - b) ** 2 for a, b in zip((Ri.T @ Rj).ravel(), Rp.ravel())))
    assert rotation_residual(Ri, Rj, Rp) == pytest.approx(direct, abs=1e-12)


def test_world_direction_cases(rng):
    assert np.allclose(world_direction(np.eye(3), [1, 0, 0]), [1, 0, 0])
    for _ in range(20):
        v = uniform_sphere(rng)
        assert np.linalg.norm(world_direction(_rand_rot(rng), v)) == pytest.approx(1.0, abs=1e-12)


def test_centralize_cases(rng):
    s = 1 / math.sqrt(2)
    for t in ([[1.0, 0, 0], [-1, 0, 0]], [[2.0, 0, 0], [0, 0, 0]]):
        assert np.allclose(centralize_normalize(np.array(t)), [[s, 0, 0], [-s, 0, 0]])
    t = centralize_normalize(rng.standard_normal((10, 3)))
    assert np.allclose(centralize_normalize(t), t, atol=1e-12)


def test_connectivity_cases():
    v = [[1.0, 0, 0]]
    assert is_connected(ViewGraph(2, [0], [1], v, [0.0]))
    assert not is_connected(ViewGraph(3, [0], [1], v, [0.0]))


# ---------------------------------------------------------------- losses


def test_loss_values():
    assert Cauchy(0.1).rho(0.0) == 0.0
    assert Cauchy(0.1).rho(0.1) == pytest.approx(0.693147, abs=1e-6)
    assert Huber(1.0).rho(2.0) == pytest.approx(1.5)
    assert Cauchy(0.1).weight(0.0) == 1.0
    assert Cauchy(0.1).weight(0.3) == pytest.approx(0.1)
    assert Huber(0.5).weight(0.0) == 1.0


def test_combined_residual_values():
    z, x = np.zeros(3), np.array([1.0, 0, 0])
    assert combined_residual(z, x, 1.0, x) == 0.0
    assert combined_residual(z, x, 1.0, x, 2 * math.sqrt(2), beta=1.0) == pytest.approx(2.828427, abs=1e-6)
    assert combined_residual(z, np.array([1.0, 1, 0]), 0.5, x) == pytest.approx(math.sqrt(0.5))


# ---------------------------------------------------------------- constrained least squares


def test_constraint_rows(rng):
    g = ViewGraph(2, [0], [1], [[1.0, 0, 0]], [0.0])
    assert scale_row(g).tolist() == [-1, 0, 0, 1, 0, 0]
    assert build_bata_constraints(g).r[-1] == 1.0
    C = build_centroid_constraints(3).C
    assert np.all(C.sum(axis=1) == 3)
    assert np.linalg.matrix_rank(build_centroid_constraints(7).C) == 3
    t = rng.standard_normal((7, 3))
    assert np.allclose(build_centroid_constraints(7).C @ (t - t.mean(axis=0)).ravel(), 0, atol=1e-12)
    # scale row on exact-direction locations, rescaled to unit response
    inst = small_instance(n=10, seed=1)
    row = scale_row(inst.graph)
    tt = inst.truth / (row @ inst.truth.ravel())
    assert row @ tt.ravel() == pytest.approx(1.0, abs=1e-12)


def test_two_camera_system_forced_by_constraints():
    g = ViewGraph(2, [0], [1], [[1.0, 0, 0]], [0.0])
    rows = EdgeRows(np.array([0]), np.array([1]), np.array([1.0]), np.array([[1.0, 0, 0]]), np.array([1.0]))
    t, _ = solve_constrained(rows, 2, build_bata_constraints(g))
    assert np.allclose(t, [[-0.5, 0, 0], [0.5, 0, 0]], atol=1e-10)
    rows7 = EdgeRows(rows.i, rows.j, rows.a, rows.b, rows.w * 7)
    t7, _ = solve_constrained(rows7, 2, build_bata_constraints(g))
    assert np.allclose(t7, t, atol=1e-12)


# ---------------------------------------------------------------- BATA


def test_scale_update_values():
    assert update_d([2.0, 0, 0], [1.0, 0, 0]) == 0.5
    assert update_d([1.0, 0, 0], [-1.0, 0, 0]) == 0.0
    d = update_d([1.0, 1, 0], [1.0, 0, 0])
    assert d == 0.5
    assert np.linalg.norm(np.array([1.0, 1, 0]) * d - [1, 0, 0]) == pytest.approx(0.707107, abs=1e-6)
    assert optimal_penalty_equivalence([-1.0, 0, 0], [1.0, 0, 0]) == (0.0, 1.0, math.pi)


def test_h_theta_values():
    assert h_theta(0.0) == 0.0
    assert h_theta(math.pi / 6) == pytest.approx(0.5)
    assert h_theta(2 * math.pi / 3) == 1.0


def test_bata_objective_values(rng):
    g = ViewGraph(2, [0], [1], [[0.0, 1, 0]], [0.0])
    t = np.array([[0.0, 0, 0], [1, 0, 0]])
    assert bata_objective(g, t, [0.0], SquaredL2(), beta=0.0) == 1.0
    inst = small_instance(n=8, q=0.3, sigma_deg=10, seed=2)
    g = inst.graph.with_rot_residual(rng.uniform(0, 1, inst.graph.m))
    t = rng.standard_normal((g.n, 3))
    d = rng.uniform(0, 2, g.m)
    loss = Cauchy(0.1)
    total = 0.0
    for k, (i, j, v, rr) in enumerate(g.edges):
        e = math.sqrt(float(np.sum(((t[j] - t[i]) * d[k] - v) ** 2)) + rr**2)
        total += math.log1p((e / 0.1) ** 2)
    assert bata_objective(g, t, d, loss) == pytest.approx(total, rel=1e-12)


def test_bata_two_cameras():
    g = ViewGraph(2, [0], [1], [[1.0, 0, 0]], [0.0])
    t, _ = solve(g)
    assert np.allclose(t, [[-0.5, 0, 0], [0.5, 0, 0]], atol=1e-10)


def test_bata_noiseless_twenty():
    inst = small_instance(n=20, p=0.4, seed=8)
    assert nrmse(solve(inst.graph)[0], inst.truth) < 1e-6


def test_bata_beats_lud_in_most_paired_trials():
    wins = 0
    for trial in range(20):
        from transavg.synthetic import SynthConfig, gen_instance

        inst = gen_instance(SynthConfig(n=50, p=0.3, q=0.2, sigma_deg=10, seed=trial_seed(0, trial)))
        wins += nrmse(solve(inst.graph)[0], inst.truth) < nrmse(bl.lud_solve(inst.graph)[0], inst.truth)
    assert wins >= 15


# ---------------------------------------------------------------- baselines


def test_magnitude_baseline_values():
    dt, v = np.array([1.0, 1, 0]), np.array([1.0, 0, 0])
    assert bl.revised_lud_update_d(dt, v) == 1.0
    assert bl.shapefit_residual(dt, v) == pytest.approx(1.0)
    assert bl.shapefit_residual(3 * v, v) == 0.0
    assert bl.lud_update_d([3.0, 0, 0], v, 1.0) == 3.0
    assert bl.lud_update_d([0.2, 0, 0], v, 1.0) == 1.0


def test_revised_lud_final_objective_is_projection_objective():
    g = small_instance(n=30, p=0.4, q=0.2, sigma_deg=8, seed=1).graph
    t, diag = bl.revised_lud_solve(g)
    recomputed = float(np.sum(L21Smooth().rho(bl.shapefit_residual(g.baselines(t), g.v))))
    assert diag.final_objective == pytest.approx(recomputed, abs=1e-10)


def test_regime1_values():
    inst = small_instance(n=12, p=0.5, seed=3)
    g = inst.graph
    tS = inst.truth
    # exact shape: every projection is >= c once gamma reaches c / min projection
    proj = np.sum(g.baselines(tS) * g.v, axis=1)
    gam, val = bl.regime1_residual(g, tS, 1.0, [1.0 / proj.min(), 0.5 / proj.min()])
    assert val == pytest.approx(0.0, abs=1e-9) and gam == pytest.approx(1.0 / proj.min())
    assert bl.regime1_residual(g, tS, 1.0, [1.0])[1] == bl.lud_objective(g, tS, 1.0)


def test_onedsfm_values():
    inst = small_instance(n=10, p=0.5, seed=4)
    g = inst.graph
    f, grad = bl.onedsfm_objective_grad(g, inst.truth)
    assert f == pytest.approx(0.0, abs=1e-24)
    assert np.linalg.norm(grad - grad.mean(axis=0)) < 1e-12
    # single edge at 60 degrees: unrobust residual 2 sin(30 deg) = 1
    one = ViewGraph(2, [0], [1], [[0.5, math.sqrt(3) / 2, 0]], [0.0])
    assert bl.onedsfm_objective_grad(one, np.array([[0.0, 0, 0], [1, 0, 0]]), bl.OnedsfmConfig(loss=SquaredL2()))[0] == pytest.approx(1.0)


def test_onedsfm_start_at_truth_and_cross_check():
    inst = small_instance(n=20, p=0.4, seed=2)
    t, diag = bl.onedsfm_solve(inst.graph, bl.OnedsfmConfig(init="provided", init_locations=inst.truth))
    assert diag.outer_iterations_used <= 1
    assert diag.final_objective == pytest.approx(diag.init_objective, abs=1e-12)
    noisy = small_instance(n=50, p=0.3, sigma_deg=5, seed=0)
    g = noisy.graph
    f_1d = bl.onedsfm_solve(g)[1].final_objective
    f_bata = bl.onedsfm_objective_grad(g, solve(g)[0])[0]
    assert abs(f_1d - f_bata) <= 0.05 * f_bata


# ---------------------------------------------------------------- generator


def test_location_statistics():
    a = gen_locations(2, seed=9)
    assert np.array_equal(a, gen_locations(2, seed=9))
    t = gen_locations(10000, seed=0)
    assert np.all(np.abs(t.mean(axis=0)) < 5 / math.sqrt(10000))
    assert np.all((t.var(axis=0) > 0.9) & (t.var(axis=0) < 1.1))


def test_edge_sampler_values():
    assert gen_er_edges(7, 1.0, seed=0).shape[0] == 21
    m = gen_er_edges(200, 0.3, seed=0).shape[0]
    assert abs(m - 5970) < 4 * math.sqrt(19900 * 0.3 * 0.7)
    assert np.array_equal(gen_er_edges(30, 0.2, seed=4), gen_er_edges(30, 0.2, seed=4))


def test_rodrigues_values(rng):
    v = rng.standard_normal(3)
    k = uniform_sphere(rng)
    assert np.allclose(axis_angle_rotate(v, k, 0.0), v)
    w = axis_angle_rotate(v, k, 0.7)
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), abs=1e-12)
    assert np.allclose(axis_angle_rotate(w, k, -0.7), v, atol=1e-12)


def test_orthogonal_samples_uniform(rng):
    zs = [sample_orthogonal_unit(np.array([0.0, 0, 1]), rng) for _ in range(10000)]
    pts = np.array(zs)
    assert np.all(pts[:, 2] == 0.0)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    counts, _ = np.histogram(ang, bins=20, range=(-math.pi, math.pi))
    assert chisquare(counts).pvalue > 0.01


def test_corruption_values(rng):
    u = np.array([0.0, 0.6, 0.8])
    out, flag, err = corrupt_direction(u, 0.0, 0.0, rng)
    assert np.array_equal(out, u) and not flag and err == 0.0
    assert all(corrupt_direction(u, 1.0, 5.0, rng)[1] for _ in range(50))
    for _ in range(50):
        clone = copy.deepcopy(rng)
        clone.random()
        uniform_sphere(clone)
        g = clone.standard_normal()
        _, _, err = corrupt_direction(u, 0.0, 10.0, rng)
        assert math.degrees(err) == pytest.approx(abs(10.0 * g), abs=1e-9)


def test_two_cluster_values():
    inst = gen_two_cluster(TwoClusterConfig(n_per_cluster=10, L=0.0, p=1.0, seed=3))
    assert np.array_equal(inst.truth, gen_locations(20, seed=3))
    assert inst.labels.tolist() == [0] * 10 + [1] * 10


# ---------------------------------------------------------------- metrics


def test_metric_values(rng):
    gt = rng.standard_normal((9, 3))
    assert nrmse(gt, gt) == 0.0
    assert percentile([1, 2, 3, 4], 50) == 2.5
    assert percentile([5, -1, 3], 0) == -1
    simplex = np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    g = exact_graph(simplex, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    sq = squash_r1_r2(g, simplex)
    assert sq.r1 == pytest.approx(1.0) and sq.r2 == pytest.approx(1.0)


def test_r3_values():
    lab = np.repeat([0, 1], 4)
    collapsed = np.vstack([np.zeros((4, 3)), np.tile([1.0, 0, 0], (4, 1))])
    assert squash_r3(collapsed, lab) == math.inf
    ring = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
    assert squash_r3(np.vstack([ring, ring + [4.0, 0, 0]]), lab) == pytest.approx(2.0)
    inst = gen_two_cluster(TwoClusterConfig(n_per_cluster=30, L=10.0, p=0.3, seed=1))
    c = [inst.truth[inst.labels == k] for k in (0, 1)]
    med = [np.median(np.linalg.norm(x - x.mean(axis=0), axis=1)) for x in c]
    direct = np.linalg.norm(c[0].mean(axis=0) - c[1].mean(axis=0)) / sum(med)
    assert squash_r3(inst.truth, inst.labels) == pytest.approx(direct, rel=1e-12)


def test_alignment_exact_similarity(rng):
    gt = rng.standard_normal((12, 3))
    est = 4.0 * gt @ _rand_rot(rng).T - 2.0
    rep = robust_align(est, gt)
    assert np.all(rep.errors < 1e-9) and rep.scale == pytest.approx(0.25)


# ---------------------------------------------------------------- harness


def test_noiseless_single_cell_sweep():
    rows = run_sweep(SweepGrid(pq=[(0.4, 0.0)], sigmas=[0.0], trials=1, n=20), ["bata", "revisedlud", "lud", "onedsfm"])
    assert all(r["nrmse"] < 1e-6 for r in rows)


def test_grid_refinement_is_stable():
    coarse, fine = run_toy_grid(resolution=0.01), run_toy_grid(resolution=0.005)
    assert np.linalg.norm(coarse.magnitude_min - fine.magnitude_min) < 0.01 * math.sqrt(2)
    assert np.linalg.norm(coarse.angular_min - fine.angular_min) < 0.01 * math.sqrt(2)
