import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_graph
from transavg.core import DegenerateInputError
from transavg.metrics import (
    nrmse,
    nrmse_per_cluster,
    percentile,
    robust_align,
    squash_r1_r2,
    squash_r3,
)


def _rot(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return Q * np.sign(np.linalg.det(Q))


def sorted_percentile(vals, b):
    s = sorted(vals)
    pos = b / 100 * (len(s) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0, 100))
def test_percentile_matches_sort_oracle(vals, b):
    assert percentile(vals, b) == pytest.approx(sorted_percentile(vals, b), rel=1e-12, abs=1e-9)


def test_nrmse_gauge_invariance(rng):
    gt = rng.standard_normal((10, 3))
    assert nrmse(3.0 * gt + 7.0, gt) == pytest.approx(0.0, abs=1e-14)
    # not invariant to rotation: that is what alignment is for
    assert nrmse(gt @ _rot(rng).T, gt) > 1e-3
    # two unit-norm centred sets differ by at most 2
    assert nrmse(-gt, gt) == pytest.approx(2.0)


def test_nrmse_per_cluster_ignores_relative_placement(rng):
    gt = rng.standard_normal((12, 3))
    lab = np.repeat([0, 1], 6)
    est = gt.copy()
    est[lab == 1] = 0.1 * est[lab == 1] + 50.0
    assert nrmse_per_cluster(est, gt, lab) == pytest.approx(0.0, abs=1e-13)
    assert nrmse(est, gt) > 0.5


def test_squash_ratios_hand_computed():
    t = np.array([[0.0, 0, 0], [1, 0, 0], [3, 0, 0], [6, 0, 0], [10, 0, 0]])
    g = exact_graph(t, [(0, 1), (1, 2), (2, 3), (3, 4)])
    sq = squash_r1_r2(g, t)
    # lengths 1,2,3,4: quartiles 1.75 and 3.25
    assert sq.r1 == pytest.approx(3.25 / 1.75)
    radii = np.abs(t[:, 0] - 4.0)
    assert sq.r2 == pytest.approx(sorted_percentile(radii, 75) / sorted_percentile(radii, 25))


def test_squash_r3():
    a = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    t = np.vstack([a, a + [10.0, 0, 0]])
    lab = np.repeat([0, 1], 3)
    spread = np.median(np.linalg.norm(a - a.mean(axis=0), axis=1))
    assert squash_r3(t, lab) == pytest.approx(10.0 / (2 * spread))
    with pytest.raises(ValueError):
        squash_r3(t, np.arange(6) % 3)
    assert squash_r3(np.vstack([np.zeros((3, 3)), np.ones((3, 3))]), lab) == np.inf


def test_robust_align_recovers_similarity_with_outliers(rng):
    gt = rng.standard_normal((40, 3)) * 10
    R = _rot(rng)
    est = (0.3 * gt @ R.T) + [1.0, -2.0, 5.0]
    est[:5] += rng.standard_normal((5, 3)) * 20  # far outside the spread of est
    rep = robust_align(est, gt)
    assert rep.median_error < 1e-6
    assert rep.scale == pytest.approx(1 / 0.3, rel=1e-6)
    assert not rep.inliers[:5].any() and rep.inliers[5:].all()
    assert not rep.reflection_suspected


def test_robust_align_single_gross_outlier(rng):
    gt = rng.standard_normal((20, 3))
    est = gt.copy()
    est[3] += [100.0, 0.0, 0.0]
    rep = robust_align(est, gt)
    assert rep.median_error < 1e-6
    assert rep.mean_error == pytest.approx(100.0 / 20, rel=1e-6)


def test_robust_align_exact_majority():
    gt = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]])
    est = gt.copy()
    est[4] = [50.0, -20, 3]
    rep = robust_align(est, gt)
    assert rep.median_error < 1e-12 and rep.inliers.tolist() == [True] * 4 + [False]


def test_robust_align_flags_reflection(rng):
    gt = rng.standard_normal((20, 3))
    rep = robust_align(gt * [1, 1, -1], gt)
    assert rep.reflection_suspected


def test_robust_align_degenerate():
    line = np.outer(np.arange(5.0), [1, 0, 0])
    with pytest.raises(DegenerateInputError):
        robust_align(line, line)
