"""Accuracy and shape metrics: NRMSE, squash ratios, robust similarity alignment."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import DegenerateInputError, ViewGraph, as_locations, centralize_normalize


@dataclass
class SquashRatios:
    r1: float
    r2: float
    r3: float | None = None


@dataclass
class AlignedErrorReport:
    median_error: float
    mean_error: float
    errors: np.ndarray
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    inliers: np.ndarray
    reflection_suspected: bool = False


def nrmse(est, gt) -> float:
    """Root-sum-square error after centring both sets and scaling each to unit total norm."""
    est, gt = as_locations(est), as_locations(gt)
    if est.shape != gt.shape:
        raise ValueError("location sets differ in size")
    diff = centralize_normalize(est) - centralize_normalize(gt)
    return float(np.sqrt(np.sum(diff * diff)))


def nrmse_per_cluster(est, gt, labels) -> float:
    """NRMSE with each cluster centred and normalized on its own, errors pooled."""
    est, gt = as_locations(est), as_locations(gt)
    labels = np.asarray(labels)
    total = 0.0
    for c in np.unique(labels):
        sel = labels == c
        diff = centralize_normalize(est[sel]) - centralize_normalize(gt[sel])
        total += float(np.sum(diff * diff))
    return float(np.sqrt(total))


def percentile(values, b: float) -> float:
    """Linearly interpolated percentile at rank ``(b / 100) (k - 1)`` of the sorted values."""
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.size == 0:
        raise ValueError("percentile of an empty list")
    if not 0 <= b <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    return float(np.percentile(vals, b, method="linear"))


def _ratio(values) -> float:
    lo = percentile(values, 25)
    hi = percentile(values, 75)
    return hi / lo if lo > 0 else float("inf")


def squash_r1_r2(g: ViewGraph, t) -> SquashRatios:
    """Inter-quartile ratios of baseline lengths (r1) and centred camera radii (r2)."""
    t = as_locations(t, g.n)
    if g.m < 4:
        raise ValueError("r1 needs at least 4 edges")
    if g.n < 4:
        raise ValueError("r2 needs at least 4 cameras")
    lengths = np.linalg.norm(g.baselines(t), axis=1)
    radii = np.linalg.norm(t - t.mean(axis=0), axis=1)
    return SquashRatios(_ratio(lengths), _ratio(radii))


def squash_r3(t, labels) -> float:
    """Centre distance over the summed median spreads of two clusters; ``inf`` when both collapse."""
    t = as_locations(t)
    labels = np.asarray(labels)
    groups = np.unique(labels)
    if groups.size != 2:
        raise ValueError(f"r3 needs exactly two clusters, got {groups.size}")
    centres, spreads = [], []
    for c in groups:
        pts = t[labels == c]
        ctr = pts.mean(axis=0)
        centres.append(ctr)
        spreads.append(float(np.median(np.linalg.norm(pts - ctr, axis=1))))
    l12 = float(np.linalg.norm(centres[0] - centres[1]))
    denom = spreads[0] + spreads[1]
    if denom == 0.0:
        return float("inf")
    return l12 / denom


def weighted_similarity(src, dst, w):
    """Weighted least-squares similarity ``dst ~ s R src + t`` (Umeyama with weights)."""
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    cov = (xd * w[:, None]).T @ xs
    U, S, Vt = np.linalg.svd(cov)
    D = np.ones(3)
    flipped = np.linalg.det(U) * np.linalg.det(Vt) < 0
    if flipped:
        D[-1] = -1.0
    R = U @ np.diag(D) @ Vt
    var_s = float(np.sum(w * np.sum(xs * xs, axis=1)))
    s = float(np.dot(S, D) / var_s)
    tr = mu_d - s * R @ mu_s
    return s, R, tr, bool(flipped)


def _check_spread(pts, what):
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateInputError(f"{what} locations are coincident or collinear")


def _lmeds_errors(est, gt, max_samples: int = 500, seed: int = 0):
    """Errors of the 3-point similarity with the least median error (LMedS start for IRLS).

    All triples are tried when there are few enough; otherwise a fixed-seed
    random subset, so the result is deterministic.
    """
    n = est.shape[0]
    if math.comb(n, 3) <= max_samples:
        triples = itertools.combinations(range(n), 3)
    else:
        rng = np.random.default_rng(seed)
        triples = (rng.choice(n, 3, replace=False) for _ in range(max_samples))
    best, best_err = math.inf, None
    ones = np.ones(3)
    for idx in triples:
        idx = list(idx)
        src = est[idx] - est[idx].mean(axis=0)
        if np.sum(src * src) <= 1e-24 * (1.0 + np.sum(est[idx] ** 2)):
            continue
        s, R, tr, _ = weighted_similarity(est[idx], gt[idx], ones)
        err = np.linalg.norm(s * est @ R.T + tr - gt, axis=1)
        med = float(np.median(err))
        if med < best:
            best, best_err = med, err
    return best_err


def robust_align(est, gt, irls_rounds: int = 50) -> AlignedErrorReport:
    """Register ``est`` onto ``gt`` by a similarity, down-weighting outliers with Cauchy IRLS.

    IRLS starts from the least-median 3-point fit, so a few grossly wrong
    cameras cannot drag the first estimate away. The Cauchy width is
    re-estimated every round as 1.4826 times the median distance. Errors
    are reported in the units of ``gt``.
    """
    est, gt = as_locations(est), as_locations(gt)
    if est.shape != gt.shape:
        raise ValueError("location sets differ in size")
    if est.shape[0] < 3:
        raise DegenerateInputError("alignment needs at least 3 cameras")
    _check_spread(gt, "ground-truth")
    _check_spread(est, "estimated")
    err = _lmeds_errors(est, gt)
    w = np.ones(est.shape[0])
    if err is not None:
        alpha = 1.4826 * float(np.median(err))
        if alpha > 0:
            w = alpha**2 / (alpha**2 + err**2)
        else:
            # at least half the cameras fit exactly; keep only those
            w = (err == 0.0).astype(float)
    flipped = False
    for _ in range(max(1, irls_rounds)):
        s, R, tr, flipped = weighted_similarity(est, gt, w)
        err = np.linalg.norm(s * est @ R.T + tr - gt, axis=1)
        alpha = 1.4826 * float(np.median(err))
        if alpha <= 1e-15 * (1.0 + float(np.max(np.abs(gt)))):
            break
        w = alpha**2 / (alpha**2 + err**2)
    err = np.linalg.norm(s * est @ R.T + tr - gt, axis=1)
    alpha = 1.4826 * float(np.median(err))
    inliers = err <= max(3.0 * alpha, 1e-12)
    return AlignedErrorReport(
        median_error=float(np.median(err)),
        mean_error=float(np.mean(err)),
        errors=err,
        scale=s,
        rotation=R,
        translation=tr,
        inliers=inliers,
        reflection_suspected=flipped,
    )
