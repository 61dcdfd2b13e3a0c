"""Synthetic view graphs: Gaussian camera layouts, Erdos-Renyi edges, angular corruption.

Random streams are derived from the instance seed with
:class:`numpy.random.SeedSequence`: one stream for locations, one for the
edge coin flips, and one per camera pair ``(i, j)`` for corruption, so an
edge's noise does not depend on which other edges were drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateInputError, ViewGraph, component_labels

# non-zero keys: a trailing zero word leaves SeedSequence entropy unchanged
_LOC, _EDGE, _CORRUPT = 1, 2, 3


@dataclass(frozen=True)
class SynthConfig:
    n: int = 200
    p: float = 0.3
    q: float = 0.0
    sigma_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        _check_common(self.p, self.q, self.sigma_deg)
        if self.n < 2:
            raise ValueError("n must be >= 2")


@dataclass(frozen=True)
class TwoClusterConfig:
    n_per_cluster: int = 100
    L: float = 0.0
    p: float = 0.3
    q: float = 0.0
    sigma_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        _check_common(self.p, self.q, self.sigma_deg)
        if self.n_per_cluster < 1:
            raise ValueError("n_per_cluster must be >= 1")
        if self.L < 0:
            raise ValueError("cluster separation L must be non-negative")


def _check_common(p, q, sigma_deg):
    if not 0 < p <= 1:
        raise ValueError("edge probability p must lie in (0, 1]")
    if not 0 <= q <= 1:
        raise ValueError("outlier ratio q must lie in [0, 1]")
    if sigma_deg < 0:
        raise ValueError("sigma_deg must be non-negative")


@dataclass
class SynthInstance:
    graph: ViewGraph
    truth: np.ndarray
    outlier: np.ndarray
    angular_error: np.ndarray
    labels: np.ndarray | None = None
    dropped_cameras: int = 0
    notes: list[str] = field(default_factory=list)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


def gen_locations(n: int, seed: int) -> np.ndarray:
    if n < 2:
        raise ValueError("n must be >= 2")
    return _rng(seed, _LOC).standard_normal((n, 3))


def gen_er_edges(n: int, p: float, seed: int) -> np.ndarray:
    """Each unordered pair ``i < j`` kept independently with probability ``p``."""
    if not 0 < p <= 1:
        raise ValueError("edge probability p must lie in (0, 1]")
    i, j = np.triu_indices(n, k=1)
    keep = _rng(seed, _EDGE).random(i.size) < p
    return np.stack([i[keep], j[keep]], axis=1)


def axis_angle_rotate(v, axis, angle: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about the unit ``axis`` by ``angle`` radians."""
    v = np.asarray(v, dtype=float)
    k = np.asarray(axis, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(k, v) * s + k * float(np.dot(k, v)) * (1.0 - c)


def orthonormal_complement(u) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    # pick the coordinate axis least aligned with u
    seed_axis = np.eye(3)[int(np.argmin(np.abs(u)))]
    e1 = np.cross(u, seed_axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


def sample_orthogonal_unit(direction, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample on the unit circle orthogonal to ``direction``."""
    e1, e2 = orthonormal_complement(direction)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    out = math.cos(phi) * e1 + math.sin(phi) * e2
    return out / np.linalg.norm(out)


def uniform_sphere(rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal(3)
    while np.linalg.norm(x) < 1e-12:
        x = rng.standard_normal(3)
    return x / np.linalg.norm(x)


def corrupt_direction(true_dir, q: float, sigma_deg: float, rng: np.random.Generator):
    """Return ``(direction, is_outlier, angle_to_true_dir)``.

    All draws are taken regardless of the branch so the stream layout is
    the same for every ``q``.
    """
    true_dir = np.asarray(true_dir, dtype=float)
    coin = rng.random()
    outlier_dir = uniform_sphere(rng)
    g = rng.standard_normal()
    axis = sample_orthogonal_unit(true_dir, rng)
    if coin < q:
        out = outlier_dir
        flag = True
    else:
        angle = math.radians(sigma_deg * g)
        out = axis_angle_rotate(true_dir, axis, angle) if angle != 0.0 else true_dir.copy()
        flag = False
    out = out / np.linalg.norm(out)
    err = math.atan2(np.linalg.norm(np.cross(out, true_dir)), float(np.dot(out, true_dir)))
    return out, flag, err


def _edges_from_truth(truth, pairs, q, sigma_deg, seed):
    m = pairs.shape[0]
    v = np.empty((m, 3))
    flags = np.zeros(m, dtype=bool)
    errs = np.empty(m)
    for k, (i, j) in enumerate(pairs):
        dt = truth[j] - truth[i]
        v[k], flags[k], errs[k] = corrupt_direction(
            dt / np.linalg.norm(dt), q, sigma_deg, _rng(seed, _CORRUPT, int(i), int(j))
        )
    return v, flags, errs


def _assemble(truth, labels, p, q, sigma_deg, seed) -> SynthInstance:
    n = truth.shape[0]
    pairs = gen_er_edges(n, p, seed)
    v, flags, errs = _edges_from_truth(truth, pairs, q, sigma_deg, seed)
    g = ViewGraph(n, pairs[:, 0], pairs[:, 1], v, np.zeros(len(pairs)))
    notes = []
    comp = component_labels(g) if g.m else np.arange(n)
    sizes = np.bincount(comp)
    keep_comp = int(np.argmax(sizes))
    dropped = n - int(sizes[keep_comp])
    if dropped:
        keep = comp == keep_comp
        if keep.sum() < 2:
            raise DegenerateInputError("largest connected component has fewer than 2 cameras")
        remap = -np.ones(n, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        ek = keep[pairs[:, 0]] & keep[pairs[:, 1]]
        g = ViewGraph(int(keep.sum()), remap[pairs[ek, 0]], remap[pairs[ek, 1]], v[ek], np.zeros(int(ek.sum())))
        truth, flags, errs = truth[keep], flags[ek], errs[ek]
        labels = labels[keep] if labels is not None else None
        notes.append(f"kept largest connected component: dropped {dropped} of {n} cameras")
    if g.m == 0:
        raise DegenerateInputError("sampled graph has no edges")
    return SynthInstance(g, truth, flags, errs, labels, dropped, notes)


def gen_instance(cfg: SynthConfig) -> SynthInstance:
    truth = gen_locations(cfg.n, cfg.seed)
    return _assemble(truth, None, cfg.p, cfg.q, cfg.sigma_deg, cfg.seed)


def gen_two_cluster(cfg: TwoClusterConfig) -> SynthInstance:
    """Two Gaussian clusters centred at ``(-L/2, 0, 0)`` and ``(+L/2, 0, 0)``."""
    n = 2 * cfg.n_per_cluster
    truth = gen_locations(n, cfg.seed)
    labels = np.repeat([0, 1], cfg.n_per_cluster)
    truth[:, 0] += np.where(labels == 0, -cfg.L / 2.0, cfg.L / 2.0)
    return _assemble(truth, labels, cfg.p, cfg.q, cfg.sigma_deg, cfg.seed)


def with_rotation_proxy(inst: SynthInstance, inlier: float = 0.0, outlier: float = 2.0) -> SynthInstance:
    """Attach stand-in rotation residuals: ``outlier`` on corrupted edges, ``inlier`` elsewhere."""
    rr = np.where(inst.outlier, outlier, inlier).astype(float)
    return SynthInstance(
        inst.graph.with_rot_residual(rr),
        inst.truth,
        inst.outlier,
        inst.angular_error,
        inst.labels,
        inst.dropped_cameras,
        list(inst.notes),
    )
