"""Experiment drivers behind the CLI: method dispatch, synthetic sweeps and the two toy studies."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines as bl
from . import bata
from .core import TransAvgError, ViewGraph
from .loss import make_loss
from .metrics import nrmse, nrmse_per_cluster, squash_r1_r2, squash_r3
from .synthetic import SynthConfig, TwoClusterConfig, gen_instance, gen_two_cluster, with_rotation_proxy

METHODS = ("bata", "revisedlud", "lud", "onedsfm")

SWEEP_COLUMNS = (
    "p", "q", "sigma_deg", "L", "trial", "method", "status",
    "nrmse", "r1", "r2", "r3", "gt_r1", "gt_r2", "gt_r3",
    "iters", "converged", "seconds",
)


class ConfigError(TransAvgError, ValueError):
    pass


# ---------------------------------------------------------------- method dispatch

_CONFIGS = {
    "bata": bata.BataConfig,
    "revisedlud": bl.RevisedLudConfig,
    "lud": bl.LudConfig,
    "onedsfm": bl.OnedsfmConfig,
}

# option name -> config field, per method
_FIELDS = {
    "bata": {"irls_iter": "irls_iter", "bcd_iter": "bcd_iter", "conv_tol": "conv_tol", "beta": "beta"},
    "revisedlud": {"irls_iter": "irls_iter", "bcd_iter": "bcd_iter", "conv_tol": "conv_tol", "beta": "beta"},
    "lud": {"irls_iter": "irls_iter", "bcd_iter": "bcd_iter", "conv_tol": "conv_tol", "c": "c"},
    "onedsfm": {"irls_iter": "max_iter", "conv_tol": "gradient_tol"},
}

_INITS = {
    "bata": ("random", "convex", "file"),
    "revisedlud": ("random", "file"),
    "lud": ("random", "convex", "file"),
    "onedsfm": ("random", "convex", "file"),
}


def method_config(method: str, opts: dict | None = None, seed: int = 0, strict: bool = True):
    """Build the solver config for ``method`` from CLI-style options.

    ``None`` values mean "use the solver default". With ``strict`` an option
    that does not apply to the method is a :class:`ConfigError`; sweeps pass
    ``strict=False`` so one option set can serve several methods.
    """
    if method not in _CONFIGS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    opts = {k: v for k, v in (opts or {}).items() if v is not None}
    cls = _CONFIGS[method]
    base = cls()
    kw: dict = {"seed": seed}
    for key, val in opts.items():
        if key in _FIELDS[method]:
            kw[_FIELDS[method][key]] = val
        elif key in ("loss", "alpha", "delta", "init", "init_locations"):
            continue
        elif strict:
            raise ConfigError(f"option {key!r} does not apply to method {method!r}")
    if any(k in opts for k in ("loss", "alpha", "delta")):
        name = opts.get("loss", base.loss.name)
        kw["loss"] = make_loss(
            name,
            alpha=opts.get("alpha", getattr(base.loss, "alpha", 0.1)),
            delta=opts.get("delta", getattr(base.loss, "delta", 0.1)),
        )
    init = opts.get("init")
    if init is not None:
        if init not in _INITS[method]:
            raise ConfigError(f"init {init!r} is not available for {method!r}")
        if init == "file":
            if opts.get("init_locations") is None:
                raise ConfigError("init=file needs --init-file")
            kw["init"] = "provided"
            kw["init_locations"] = opts["init_locations"]
        else:
            kw["init"] = init
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def run_method(method: str, g: ViewGraph, cfg):
    if method == "bata":
        return bata.solve(g, cfg)
    if method == "revisedlud":
        return bl.revised_lud_solve(g, cfg)
    if method == "lud":
        return bl.lud_solve(g, cfg)
    if method == "onedsfm":
        return bl.onedsfm_solve(g, cfg)
    raise ConfigError(f"unknown method {method!r}")


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepGrid:
    """Either ``(p, q)`` cells crossed with ``sigmas``, or ``(p, q)`` crossed with cluster gaps ``Ls``."""

    pq: list[tuple[float, float]] = field(
        default_factory=lambda: [(0.1, 0.0), (0.3, 0.0), (0.5, 0.0), (0.1, 0.2), (0.3, 0.2), (0.5, 0.2)]
    )
    sigmas: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0])
    Ls: list[float] | None = None
    trials: int = 20
    n: int = 200

    def __post_init__(self):
        if not self.pq or not self.sigmas or (self.Ls is not None and not self.Ls):
            raise ConfigError("sweep axes must be non-empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 4:
            raise ConfigError("n must be >= 4")

    def cells(self):
        for p, q in self.pq:
            for s in self.sigmas:
                if self.Ls is None:
                    yield p, q, s, math.nan
                else:
                    for L in self.Ls:
                        yield p, q, s, L


def trial_seed(seed: int, trial: int) -> int:
    """Instance seed for one trial; shared across cells so sweeps are paired."""
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])


def _instance(grid: SweepGrid, p, q, s, L, iseed, rot_proxy):
    if grid.Ls is None:
        inst = gen_instance(SynthConfig(n=grid.n, p=p, q=q, sigma_deg=s, seed=iseed))
    else:
        inst = gen_two_cluster(TwoClusterConfig(n_per_cluster=grid.n // 2, L=L, p=p, q=q, sigma_deg=s, seed=iseed))
    return with_rotation_proxy(inst) if rot_proxy else inst


def _trial_rows(grid, cell, trial, methods, opts, seed, rot_proxy, cluster_nrmse, timing):
    p, q, s, L = cell
    inst = _instance(grid, p, q, s, L, trial_seed(seed, trial), rot_proxy)
    g = inst.graph
    gt = squash_r1_r2(g, inst.truth)
    gt_r3 = squash_r3(inst.truth, inst.labels) if inst.labels is not None else math.nan
    rows = []
    for method in methods:
        row = dict(p=p, q=q, sigma_deg=s, L=L, trial=trial, method=method, status="ok",
                   nrmse=math.nan, r1=math.nan, r2=math.nan, r3=math.nan,
                   gt_r1=gt.r1, gt_r2=gt.r2, gt_r3=gt_r3, iters=math.nan, converged=math.nan, seconds=math.nan)
        t0 = time.perf_counter()
        try:
            t, diag = run_method(method, g, method_config(method, opts, seed=trial_seed(seed, trial), strict=False))
        except (TransAvgError, ValueError, ArithmeticError) as exc:
            row["status"] = f"failed:{type(exc).__name__}"
        else:
            if cluster_nrmse and inst.labels is not None:
                row["nrmse"] = nrmse_per_cluster(t, inst.truth, inst.labels)
            else:
                row["nrmse"] = nrmse(t, inst.truth)
            sq = squash_r1_r2(g, t)
            row.update(r1=sq.r1, r2=sq.r2, iters=diag.outer_iterations_used, converged=int(diag.converged))
            if inst.labels is not None:
                row["r3"] = squash_r3(t, inst.labels)
        if timing:
            row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _median(vals):
    v = np.asarray([x for x in vals if not math.isnan(float(x))], dtype=float)
    return float(np.median(v)) if v.size else math.nan


def _aggregate(rows, cell, method):
    ok = [r for r in rows if r["status"] == "ok"]
    p, q, s, L = cell
    agg = dict(p=p, q=q, sigma_deg=s, L=L, trial="median", method=method, status=f"ok{len(ok)}/{len(rows)}")
    for col in ("nrmse", "r1", "r2", "r3", "iters", "converged", "seconds"):
        agg[col] = _median([r[col] for r in ok])
    # ground-truth ratios do not depend on whether the solve succeeded
    for col in ("gt_r1", "gt_r2", "gt_r3"):
        agg[col] = _median([r[col] for r in rows])
    return agg


def run_sweep(grid: SweepGrid, methods=METHODS, opts: dict | None = None, seed: int = 0,
              rot_proxy: bool = False, cluster_nrmse: bool = False, timing: bool = False,
              threads: int | None = None) -> list[dict]:
    """One row per cell x trial x method, followed by one median row per cell x method.

    Trials are independent (each derives its instance and solver seeds from
    ``seed`` and the trial index), so running them on ``threads`` workers
    gives the same rows as a serial run. ``seconds`` is only measured with
    ``timing`` so that reruns are byte-identical by default.
    """
    methods = list(methods)
    if not methods:
        raise ConfigError("no methods selected")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if threads is None:
        try:
            threads = max(1, int(os.environ.get("BATA_THREADS", "1") or 1))
        except ValueError:
            raise ConfigError("BATA_THREADS must be an integer") from None
    cells = list(grid.cells())
    jobs = [(c, trial) for c in range(len(cells)) for trial in range(grid.trials)]

    def work(job):
        c, trial = job
        return _trial_rows(grid, cells[c], trial, methods, opts, seed, rot_proxy, cluster_nrmse, timing)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(work, jobs))
    else:
        chunks = [work(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    agg = []
    for c, cell in enumerate(cells):
        in_cell = [r for (cj, _), chunk in zip(jobs, chunks) if cj == c for r in chunk]
        for method in methods:
            agg.append(_aggregate([r for r in in_cell if r["method"] == method], cell, method))
    return rows + agg


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


# ---------------------------------------------------------------- toy studies


def rotate2d(v, deg: float) -> np.ndarray:
    """Rotate 2D vectors counter-clockwise by ``deg`` degrees."""
    a = math.radians(deg)
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return np.asarray(v, dtype=float) @ R.T


TOY_GRID_NEIGHBOURS = np.array([[-1.0, 0.0], [0.0, -1.0], [5.0, 0.0]])


@dataclass
class ToyGridResult:
    resolution: float
    noise_deg: float
    magnitude_min: np.ndarray
    angular_min: np.ndarray
    magnitude_value: float
    angular_value: float

    @property
    def magnitude_dist(self) -> float:
        return float(np.linalg.norm(self.magnitude_min))

    @property
    def angular_dist(self) -> float:
        return float(np.linalg.norm(self.angular_min))


def toy_grid_objectives(x, neighbours, v):
    """Magnitude ``sum ||x - n - ||x - n|| v||^2`` and angular ``sum theta^2`` at points ``x`` (..., 2).

    A point that coincides with a neighbour has no direction; its angle is
    taken as ``pi``, the largest possible value.
    """
    x = np.asarray(x, dtype=float)
    mag = np.zeros(x.shape[:-1])
    ang = np.zeros(x.shape[:-1])
    for nk, vk in zip(neighbours, v):
        dx = x - nk
        s = np.linalg.norm(dx, axis=-1)
        mag += np.sum((dx - s[..., None] * vk) ** 2, axis=-1)
        cross = dx[..., 0] * vk[1] - dx[..., 1] * vk[0]
        dot = dx @ vk
        theta = np.where(s > 0, np.arctan2(np.abs(cross), dot), math.pi)
        ang += theta**2
    return mag, ang


def run_toy_grid(noise_deg: float = 3.0, resolution: float = 0.01, half_width: float = 2.0) -> ToyGridResult:
    """Exhaustive grid search for the 2D three-neighbour toy with the target at the origin."""
    if not resolution > 0:
        raise ConfigError("resolution must be positive")
    nb = TOY_GRID_NEIGHBOURS
    truth_dirs = -nb / np.linalg.norm(nb, axis=1)[:, None]
    v = rotate2d(truth_dirs, noise_deg)
    k = int(round(half_width / resolution))
    axis = np.arange(-k, k + 1) * resolution
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    mag, ang = toy_grid_objectives(pts, nb, v)
    im = np.unravel_index(int(np.argmin(mag)), mag.shape)
    ia = np.unravel_index(int(np.argmin(ang)), ang.shape)
    return ToyGridResult(resolution, noise_deg, pts[im].copy(), pts[ia].copy(), float(mag[im]), float(ang[ia]))


TOY_SQUASH_CAMERAS = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [10.0, 0.0, 0.0]])


def toy_squash_graph(noise_deg: float = 3.0, seed: int = 0) -> tuple[ViewGraph, np.ndarray]:
    """All six edges of the four-camera toy, each direction turned in-plane by ``noise_deg``.

    The turn direction of each edge is a seeded coin flip. Turning every
    edge the same way would just rotate the whole layout, which is exactly
    consistent and shows no squashing.
    """
    t = TOY_SQUASH_CAMERAS
    i, j = np.triu_indices(4, k=1)
    dt = t[j] - t[i]
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=len(i))
    d2 = dt[:, :2] / np.linalg.norm(dt[:, :2], axis=1)[:, None]
    d2 = np.array([rotate2d(d, sg * noise_deg) for d, sg in zip(d2, signs)])
    v = np.column_stack([d2, np.zeros(len(i))])
    v /= np.linalg.norm(v, axis=1)[:, None]
    return ViewGraph(4, i, j, v, np.zeros(len(i))), t.copy()


def far_camera_ratio(t) -> float:
    """Distance of camera 4 to the centroid of cameras 1-3, over the perimeter of triangle 1-2-3."""
    t = np.asarray(t, dtype=float)
    tri = t[:3]
    per = sum(float(np.linalg.norm(tri[a] - tri[b])) for a, b in ((0, 1), (1, 2), (2, 0)))
    if per == 0.0:
        return math.inf
    return float(np.linalg.norm(t[3] - tri.mean(axis=0))) / per


@dataclass
class ToySquashResult:
    noise_deg: float
    c: float
    regime1_gamma: float
    regime1_objective: float
    regime2_objective: float
    ratio_truth: float
    ratio_lud: float
    ratio_revisedlud: float
    nrmse_lud: float
    nrmse_revisedlud: float
    edge_rows: list[dict]

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in (
            "noise_deg", "c", "regime1_gamma", "regime1_objective", "regime2_objective",
            "ratio_truth", "ratio_lud", "ratio_revisedlud", "nrmse_lud", "nrmse_revisedlud")}


def run_toy_squash(noise_deg: float = 3.0, c: float = 1.0, seed: int = 0) -> ToySquashResult:
    g, truth = toy_squash_graph(noise_deg, seed)
    t_rl, _ = bl.revised_lud_solve(g, bl.RevisedLudConfig(seed=seed))
    t_lud, _ = bl.lud_solve(g, bl.LudConfig(c=c, seed=seed))
    # dense grid around the exact regime-1 scale; the grid search is the reported quantity
    g_star = bl.best_regime1_scale(g, t_rl, c)
    grid = np.union1d(np.linspace(0.0, 2.0 * g_star, 4001), [g_star])
    gamma, r1_obj = bl.regime1_residual(g, t_rl, c, grid)
    r2_obj = bl.lud_objective(g, t_lud, c)
    edges = []
    for name, t in (("revisedlud", t_rl), ("regime1", gamma * t_rl), ("lud", t_lud)):
        dt = g.baselines(t)
        if name == "revisedlud":
            res = bl.shapefit_residual(dt, g.v)
        else:
            res = bl.lud_edge_residuals(g, t, c)
        for k in range(g.m):
            edges.append(dict(method=name, edge=k, i=int(g.i[k]), j=int(g.j[k]),
                              length=float(np.linalg.norm(dt[k])), residual=float(res[k])))
    return ToySquashResult(
        noise_deg, c, gamma, r1_obj, r2_obj,
        far_camera_ratio(truth), far_camera_ratio(t_lud), far_camera_ratio(t_rl),
        nrmse(t_lud, truth), nrmse(t_rl, truth), edges,
    )


__all__ = [
    "METHODS", "SWEEP_COLUMNS", "ConfigError", "SweepGrid", "method_config", "run_method",
    "run_sweep", "trial_seed", "format_value", "run_toy_grid", "run_toy_squash", "toy_squash_graph",
    "toy_grid_objectives", "far_camera_ratio", "ToyGridResult", "ToySquashResult",
]
