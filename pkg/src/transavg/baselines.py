"""Magnitude-based convex baselines and the 1DSfM angular objective.

* RevisedLUD: ``sum ||t_j - t_i - d_ij v_ij||`` under the BATA gauge with
  free ``d_ij``. Its optimum coincides with Shapefit's, whose residual is
  the component of ``t_j - t_i`` orthogonal to ``v_ij``.
* LUD: the same residual with ``d_ij >= c`` and only the centroid fixed.
  The weaker scale constraint lets long baselines shrink (squashing).
* 1DSfM: ``sum rho(||(t_j - t_i)/||t_j - t_i|| - v_ij||)``, minimized
  here by Levenberg-Marquardt on the reweighted normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .bata import (
    SolveDiagnostics,
    project_to_bata_gauge,
    random_init,
    run_irls_bcd,
)
from .core import SingularSystemError, ViewGraph, as_locations, centralize_normalize, require_connected
from .lls import build_bata_constraints, build_centroid_constraints
from .loss import Huber, L21Smooth, LossKind, psi


def shapefit_residual(dt, v):
    """Norm of the part of ``dt`` orthogonal to the unit direction ``v``."""
    dt = np.asarray(dt, dtype=float)
    v = np.asarray(v, dtype=float)
    perp = dt - np.sum(dt * v, axis=-1)[..., None] * v
    out = np.linalg.norm(perp, axis=-1)
    return float(out) if out.ndim == 0 else out


def _magnitude_linearize(v):
    def lin(d):
        return np.ones_like(d), d[:, None] * v

    return lin


# ---------------------------------------------------------------- RevisedLUD


@dataclass
class RevisedLudConfig:
    irls_iter: int = 100
    bcd_iter: int = 200
    loss: LossKind = field(default_factory=L21Smooth)
    beta: float = 0.0
    conv_tol: float = 1e-5
    init: str = "random"  # "random" | "provided"
    init_locations: np.ndarray | None = None
    seed: int = 0
    reg: float | None = None
    inner_tol: float = 1e-6

    def __post_init__(self):
        if self.init not in ("random", "provided"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.init_locations is None:
            raise ValueError("init='provided' needs init_locations")


def revised_lud_update_d(dt, v):
    return np.sum(dt * v, axis=-1)


def revised_lud_solve(g: ViewGraph, cfg: RevisedLudConfig | None = None):
    cfg = cfg or RevisedLudConfig()
    require_connected(g)
    if cfg.init == "provided":
        t0 = project_to_bata_gauge(g, as_locations(cfg.init_locations, g.n))
        if t0 is None:
            raise ValueError("provided initialization has a vanishing scale functional")
    else:
        t0 = random_init(g, cfg.seed)
    return run_irls_bcd(
        g,
        t0,
        d_update=revised_lud_update_d,
        linearize=_magnitude_linearize(g.v),
        constraints=build_bata_constraints(g),
        loss=cfg.loss,
        beta=cfg.beta,
        irls_iter=cfg.irls_iter,
        bcd_iter=cfg.bcd_iter,
        conv_tol=cfg.conv_tol,
        reg=cfg.reg,
        inner_tol=cfg.inner_tol,
    )


# ---------------------------------------------------------------- LUD


@dataclass
class LudConfig:
    c: float = 1.0
    irls_iter: int = 100
    bcd_iter: int = 200
    loss: LossKind = field(default_factory=L21Smooth)
    conv_tol: float = 1e-5
    init: str = "random"  # "random" | "convex" | "provided"
    init_locations: np.ndarray | None = None
    seed: int = 0
    reg: float | None = None
    inner_tol: float = 1e-6
    inner: str = "newton"  # "newton" | "bcd"
    newton_steps: int = 50

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("LUD lower bound c must be positive")
        if self.init not in ("random", "convex", "provided"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.init_locations is None:
            raise ValueError("init='provided' needs init_locations")
        if self.inner not in ("newton", "bcd"):
            raise ValueError(f"unknown inner solver {self.inner!r}")


def lud_update_d(dt, v, c: float):
    return np.maximum(np.sum(np.asarray(dt) * np.asarray(v), axis=-1), c)


def lud_edge_residuals(g: ViewGraph, t: np.ndarray, c: float) -> np.ndarray:
    """``||t_j - t_i - d v||`` at the optimal ``d = max(<t_j - t_i, v>, c)``."""
    dt = g.baselines(t)
    d = lud_update_d(dt, g.v, c)
    return np.linalg.norm(dt - d[:, None] * g.v, axis=1)


def lud_objective(g: ViewGraph, t: np.ndarray, c: float) -> float:
    return float(np.sum(lud_edge_residuals(g, t, c)))


def best_regime1_scale(g: ViewGraph, tS: np.ndarray, c: float) -> float:
    """Exact minimizer over ``gamma >= 0`` of the LUD objective at ``gamma * tS``.

    The objective is convex in ``gamma`` (a partial minimum over ``d`` of a
    jointly convex function), so a bounded scalar search is enough.
    """
    tS = as_locations(tS, g.n)
    proj = np.sum(g.baselines(tS) * g.v, axis=1)
    pos = proj[proj > 0]
    if pos.size == 0:
        return 0.0
    hi = 4.0 * c / float(pos.min())
    res = minimize_scalar(lambda gam: lud_objective(g, gam * tS, c), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-10 * hi})
    return float(res.x)


def lud_weighted_objective(g: ViewGraph, W, t: np.ndarray, c: float):
    """``sum W ||dt - d v||^2`` at the optimal clamped ``d``; also returns residual vectors and the free mask."""
    dt = g.baselines(t)
    p = np.sum(dt * g.v, axis=1)
    r = dt - np.maximum(p, c)[:, None] * g.v
    return float(np.sum(W * np.sum(r * r, axis=1))), r, p > c


def _lud_line_search(g: ViewGraph, W, c: float, t, D) -> float:
    """Exact minimizer over ``s >= 0`` of the weighted LUD objective along ``t + s D``.

    Along a line the objective is a convex piecewise quadratic with a
    continuous derivative, so bisection on the derivative finds the minimum.
    """
    A = g.baselines(t)
    B = g.baselines(D)
    p = np.sum(A * g.v, axis=1)
    q = np.sum(B * g.v, axis=1)

    def slope(s):
        r = A + s * B - np.maximum(p + s * q, c)[:, None] * g.v
        return float(np.sum(W * np.sum(r * B, axis=1)))

    if slope(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while slope(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lud_newton_inner(g: ViewGraph, W, t: np.ndarray, c: float, max_steps: int = 50, tol: float = 1e-14, reg=None):
    """Minimize the weighted LUD objective over ``t`` with every ``d`` eliminated.

    With ``d = max(<dt, v>, c)`` substituted, each edge contributes
    ``W dist(dt, {d v : d >= c})^2``, which is convex and continuously
    differentiable in ``t``. Its generalized Hessian has the 3x3 block
    ``W (I - v v^T)`` on free edges and ``W I`` on clamped ones, so a
    Newton step is one sparse KKT solve under the centroid constraint.
    Steps use an exact line search and therefore never increase the objective.
    """
    n = g.n
    C = sp.csr_matrix(build_centroid_constraints(n).C)
    f, r, free = lud_weighted_objective(g, W, t, c)
    trace = []
    eye3 = np.eye(3)
    for _ in range(max_steps):
        wr = W[:, None] * r
        grad = np.zeros((n, 3))
        np.add.at(grad, g.j, wr)
        np.subtract.at(grad, g.i, wr)
        M = eye3[None] - free[:, None, None] * (g.v[:, :, None] * g.v[:, None, :])
        H = _block_laplacian(g, W[:, None, None] * M)
        lam = reg if reg is not None else 1e-10 * max(float(H.diagonal().mean()), 1e-300)
        K = sp.bmat([[H + lam * sp.identity(3 * n, format="csc"), C.T], [C, None]], format="csc")
        try:
            step = splu(K).solve(np.concatenate([-grad.reshape(-1), np.zeros(3)]))[: 3 * n].reshape(n, 3)
        except RuntimeError as exc:
            raise SingularSystemError(f"LUD Newton system is singular: {exc}") from None
        s = _lud_line_search(g, W, c, t, step)
        t_new = t + s * step
        f_new, r_new, free_new = lud_weighted_objective(g, W, t_new, c)
        if not f_new < f:
            break
        done = f - f_new <= tol * f
        t, f, r, free = t_new, f_new, r_new, free_new
        trace.append(f)
        if done:
            break
    return t, trace


def lud_solve(g: ViewGraph, cfg: LudConfig | None = None):
    """IRLS on the LUD objective with ``d >= c`` and only the centroid fixed.

    ``inner='newton'`` (default) minimizes each reweighted problem over
    ``t`` with ``d`` eliminated (:func:`lud_newton_inner`);
    ``inner='bcd'`` alternates the ``d`` and ``t`` blocks instead. The block
    passes crawl when clamped edges must push the layout outwards, and on
    small instances they stall short of the optimum.

    ``init='convex'`` starts from the RevisedLUD shape rescaled by
    :func:`best_regime1_scale`.
    """
    cfg = cfg or LudConfig()
    require_connected(g)
    c = cfg.c
    init_diag = None
    if cfg.init == "provided":
        t0 = as_locations(cfg.init_locations, g.n)
    elif cfg.init == "convex":
        tS, init_diag = revised_lud_solve(g, RevisedLudConfig(seed=cfg.seed, reg=cfg.reg))
        t0 = best_regime1_scale(g, tS, c) * tS
    else:
        t0 = np.random.default_rng(cfg.seed).standard_normal((g.n, 3))
    t0 = t0 - t0.mean(axis=0)
    inner = None
    if cfg.inner == "newton":
        def inner(t, W):
            return lud_newton_inner(g, W, t, c, cfg.newton_steps, reg=cfg.reg)
    t, diag = run_irls_bcd(
        g,
        t0,
        d_update=lambda dt, v: lud_update_d(dt, v, c),
        linearize=_magnitude_linearize(g.v),
        constraints=build_centroid_constraints(g.n),
        loss=cfg.loss,
        beta=0.0,
        irls_iter=cfg.irls_iter,
        bcd_iter=cfg.bcd_iter,
        conv_tol=cfg.conv_tol,
        reg=cfg.reg,
        inner_tol=cfg.inner_tol,
        inner=inner,
    )
    diag.init_diagnostics = init_diag
    return t, diag


def regime1_residual(g: ViewGraph, tS: np.ndarray, c: float, gamma_grid) -> tuple[float, float]:
    """Best LUD objective over uniformly rescaled shapes ``gamma * tS``."""
    grid = np.asarray(gamma_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("gamma grid is empty")
    tS = as_locations(tS, g.n)
    vals = np.array([lud_objective(g, gam * tS, c) for gam in grid])
    k = int(np.argmin(vals))
    return float(grid[k]), float(vals[k])


# ---------------------------------------------------------------- 1DSfM


@dataclass
class OnedsfmConfig:
    loss: LossKind = field(default_factory=lambda: Huber(0.1))
    max_iter: int = 500
    gradient_tol: float = 1e-9
    init: str = "random"  # "random" | "convex" | "provided"
    init_locations: np.ndarray | None = None
    seed: int = 0
    epsilon_min: float = 1e-9
    convex_irls_iter: int = 10

    def __post_init__(self):
        if not self.epsilon_min > 0:
            raise ValueError("epsilon_min must be positive")
        if self.init not in ("random", "convex", "provided"):
            raise ValueError(f"unknown init {self.init!r}")


def _onedsfm_terms(g: ViewGraph, t: np.ndarray, cfg: OnedsfmConfig):
    dt = g.baselines(t)
    s = np.linalg.norm(dt, axis=1)
    ok = s >= cfg.epsilon_min
    u = np.where(ok[:, None], dt / np.where(ok, s, 1.0)[:, None], 0.0)
    r = u - g.v
    e = np.linalg.norm(r, axis=1)
    e = np.where(ok, e, 2.0)
    return dt, s, ok, u, r, e


def onedsfm_objective_grad(g: ViewGraph, t, cfg: OnedsfmConfig | None = None):
    """Robust 1DSfM objective and its gradient with respect to the ``(n, 3)`` locations."""
    cfg = cfg or OnedsfmConfig()
    t = as_locations(t, g.n)
    _, s, ok, u, r, e = _onedsfm_terms(g, t, cfg)
    value = float(np.sum(cfg.loss.rho(e)))
    # d rho(||r||) / d dt = psi(e) * J^T r, with J = (I - u u^T) / ||dt||
    gr = np.where(ok, psi(cfg.loss, e), 0.0)[:, None] * r
    gdt = (gr - u * np.sum(u * gr, axis=1)[:, None]) / np.where(ok, s, 1.0)[:, None]
    grad = np.zeros((g.n, 3))
    np.add.at(grad, g.j, gdt)
    np.subtract.at(grad, g.i, gdt)
    return value, grad


def _block_laplacian(g: ViewGraph, blk: np.ndarray):
    """Sparse ``3n x 3n`` matrix with edge block ``B`` at (i,i), (j,j) and ``-B`` at (i,j), (j,i)."""
    n = g.n
    rows, cols, vals = [], [], []
    a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    for p, q, sign in ((g.i, g.i, 1.0), (g.j, g.j, 1.0), (g.i, g.j, -1.0), (g.j, g.i, -1.0)):
        rows.append((3 * p[:, None, None] + a[None]).reshape(-1))
        cols.append((3 * q[:, None, None] + b[None]).reshape(-1))
        vals.append((sign * blk).reshape(-1))
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n))
    return H.tocsc()


def _onedsfm_normal_matrix(g: ViewGraph, t: np.ndarray, cfg: OnedsfmConfig):
    _, s, ok, u, _, e = _onedsfm_terms(g, t, cfg)
    c = np.where(ok, psi(cfg.loss, e) / np.where(ok, s, 1.0) ** 2, 0.0)
    P = np.eye(3)[None] - u[:, :, None] * u[:, None, :]
    return _block_laplacian(g, c[:, None, None] * P)


def onedsfm_solve(g: ViewGraph, cfg: OnedsfmConfig | None = None):
    """Levenberg-Marquardt on the reweighted Gauss-Newton model of the 1DSfM objective.

    The gauge is fixed by re-centring and rescaling to unit total norm after
    every accepted step; the objective is invariant to both.
    """
    cfg = cfg or OnedsfmConfig()
    require_connected(g)
    init_diag = None
    if cfg.init == "provided":
        t = as_locations(cfg.init_locations, g.n)
    elif cfg.init == "convex":
        t, init_diag = revised_lud_solve(
            g, RevisedLudConfig(irls_iter=cfg.convex_irls_iter, bcd_iter=1, seed=cfg.seed)
        )
    else:
        t = np.random.default_rng(cfg.seed).standard_normal((g.n, 3))
    t = centralize_normalize(t)
    f, grad = onedsfm_objective_grad(g, t, cfg)
    f_init = f
    trace: list[float] = []
    lam = 1e-3
    dim = 3 * g.n
    converged = False
    it = 0
    eye = sp.identity(dim, format="csc")
    while True:
        gnorm = float(np.linalg.norm(grad - grad.mean(axis=0)))
        if gnorm <= cfg.gradient_tol:
            converged = True
            break
        if it >= cfg.max_iter:
            break
        H = _onedsfm_normal_matrix(g, t, cfg)
        scale = max(float(H.diagonal().mean()), 1e-12)
        accepted = False
        while not accepted and lam < 1e16:
            step = splu(H + lam * scale * eye).solve(-grad.reshape(-1)).reshape(g.n, 3)
            t_new = t + step
            if np.sum((t_new - t_new.mean(axis=0)) ** 2) <= 1e-300:
                lam *= 4.0
                continue
            t_new = centralize_normalize(t_new)
            f_new, grad_new = onedsfm_objective_grad(g, t_new, cfg)
            if f_new < f or (f_new == f and f == 0.0):
                accepted = True
                t, f, grad = t_new, f_new, grad_new
                lam = max(lam / 3.0, 1e-12)
            else:
                lam *= 4.0
        it += 1
        trace.append(f)
        if not accepted:
            break
    diag = SolveDiagnostics(
        objective_trace=trace,
        outer_iterations_used=it,
        converged=converged,
        weights=np.asarray(cfg.loss.weight(_onedsfm_terms(g, t, cfg)[5])),
        d=1.0 / np.maximum(np.linalg.norm(g.baselines(t), axis=1), cfg.epsilon_min),
        init_objective=f_init,
        init_diagnostics=init_diag,
        final_objective=f,
    )
    return t, diag
