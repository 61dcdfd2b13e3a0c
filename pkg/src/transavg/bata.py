"""Bilinear angle-based translation averaging (BATA) solved by IRLS with block coordinate descent.

Per edge the objective is ``rho(||(t_j - t_i) d_ij - v_ij||)`` with
``d_ij >= 0``. For fixed locations the optimal ``d_ij`` makes the
residual equal to ``sin(theta_ij)`` up to 90 degrees and 1 beyond, so
the objective is angular while each block update stays linear.

The IRLS-BCD driver here is shared with the convex baselines, which only
differ in how ``d`` is updated and how an edge is linearized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ViewGraph, as_locations, require_connected
from .lls import (
    EdgeRows,
    GaugeConstraints,
    KktSystem,
    LlsReport,
    build_bata_constraints,
    scale_row,
    weighted_objective,
)
from .loss import Cauchy, L21Smooth, LossKind, combined_residual

DEGENERATE_BASELINE = 1e-14
WEIGHT_FLOOR = 1e-12
# per-edge objective below which the fit is exact up to rounding; relative changes there are noise
OBJECTIVE_FLOOR = 1e-20


@dataclass
class BataConfig:
    irls_iter: int = 100
    bcd_iter: int = 5
    loss: LossKind = field(default_factory=lambda: Cauchy(0.1))
    beta: float = 1.0
    conv_tol: float = 1e-5
    init: str = "convex"  # "random" | "convex" | "provided"
    init_locations: np.ndarray | None = None
    convex_irls_iter: int = 50
    # inner passes stop at the RevisedLUD inner tolerance; a single pass leaves the
    # start far from the convex optimum and BATA then often lands in a wrong basin
    convex_bcd_iter: int = 200
    seed: int = 0
    reg: float | None = None

    def __post_init__(self):
        if self.irls_iter < 1 or self.bcd_iter < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.init not in ("random", "convex", "provided"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.init_locations is None:
            raise ValueError("init='provided' needs init_locations")


@dataclass
class SolveDiagnostics:
    objective_trace: list[float]
    outer_iterations_used: int
    converged: bool
    weights: np.ndarray
    d: np.ndarray
    inner_trace: list[list[float]] = field(default_factory=list)
    last_report: LlsReport | None = None
    init_objective: float = math.nan
    init_diagnostics: "SolveDiagnostics | None" = None
    # objective of the returned locations with every d at its optimum for them
    final_objective: float = math.nan


# ---------------------------------------------------------------- per-edge operations


def update_d(dt, v):
    """Clamped optimal scale ``max(<dt, v> / ||dt||^2, 0)``; zero for degenerate baselines."""
    dt = np.asarray(dt, dtype=float)
    v = np.asarray(v, dtype=float)
    nsq = np.sum(dt * dt, axis=-1)
    proj = np.sum(dt * v, axis=-1)
    ok = nsq >= DEGENERATE_BASELINE**2
    d = np.where(ok, np.maximum(proj, 0.0) / np.where(ok, nsq, 1.0), 0.0)
    return float(d) if d.ndim == 0 else d


def h_theta(theta):
    """Per-edge penalty at the optimal scale: ``sin(theta)`` up to 90 degrees, then 1."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(th > math.pi) or np.any(np.isnan(th)):
        raise ValueError("theta must lie in [0, pi]")
    out = np.where(th <= math.pi / 2, np.sin(th), 1.0)
    return float(out) if out.ndim == 0 else out


def angle_between(a, b):
    """Angle in ``[0, pi]`` via atan2 of cross and dot (accurate near 0 and pi)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cr = np.linalg.norm(np.cross(a, b), axis=-1)
    dt = np.sum(a * b, axis=-1)
    out = np.arctan2(cr, dt)
    return float(out) if out.ndim == 0 else out


def optimal_penalty_equivalence(dt, v):
    """Return ``(d, residual, theta)`` for the optimal clamped scale on one edge."""
    dt = np.asarray(dt, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    if np.linalg.norm(dt) < DEGENERATE_BASELINE:
        raise ValueError("degenerate baseline")
    d = update_d(dt, v)
    res = float(np.linalg.norm(dt * d - v))
    return d, res, angle_between(dt, v)


def bata_objective(g: ViewGraph, t, d, loss: LossKind, beta: float = 1.0) -> float:
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("scale variables must be non-negative")
    eps = combined_residual(t[g.i], t[g.j], d, g.v, g.rot_residual, beta)
    return float(np.sum(loss.rho(np.atleast_1d(eps))))


# ---------------------------------------------------------------- shared driver


def project_to_bata_gauge(g: ViewGraph, t: np.ndarray) -> np.ndarray | None:
    """Centre ``t`` and rescale so that ``sum <t_j - t_i, v_ij> = 1``; None if the scale functional vanishes."""
    t = t - t.mean(axis=0)
    s = float(scale_row(g) @ t.reshape(-1))
    if abs(s) <= 1e-12:
        return None
    # dividing by a negative s also flips the sign, as the constraint needs +1
    return t / s


def random_init(g: ViewGraph, seed: int, max_draws: int = 100) -> np.ndarray:
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        t = project_to_bata_gauge(g, rng.standard_normal((g.n, 3)))
        if t is not None:
            return t
    raise ValueError("could not draw an initialization with a non-vanishing scale functional")


def run_irls_bcd(
    g: ViewGraph,
    t0: np.ndarray,
    *,
    d_update: Callable[[np.ndarray, np.ndarray], np.ndarray],
    linearize: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    constraints: GaugeConstraints,
    loss: LossKind,
    beta: float,
    irls_iter: int,
    bcd_iter: int,
    conv_tol: float,
    reg: float | None = None,
    inner_tol: float = 0.0,
    inner: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, list[float]]] | None = None,
) -> tuple[np.ndarray, SolveDiagnostics]:
    """Alternate exact ``d`` and ``t`` updates at fixed weights, then reweight.

    ``linearize(d)`` maps the scale variables to the per-edge multiplier
    ``a`` and right-hand side ``b`` of the residual ``a (t_j - t_i) - b``.
    Convergence is declared when the robust objective changes by less
    than ``conv_tol`` relative between outer iterations. With
    ``inner_tol > 0`` the inner passes stop early once a pass lowers the
    weighted objective by less than that relative amount. The KKT
    factorization is reused while the multipliers and weights are unchanged.

    ``inner(t, W)``, when given, replaces the block passes: it must return
    new locations and the weighted objective after each of its steps, and
    ``d`` is then set by ``d_update``.
    """
    t = np.array(t0, dtype=float)
    W = np.ones(g.m)

    def residuals(t, d):
        a, b = linearize(d)
        r = a[:, None] * g.baselines(t) - b
        return np.sqrt(np.sum(r * r, axis=1) + beta * g.rot_residual**2)

    d = d_update(g.baselines(t), g.v)
    f_prev = float(np.sum(loss.rho(residuals(t, d))))
    f_init = f_prev
    trace: list[float] = []
    inner_log: list[list[float]] = []
    floor = OBJECTIVE_FLOOR * max(g.m, 1)
    converged = f_prev <= floor
    report = None
    kkt = None
    outer = 0
    while outer < irls_iter and not converged:
        a, b = linearize(d)
        passes = [weighted_objective(EdgeRows(g.i, g.j, a, b, W), t)]
        if inner is not None:
            t, steps = inner(t, W)
            passes += steps
            d = d_update(g.baselines(t), g.v)
        for _ in range(bcd_iter if inner is None else 0):
            d = d_update(g.baselines(t), g.v)
            a, b = linearize(d)
            rows = EdgeRows(g.i, g.j, a, b, W)
            passes.append(weighted_objective(rows, t))
            if kkt is None or not kkt.matches(rows):
                kkt = KktSystem(rows, g.n, constraints, reg)
            t, report = kkt.solve(rows)
            passes.append(weighted_objective(rows, t))
            if inner_tol > 0 and passes[-3] - passes[-1] <= inner_tol * passes[-3]:
                break
        inner_log.append(passes)
        eps = residuals(t, d)
        f = float(np.sum(loss.rho(eps)))
        trace.append(f)
        outer += 1
        if f <= floor or f_prev == 0.0 or abs(f - f_prev) / f_prev < conv_tol:
            converged = True
        f_prev = f
        W = np.maximum(loss.weight(eps), WEIGHT_FLOOR)
    # weights above deliberately use the d of the last pass; the reported solution gets optimal d
    d = d_update(g.baselines(t), g.v)
    diag = SolveDiagnostics(
        objective_trace=trace,
        outer_iterations_used=outer,
        converged=converged,
        weights=W,
        d=np.asarray(d, dtype=float),
        final_objective=float(np.sum(loss.rho(residuals(t, d)))),
        inner_trace=inner_log,
        last_report=report,
        init_objective=f_init,
    )
    return t, diag


def _bata_linearize(v):
    def lin(d):
        return d, v

    return lin


def solve(g: ViewGraph, cfg: BataConfig | None = None) -> tuple[np.ndarray, SolveDiagnostics]:
    """Estimate camera locations satisfying ``sum t = 0`` and ``sum <t_j - t_i, v> = 1``."""
    cfg = cfg or BataConfig()
    require_connected(g)
    init_diag = None
    if cfg.init == "random":
        t0 = random_init(g, cfg.seed)
    elif cfg.init == "provided":
        t0 = project_to_bata_gauge(g, as_locations(cfg.init_locations, g.n))
        if t0 is None:
            raise ValueError("provided initialization has a vanishing scale functional")
    else:
        from .baselines import RevisedLudConfig, revised_lud_solve

        t0, init_diag = revised_lud_solve(
            g,
            RevisedLudConfig(
                irls_iter=cfg.convex_irls_iter,
                bcd_iter=cfg.convex_bcd_iter,
                beta=cfg.beta,
                conv_tol=cfg.conv_tol,
                seed=cfg.seed,
                reg=cfg.reg,
            ),
        )
    t, diag = run_irls_bcd(
        g,
        t0,
        d_update=update_d,
        linearize=_bata_linearize(g.v),
        constraints=build_bata_constraints(g),
        loss=cfg.loss,
        beta=cfg.beta,
        irls_iter=cfg.irls_iter,
        bcd_iter=cfg.bcd_iter,
        conv_tol=cfg.conv_tol,
        reg=cfg.reg,
    )
    diag.init_diagnostics = init_diag
    return t, diag
