"""Weighted, gauge-constrained sparse linear least squares over camera locations.

Every location update in this package is an instance of::

    minimize   sum_k w_k || a_k (t_j - t_i) - b_k ||^2  +  reg ||t||^2
    subject to C t = r

with ``t`` the stacked ``3n`` vector. The minimizer is obtained from the
symmetric KKT system ``[[H, C^T], [C, 0]] [t; mu] = [g; r]`` where
``H = A^T W A + reg I`` and ``g = A^T W b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .core import DisconnectedGraphError, SingularSystemError, ViewGraph

STATIONARITY_TOL = 1e-8
CONSTRAINT_TOL = 1e-10
DEFAULT_REG = 1e-12


@dataclass(frozen=True)
class EdgeRows:
    """Columnar batch of edge linearizations ``a (t_j - t_i) - b`` with weight ``w``."""

    i: np.ndarray
    j: np.ndarray
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.i).size
        for name in ("i", "j", "a", "w"):
            if np.asarray(getattr(self, name)).reshape(-1).size != m:
                raise ValueError(f"EdgeRows.{name} has the wrong length")
        if np.asarray(self.b).reshape(-1, 3).shape[0] != m:
            raise ValueError("EdgeRows.b must be (m, 3)")
        if np.any(np.asarray(self.w) <= 0):
            raise ValueError("edge weights must be positive")
        if np.any(np.asarray(self.i) == np.asarray(self.j)):
            raise ValueError("edge endpoints must differ")

    @property
    def m(self) -> int:
        return int(np.asarray(self.i).size)


@dataclass(frozen=True)
class GaugeConstraints:
    """Dense ``(m, 3n)`` constraint rows ``C`` with right-hand side ``r``."""

    C: np.ndarray
    r: np.ndarray

    @property
    def count(self) -> int:
        return int(self.C.shape[0])


@dataclass(frozen=True)
class LlsReport:
    stationarity_norm: float
    constraint_violation: float
    factorization_kind: str


def build_centroid_constraints(n: int) -> GaugeConstraints:
    if n < 2:
        raise ValueError("need at least two cameras")
    C = np.zeros((3, 3 * n))
    for c in range(3):
        C[c, c::3] = 1.0
    return GaugeConstraints(C, np.zeros(3))


def scale_row(g: ViewGraph) -> np.ndarray:
    """Coefficients of ``sum_ij <t_j - t_i, v_ij>`` over the stacked unknowns."""
    row = np.zeros((g.n, 3))
    np.add.at(row, g.j, g.v)
    np.subtract.at(row, g.i, g.v)
    return row.reshape(-1)


def build_bata_constraints(g: ViewGraph) -> GaugeConstraints:
    cen = build_centroid_constraints(g.n)
    C = np.vstack([cen.C, scale_row(g)])
    return GaugeConstraints(C, np.array([0.0, 0.0, 0.0, 1.0]))


def _active(rows: EdgeRows):
    i = np.asarray(rows.i, dtype=np.int64)
    j = np.asarray(rows.j, dtype=np.int64)
    a = np.asarray(rows.a, dtype=float)
    keep = a != 0
    return i[keep], j[keep], a[keep], keep


def _normal_matrix(rows: EdgeRows, n: int):
    """``A^T W A`` as ``L (x) I3`` with Laplacian edge coupling ``w a^2``."""
    i, j, a, keep = _active(rows)
    c = np.asarray(rows.w, dtype=float)[keep] * a * a
    diag = np.bincount(i, c, minlength=n) + np.bincount(j, c, minlength=n)
    idx = np.arange(n)
    lap = sp.coo_matrix(
        (np.concatenate([diag, -c, -c]), (np.concatenate([idx, i, j]), np.concatenate([idx, j, i]))),
        shape=(n, n),
    ).tocsr()
    return sp.kron(lap, sp.identity(3, format="csr"), format="csr"), i, j


def _normal_rhs(rows: EdgeRows, n: int) -> np.ndarray:
    """``A^T W b``: ``+w a b`` accumulates at ``t_j`` and ``-w a b`` at ``t_i``."""
    i, j, a, keep = _active(rows)
    wb = (np.asarray(rows.w, dtype=float)[keep] * a)[:, None] * np.asarray(rows.b, dtype=float).reshape(-1, 3)[keep]
    g = np.empty((n, 3))
    for c3 in range(3):
        g[:, c3] = np.bincount(j, wb[:, c3], minlength=n) - np.bincount(i, wb[:, c3], minlength=n)
    return g.reshape(-1)


def default_reg(H) -> float:
    mean_diag = float(H.diagonal().sum()) / H.shape[0]
    return DEFAULT_REG * mean_diag if mean_diag > 0 else DEFAULT_REG


def weighted_objective(rows: EdgeRows, t: np.ndarray) -> float:
    """``sum w ||a (t_j - t_i) - b||^2`` including rows with ``a == 0``."""
    r = np.asarray(rows.a)[:, None] * (t[rows.j] - t[rows.i]) - np.asarray(rows.b).reshape(-1, 3)
    return float(np.sum(np.asarray(rows.w) * np.sum(r * r, axis=1)))


class KktSystem:
    """Factorized KKT matrix for a fixed set of multipliers ``a`` and weights ``w``.

    Only ``g = A^T W b`` depends on the right-hand sides, so a system can be
    re-solved for new ``b`` at the cost of two triangular solves.
    """

    def __init__(self, rows: EdgeRows, n: int, constraints: GaugeConstraints, reg: float | None = None):
        H, ei, ej = _normal_matrix(rows, n)
        if constraints.count == 3 and ei.size:
            # centroid-only gauge: the active edges must span every camera
            adj = sp.coo_matrix((np.ones(ei.size), (ei, ej)), shape=(n, n))
            if connected_components(adj, directed=False)[0] != 1:
                raise DisconnectedGraphError("edges with non-zero multiplier do not connect all cameras")
        if reg is None:
            reg = default_reg(H)
        if reg < 0:
            raise ValueError("reg must be non-negative")
        self.n = n
        self.reg = reg
        self.a = np.array(rows.a, dtype=float)
        self.w = np.array(rows.w, dtype=float)
        dim = 3 * n
        self.C = np.asarray(constraints.C, dtype=float)
        self.r = np.asarray(constraints.r, dtype=float)
        self.H = H + reg * sp.identity(dim, format="csr") if reg > 0 else H
        Cs = sp.csr_matrix(self.C)
        self.K = sp.bmat([[self.H, Cs.T], [Cs, None]], format="csc")
        try:
            self._lu = splu(self.K)
        except RuntimeError as exc:
            raise SingularSystemError(f"KKT system is singular: {exc}") from None

    def matches(self, rows: EdgeRows) -> bool:
        return np.array_equal(self.a, rows.a) and np.array_equal(self.w, rows.w)

    def solve(self, rows: EdgeRows) -> tuple[np.ndarray, LlsReport]:
        if not self.matches(rows):
            raise ValueError("rows do not match the factorized multipliers and weights")
        g = _normal_rhs(rows, self.n)
        dim = 3 * self.n
        rhs = np.concatenate([g, self.r])
        sol = self._lu.solve(rhs)
        # one step of iterative refinement keeps the certificate well inside tolerance
        sol = sol + self._lu.solve(rhs - self.K @ sol)
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError("KKT solve produced non-finite values")
        t, mu = sol[:dim], sol[dim:]
        stat = float(np.linalg.norm(self.H @ t + self.C.T @ mu - g))
        viol = float(np.max(np.abs(self.C @ t - self.r))) if self.C.size else 0.0
        report = LlsReport(stat, viol, "superlu-kkt")
        if stat > STATIONARITY_TOL * (1.0 + np.linalg.norm(rhs)) or viol > CONSTRAINT_TOL:
            raise SingularSystemError(
                f"KKT certificate failed (stationarity {stat:.3e}, violation {viol:.3e}); system is rank deficient"
            )
        return t.reshape(self.n, 3), report


def solve_constrained(
    rows: EdgeRows,
    n: int,
    constraints: GaugeConstraints,
    reg: float | None = None,
) -> tuple[np.ndarray, LlsReport]:
    """Minimize the weighted edge residuals subject to the gauge constraints.

    ``reg=None`` picks a tiny Tikhonov term scaled to the mean diagonal of
    the normal matrix. The returned report certifies the KKT conditions;
    a solve that cannot meet them raises :class:`SingularSystemError`.
    """
    return KktSystem(rows, n, constraints, reg).solve(rows)
