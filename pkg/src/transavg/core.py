"""View graphs, unit directions, rotations and gauge handling.

Locations are plain ``(n, 3)`` float arrays throughout the package; the
only structured type is :class:`ViewGraph`, which holds the edge list in
columnar numpy form so solvers can vectorize over edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

UNIT_TOL = 1e-9
ROT_TOL = 1e-9


class TransAvgError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(TransAvgError, ValueError):
    pass


class GraphError(TransAvgError, ValueError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class SingularSystemError(TransAvgError, ArithmeticError):
    pass


class Edge(NamedTuple):
    i: int
    j: int
    v: np.ndarray
    rot_residual: float = 0.0


def as_unit(v, tol: float = UNIT_TOL) -> np.ndarray:
    """Return ``v`` as a float 3-vector, checking that it has unit norm."""
    v = np.asarray(v, dtype=float).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise ValueError(f"direction {v} is not unit (norm {np.linalg.norm(v)!r})")
    return v


def as_rotation(R, tol: float = ROT_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation has non-finite entries")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValueError("rotation columns are not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")
    return R


def as_locations(t, n: int | None = None) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 2 or t.shape[1] != 3:
        raise ValueError(f"locations must have shape (n, 3), got {t.shape}")
    if n is not None and t.shape[0] != n:
        raise ValueError(f"expected {n} locations, got {t.shape[0]}")
    if not np.all(np.isfinite(t)):
        raise ValueError("locations contain non-finite values")
    return t


@dataclass(frozen=True, eq=False)
class ViewGraph:
    """Cameras ``0..n-1`` and edges carrying unit directions from i to j.

    ``rot_residual`` holds the Frobenius norm of the rotation mismatch
    ``R_i^T R_j - R_ij`` per edge; it is zero when rotations are unknown.
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    v: np.ndarray
    rot_residual: np.ndarray

    def __post_init__(self):
        n = int(self.n)
        if n < 2:
            raise GraphError(f"a view graph needs at least 2 cameras, got {n}")
        i = np.asarray(self.i, dtype=np.int64).reshape(-1)
        j = np.asarray(self.j, dtype=np.int64).reshape(-1)
        m = i.size
        v = np.asarray(self.v, dtype=float).reshape(m, 3)
        rr = np.asarray(self.rot_residual, dtype=float).reshape(m)
        if j.size != m:
            raise GraphError("edge endpoint arrays differ in length")
        if m and (i.min() < 0 or j.min() < 0 or i.max() >= n or j.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(i == j):
            raise GraphError(f"self-loop at edge {int(np.flatnonzero(i == j)[0])}")
        norms = np.linalg.norm(v, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise GraphError(f"edge {int(bad[0])} direction is not unit (norm {norms[bad[0]]!r})")
        if np.any(~np.isfinite(rr)) or np.any(rr < 0):
            raise GraphError("rotation residuals must be finite and non-negative")
        key = np.minimum(i, j) * n + np.maximum(i, j)
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            dup = int(uniq[counts > 1][0])
            raise GraphError(f"duplicate edge between cameras {dup // n} and {dup % n}")
        for arr in (i, j, v, rr):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "rot_residual", rr)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable) -> "ViewGraph":
        """Build from ``Edge`` tuples or ``(i, j, v[, rot_residual])`` sequences."""
        ii, jj, vv, rr = [], [], [], []
        for e in edges:
            e = Edge(*e)
            ii.append(int(e.i))
            jj.append(int(e.j))
            vv.append(np.asarray(e.v, dtype=float).reshape(3))
            rr.append(float(e.rot_residual))
        v = np.array(vv, dtype=float).reshape(len(vv), 3)
        return cls(n, np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64), v, np.array(rr))

    @property
    def m(self) -> int:
        return int(self.i.size)

    @property
    def edges(self) -> Iterator[Edge]:
        for k in range(self.m):
            yield Edge(int(self.i[k]), int(self.j[k]), self.v[k].copy(), float(self.rot_residual[k]))

    def with_rot_residual(self, rot_residual) -> "ViewGraph":
        return ViewGraph(self.n, self.i, self.j, self.v, np.asarray(rot_residual, dtype=float))

    def baselines(self, t: np.ndarray) -> np.ndarray:
        """Per-edge relative locations ``t_j - t_i``."""
        return t[self.j] - t[self.i]


def rotation_residual(Ri, Rj, Rij) -> float:
    """Frobenius norm of ``Ri^T Rj - Rij``."""
    Ri, Rj, Rij = as_rotation(Ri), as_rotation(Rj), as_rotation(Rij)
    return float(np.linalg.norm(Ri.T @ Rj - Rij, "fro"))


def world_direction(Ri, tij) -> np.ndarray:
    """Rotate a camera-frame direction ``tij`` into the world frame."""
    out = as_rotation(Ri) @ as_unit(tij)
    return out / np.linalg.norm(out)


def centralize_normalize(t) -> np.ndarray:
    """Shift to zero centroid and scale so that ``sum ||t_i||^2 == 1``."""
    t = as_locations(t)
    if t.shape[0] < 2:
        raise DegenerateInputError("need at least two locations")
    c = t - t.mean(axis=0)
    scale = np.sqrt(np.sum(c * c))
    if not scale > 1e-300:
        raise DegenerateInputError("all locations coincide; scale is undefined")
    return c / scale


def is_connected(g: ViewGraph) -> bool:
    if g.m == 0:
        return False
    adj = coo_matrix((np.ones(g.m), (g.i, g.j)), shape=(g.n, g.n))
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def component_labels(g: ViewGraph) -> np.ndarray:
    adj = coo_matrix((np.ones(g.m), (g.i, g.j)), shape=(g.n, g.n))
    return connected_components(adj, directed=False)[1]


def require_connected(g: ViewGraph) -> None:
    if not is_connected(g):
        raise DisconnectedGraphError(f"view graph with {g.n} cameras and {g.m} edges is not connected")
