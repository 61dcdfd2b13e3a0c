"""Robust M-estimators, their IRLS weights, and the rotation-assisted residual.

Each loss exposes ``rho`` (the penalty), ``weight`` (the IRLS weight
``phi``) and ``psi = rho'(e) / e``. ``psi`` is what enters a gradient;
``weight`` is the conventional, unit-at-zero normalization of it, so
``psi = scale * weight`` with a loss-specific constant ``scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check(eps):
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0) or np.any(np.isnan(eps)):
        raise ValueError("residual must be non-negative")
    return eps


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class SquaredL2:
    name = "l2"

    def rho(self, eps):
        e = _check(eps)
        return _out(e * e, eps)

    def weight(self, eps):
        e = _check(eps)
        return _out(np.ones_like(e), eps)

    @property
    def psi_scale(self) -> float:
        return 2.0


@dataclass(frozen=True)
class Huber:
    delta: float = 0.1
    name = "huber"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("Huber delta must be positive")

    def rho(self, eps):
        e = _check(eps)
        d = self.delta
        return _out(np.where(e <= d, 0.5 * e * e, d * (e - 0.5 * d)), eps)

    def weight(self, eps):
        e = _check(eps)
        with np.errstate(divide="ignore"):
            w = np.where(e <= self.delta, 1.0, self.delta / np.maximum(e, 1e-300))
        return _out(w, eps)

    @property
    def psi_scale(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Cauchy:
    alpha: float = 0.1
    name = "cauchy"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("Cauchy alpha must be positive")

    def rho(self, eps):
        e = _check(eps)
        return _out(np.log1p((e / self.alpha) ** 2), eps)

    def weight(self, eps):
        e = _check(eps)
        a2 = self.alpha**2
        return _out(a2 / (a2 + e * e), eps)

    @property
    def psi_scale(self) -> float:
        return 2.0 / self.alpha**2


@dataclass(frozen=True)
class L21Smooth:
    """Unsquared norm ``max(e, floor)``; IRLS weight ``1 / max(e, floor)``."""

    floor: float = 1e-6
    name = "l21"

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError("L21 floor must be positive")

    def rho(self, eps):
        e = _check(eps)
        return _out(np.maximum(e, self.floor), eps)

    def weight(self, eps):
        e = _check(eps)
        return _out(1.0 / np.maximum(e, self.floor), eps)

    @property
    def psi_scale(self) -> float:
        return 1.0


LossKind = SquaredL2 | Huber | Cauchy | L21Smooth


def make_loss(name: str, alpha: float = 0.1, delta: float = 0.1, floor: float = 1e-6) -> LossKind:
    name = name.lower()
    if name in ("l2", "squaredl2"):
        return SquaredL2()
    if name == "huber":
        return Huber(delta)
    if name == "cauchy":
        return Cauchy(alpha)
    if name in ("l21", "l21smooth"):
        return L21Smooth(floor)
    raise ValueError(f"unknown loss {name!r}")


def rho(loss: LossKind, eps):
    return loss.rho(eps)


def weight(loss: LossKind, eps):
    return loss.weight(eps)


def psi(loss: LossKind, eps):
    """``rho'(eps) / eps``, finite at zero."""
    return loss.psi_scale * np.asarray(loss.weight(eps))


def combined_residual(ti, tj, d, v, rot_residual=0.0, beta: float = 1.0):
    """``sqrt(||(tj - ti) d - v||^2 + beta * rot_residual^2)``; vectorized over edges."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    ti, tj, v = (np.asarray(x, dtype=float) for x in (ti, tj, v))
    d = np.asarray(d, dtype=float)
    r = (tj - ti) * d[..., None] - v
    sq = np.sum(r * r, axis=-1) + beta * np.asarray(rot_residual, dtype=float) ** 2
    out = np.sqrt(sq)
    return float(out) if out.ndim == 0 else out
