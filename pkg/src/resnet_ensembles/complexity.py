"""Asymptotic critical-point complexity of mixed spherical spin glasses.

For a mixture with weights ``eps_r`` on interaction orders ``r >= 2`` and
``sum(eps_r**2) == 1``::

    v1 = sum eps_r**2 * r
    v2 = sum eps_r**2 * r * (r - 1)
    alpha_sq = v2 + v1 - v1**2
    theta = 0.5 * log(v2 / v1) - (v2 - v1) / (v2 + v1)

``theta`` is the exponential growth rate (per dimension) of the mean number
of critical points of any fixed finite index.  It does not depend on the
index, so it is computed once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ensemble import Convention, EnsembleMixture, mixture_from_beta
from .errors import ParameterError

NORM_TOL = 1e-10


@dataclass(frozen=True)
class ComplexityStats:
    v1: float
    v2: float
    alpha_sq: float
    theta: float


def _as_weights(eps, orders=None):
    if isinstance(eps, EnsembleMixture):
        orders = eps.orders if orders is None else orders
        eps = eps.eps
    eps = np.asarray(eps, dtype=float)
    if orders is None:
        orders = np.arange(1, eps.size + 1)
    orders = np.asarray(orders)
    if orders.shape != eps.shape:
        raise ParameterError("eps and orders must have the same length")
    return eps, orders


def pure_theta(p: int) -> float:
    """Closed-form ``theta`` for a single interaction of order ``p``."""
    if p < 2:
        raise ParameterError("pure interactions need order p >= 2")
    return 0.5 * math.log(p - 1) - (1.0 - 2.0 / p)


def theta_from_moments(v1: float, v2: float) -> float:
    return 0.5 * math.log(v2 / v1) - (v2 - v1) / (v2 + v1)


def complexity_stats(eps, orders=None) -> ComplexityStats:
    """Moments and complexity of a normalized mixture supported on ``r >= 2``.

    ``eps`` is either an :class:`EnsembleMixture` or an array of weights; with
    a bare array, ``orders`` defaults to ``1..len(eps)`` (so ``eps[0]`` is the
    order-1 weight and must be zero).
    """
    eps, orders = _as_weights(eps, orders)
    if np.any(eps < 0) or not np.all(np.isfinite(eps)):
        raise ParameterError("mixture weights must be finite and non-negative")
    if np.any(eps[orders < 2] != 0):
        raise ParameterError("spin-glass mixtures start at order 2; truncate order-1 weight first")
    q = eps**2
    if abs(q.sum() - 1.0) > NORM_TOL:
        raise ParameterError(f"sum(eps**2) = {q.sum()!r}, expected 1")
    r = orders.astype(float)
    v1 = float(np.dot(q, r))
    v2 = float(np.dot(q, r * (r - 1.0)))
    # variance form is exact to rounding; the moment form loses digits when v1 is large
    mean = v1
    alpha_sq = float(np.dot(q, (r - mean) ** 2))
    return ComplexityStats(v1=v1, v2=v2, alpha_sq=alpha_sq, theta=theta_from_moments(v1, v2))


def truncate_mixture(mix: EnsembleMixture, warn: bool = True):
    """Drop the order-1 weight and renormalize; returns ``(eps, orders)`` on ``2..p``."""
    if mix.p < 2:
        raise ParameterError("a depth-1 mixture has no interactions of order >= 2")
    # renormalize in log space: eps_1 can dominate when beta is tiny
    le = mix.log_eps[1:]
    le = le - le.max()
    eps = np.exp(le)
    eps /= math.sqrt(float(np.sum(eps**2)))
    if warn and mix.eps[0] > 0:
        warnings.warn(
            f"dropping order-1 weight eps_1**2 = {mix.eps[0] ** 2:.3g} and renormalizing",
            stacklevel=2,
        )
    return eps, mix.orders[1:]


@dataclass(frozen=True)
class SweepRow:
    beta: float
    v1: float
    v2: float
    alpha_sq: float
    theta: float


def theta_beta_sweep(p: int, beta_grid, convention=Convention.SHIFTED) -> list[SweepRow]:
    """``theta`` of the truncated depth mixture at each ``beta`` in the grid."""
    betas = [float(b) for b in np.atleast_1d(beta_grid)]
    if not betas:
        raise ParameterError("beta grid is empty")
    if any(not b > 0 for b in betas):
        raise ParameterError("every beta must be positive")
    if p < 2:
        raise ParameterError("need p >= 2")
    rows = []
    for b in betas:
        eps, orders = truncate_mixture(mixture_from_beta(p, b, convention), warn=False)
        s = complexity_stats(eps, orders)
        rows.append(SweepRow(b, s.v1, s.v2, s.alpha_sq, s.theta))
    return rows


def _theta_and_grad(eps, r):
    q = eps * eps
    v1 = q @ r
    v2 = q @ (r * (r - 1.0))
    s = v1 + v2
    theta = 0.5 * math.log(v2 / v1) - (v2 - v1) / s
    d_v2 = 0.5 / v2 - 2.0 * v1 / s**2
    d_v1 = -0.5 / v1 + 2.0 * v2 / s**2
    grad = 2.0 * eps * (d_v1 * r + d_v2 * r * (r - 1.0))
    return theta, grad


@dataclass(frozen=True)
class SimplexOptimum:
    eps: np.ndarray
    orders: np.ndarray
    theta: float
    iterations: int
    converged: bool

    @property
    def off_mass(self) -> float:
        """``sum(eps_r**2)`` over orders other than the largest."""
        return float(np.sum(self.eps[:-1] ** 2))


def _ascend(eps, r, max_iter, grad_tol):
    eta = 1.0
    theta, grad = _theta_and_grad(eps, r)
    for it in range(1, max_iter + 1):
        tangent = grad - (grad @ eps) * eps
        if np.linalg.norm(tangent) < grad_tol:
            return eps, theta, it, True
        gain = float(tangent @ tangent)
        while True:
            trial = np.abs(eps + eta * tangent)
            trial /= np.linalg.norm(trial)
            t_theta, t_grad = _theta_and_grad(trial, r)
            # once the predicted gain is below float resolution of theta, trust the step
            if t_theta >= theta or eta * gain < 1e-13 * (1.0 + abs(theta)):
                break
            eta *= 0.5
        eps, theta, grad = trial, t_theta, t_grad
        eta = min(eta * 1.5, 1e6)
    return eps, theta, max_iter, False


def maximize_theta_on_simplex(
    p: int,
    k: int = 1,
    restarts: int = 10,
    seed: int = 0,
    max_iter: int = 100_000,
    grad_tol: float = 1e-10,
) -> SimplexOptimum:
    """Maximize ``theta`` over ``sum_{r=2}^p eps_r**2 = 1``, ``eps_r >= 0``.

    Projected gradient ascent on the unit sphere in ``eps`` (the square roots of
    the mixture probabilities) with backtracking, from ``restarts`` random
    starts.  ``k`` is the critical-point index; ``theta`` does not depend on it.
    """
    if int(p) != p or p < 2:
        raise ParameterError(f"p must be an integer >= 2, got {p!r}")
    if restarts < 1:
        raise ParameterError("need at least one restart")
    if k < 0:
        raise ParameterError("index k must be non-negative")
    orders = np.arange(2, p + 1)
    r = orders.astype(float)
    if p == 2:
        return SimplexOptimum(np.ones(1), orders, 0.0, 0, True)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        start = np.abs(rng.standard_normal(r.size)) + 1e-3
        start /= np.linalg.norm(start)
        eps, theta, its, ok = _ascend(start, r, max_iter, grad_tol)
        if best is None or theta > best.theta:
            best = SimplexOptimum(eps, orders, theta, its, ok)
    return best
