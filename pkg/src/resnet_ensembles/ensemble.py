"""Depth mixture of a residual network's virtual ensemble.

A ResNet with ``p`` layers and a single-layer skip around every layer after
the first unravels into paths of length ``r = 1..p``.  After reindexing over
``Lambda`` unique weights, the loss becomes a mixture of spin-glass terms of
order ``r`` weighted by

    eps_r = binom(p - 1, r - 1) * beta**r / z,   beta = rho * n * C / sqrt(Lambda)

with ``z`` chosen so that ``sum(eps_r**2) == 1``.  Everything here is computed
in log space; ``eps_r`` for ``p`` in the thousands spans hundreds of orders of
magnitude.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError, ParameterError


class Convention(str, enum.Enum):
    """Which binomial weights the mixture uses.

    ``SHIFTED`` is ``binom(p-1, r-1)``, derived from the path count.
    ``PLAIN`` is ``binom(p, r)``, the simplified form used in asymptotic
    arguments.
    """

    SHIFTED = "shifted"
    PLAIN = "plain"


@dataclass(frozen=True)
class NetworkShape:
    """Architecture and modeling constants of the unraveled ResNet.

    ``Lambda`` is the number of unique weights, ``rho`` the probability that a
    ReLU gate is open and ``C`` the global weight scale.
    """

    p: int
    n: int = 1
    d: int = 1
    Lambda: int = 1
    rho: float = 0.5
    C: float = 1.0

    def __post_init__(self):
        for name in ("p", "n", "d", "Lambda"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho!r}")
        if not self.C > 0:
            raise ParameterError(f"C must be positive, got {self.C!r}")
        if self.Lambda > self.n * self.n * self.p:
            raise ParameterError("Lambda cannot exceed the number of weights n*n*p")
        if not self.beta > 0:
            raise ParameterError("beta = rho*n*C/sqrt(Lambda) must be positive")

    @property
    def beta(self) -> float:
        return self.rho * self.n * self.C / math.sqrt(self.Lambda)

    def with_scale(self, C: float) -> "NetworkShape":
        return replace(self, C=C)

    def scale_for_beta(self, beta: float) -> float:
        """Invert ``beta = rho*n*C/sqrt(Lambda)`` for ``C``."""
        if self.rho == 0:
            raise ParameterError("rho = 0 makes beta independent of C")
        return beta * math.sqrt(self.Lambda) / (self.rho * self.n)


def log_binom(n, k):
    """``log(binom(n, k))`` through log-gamma; works elementwise on arrays."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_mixture_terms(p: int, beta: float, convention=Convention.SHIFTED) -> np.ndarray:
    """Unnormalized ``log(binom * beta**r)`` for ``r = 1..p``."""
    r = np.arange(1, p + 1, dtype=float)
    if Convention(convention) is Convention.SHIFTED:
        lb = log_binom(p - 1, r - 1)
    else:
        lb = log_binom(p, r)
    return lb + r * math.log(beta)


@dataclass(frozen=True)
class EnsembleMixture:
    """Normalized weights ``eps[r-1]`` for path lengths ``r = 1..p``."""

    p: int
    beta: float
    eps: np.ndarray = field(repr=False)
    log_eps: np.ndarray = field(repr=False)
    log_z: float
    convention: Convention = Convention.SHIFTED

    @property
    def orders(self) -> np.ndarray:
        return np.arange(1, self.p + 1)

    @property
    def eps_squared(self) -> np.ndarray:
        return np.exp(2.0 * self.log_eps)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "beta": self.beta,
            "convention": self.convention.value,
            "eps": [float(e) for e in self.eps],
            "log_z": float(self.log_z),
        }

    def csv_rows(self):
        """Rows of ``(r, eps, eps_squared, log_eps)``."""
        sq = self.eps_squared
        for r, e, e2, le in zip(self.orders, self.eps, sq, self.log_eps):
            yield int(r), float(e), float(e2), float(le)


def mixture_from_beta(p: int, beta: float, convention=Convention.SHIFTED) -> EnsembleMixture:
    """Build the normalized depth mixture for depth ``p`` and aggregate scale ``beta``."""
    if int(p) != p or p < 1:
        raise ParameterError(f"p must be a positive integer, got {p!r}")
    if not (beta > 0 and math.isfinite(beta)):
        raise ParameterError(f"beta must be positive and finite, got {beta!r}")
    convention = Convention(convention)
    logs = log_mixture_terms(int(p), float(beta), convention)
    # shift before normalizing so log_eps near the peak is O(1) and exact to an ulp
    top = float(logs.max())
    shifted = logs - top
    log_z_rel = 0.5 * float(logsumexp(2.0 * shifted))
    log_eps = shifted - log_z_rel
    log_z = top + log_z_rel
    return EnsembleMixture(
        p=int(p),
        beta=float(beta),
        eps=np.exp(log_eps),
        log_eps=log_eps,
        log_z=log_z,
        convention=convention,
    )


def build_mixture(shape: NetworkShape, convention=Convention.SHIFTED) -> EnsembleMixture:
    return mixture_from_beta(shape.p, shape.beta, convention)


def argmax_depth(mix: EnsembleMixture) -> int:
    """Path length carrying the largest weight.

    Ties (which occur when ``beta*p/(1+beta)`` is an integer) resolve to the
    smaller ``r``.  Values within a few ulps of the maximum count as ties so the
    answer does not depend on log-gamma rounding.
    """
    le = mix.log_eps
    top = le.max()
    tol = 1e-13 * (1.0 + abs(mix.log_z))
    return int(np.flatnonzero(le >= top - tol)[0]) + 1


def band_mass(mix: EnsembleMixture, alpha1: float, alpha2: float) -> float:
    """Sum of ``eps_r**2`` over ``r`` in ``[ceil(alpha1*p), floor(alpha2*p)]``."""
    if not 0.0 <= alpha1 < alpha2 <= 1.0:
        raise ParameterError(f"need 0 <= alpha1 < alpha2 <= 1, got ({alpha1}, {alpha2})")
    # guard against 0.23*2000 == 460.00000000000006 style rounding
    lo = max(1, math.ceil(alpha1 * mix.p - 1e-9))
    hi = min(mix.p, math.floor(alpha2 * mix.p + 1e-9))
    if hi < lo:
        return 0.0
    return float(np.clip(mix.eps_squared[lo - 1 : hi].sum(), 0.0, 1.0))


def solve_beta_for_depth(p: int, k: int, convention=Convention.SHIFTED, max_iter: int = 400):
    """Find ``beta`` whose mixture peaks at path length ``k``.

    The peak location is nondecreasing in ``beta``, so bisection on
    ``log(beta)`` converges.  Returns ``(beta, (beta_lo, beta_hi))`` where the
    bracket holds the last points with peak below and above ``k``.
    """
    if int(k) != k or not 1 <= k <= p:
        raise ParameterError(f"k must be an integer in [1, {p}], got {k!r}")

    def peak(b):
        return argmax_depth(mixture_from_beta(p, b, convention))

    lo = hi = 1.0
    while peak(lo) > k:
        lo /= 4.0
    while peak(hi) < k:
        hi *= 4.0
    for candidate in (lo, hi):
        if peak(candidate) == k:
            return candidate, (lo, hi)
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        a = peak(mid)
        if a == k:
            return mid, (lo, hi)
        if a < k:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not isolate argmax = {k} for p = {p}")


def solve_scale_for_depth(shape: NetworkShape, k: int, convention=Convention.SHIFTED) -> float:
    """Global weight scale ``C`` that puts the mixture's peak at depth ``k``."""
    beta, _ = solve_beta_for_depth(shape.p, k, convention)
    return shape.scale_for_beta(beta)


def legendre_log(p: int, x: float) -> float:
    """``log(P_p(x))`` for ``x >= 1`` by the three-term recurrence.

    The recurrence ``(j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}`` is stable in the
    forward direction for ``x > 1``; the iterates are rescaled to avoid
    overflow.
    """
    if x < 1.0:
        raise DomainError("legendre_log needs x >= 1")
    if p == 0:
        return 0.0
    prev, cur, log_scale = 1.0, x, 0.0
    for j in range(1, p):
        prev, cur = cur, ((2 * j + 1) * x * cur - j * prev) / (j + 1)
        if cur > 1e150:
            prev /= cur
            log_scale += math.log(cur)
            cur = 1.0
    return log_scale + math.log(cur)


def legendre(p: int, x):
    """Plain Legendre polynomial ``P_p(x)`` by recurrence (no rescaling)."""
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if p == 0:
        return prev
    for j in range(1, p):
        prev, cur = cur, ((2 * j + 1) * x * cur - j * prev) / (j + 1)
    return cur


def legendre_normalization(p: int, beta: float) -> float:
    """``log(sum_{r=0}^p binom(p, r)**2 beta**(2r))`` via the Legendre closed form.

    ``(1 - beta**2)**p * P_p((1 + beta**2) / (1 - beta**2))``.  The identity
    includes the ``r = 0`` term; the normalization of the ``PLAIN`` mixture is
    this value minus one.
    """
    if int(p) != p or p < 0:
        raise ParameterError(f"p must be a non-negative integer, got {p!r}")
    if not 0.0 < beta < 1.0:
        raise DomainError(f"the closed form needs 0 < beta < 1, got {beta!r}")
    b2 = beta * beta
    x = (1.0 + b2) / (1.0 - b2)
    return p * math.log1p(-b2) + legendre_log(int(p), x)


def log_binomial_square_sum(p: int, beta: float) -> float:
    """Direct log-space sum ``log(sum_{r=0}^p binom(p, r)**2 beta**(2r))``."""
    r = np.arange(0, p + 1, dtype=float)
    return float(logsumexp(2.0 * log_binom(p, r) + 2.0 * r * math.log(beta)))


@dataclass(frozen=True)
class PathCensus:
    """Exact count of length-``r`` paths ``gamma`` and mass ``psi = d*gamma``."""

    r: int
    gamma: int
    psi: int

    @property
    def log_gamma(self) -> float:
        return math.log(self.gamma)

    @property
    def log_psi(self) -> float:
        return math.log(self.psi)


def path_census(shape: NetworkShape, r: int) -> PathCensus:
    """Paths of length ``r``: ``binom(p-1, r-1) * n**r`` from a fixed input."""
    if int(r) != r or not 1 <= r <= shape.p:
        raise ParameterError(f"r must be an integer in [1, {shape.p}], got {r!r}")
    gamma = math.comb(shape.p - 1, r - 1) * shape.n**r
    return PathCensus(r=int(r), gamma=gamma, psi=shape.d * gamma)


def paths_per_configuration(shape: NetworkShape, r: int) -> int:
    """Multiplicity ``psi_r / Lambda**r`` of each unique weight configuration.

    Only defined when ``Lambda`` divides ``n``, which makes it an integer.
    """
    if shape.n % shape.Lambda:
        raise ParameterError("reindexing over unique weights needs n % Lambda == 0")
    census = path_census(shape, r)
    q, rem = divmod(census.psi, shape.Lambda**r)
    assert rem == 0
    return q


@dataclass(frozen=True)
class XiVarianceBounds:
    """Bounds on ``E[xi**2] = ||beta||_2**2`` over compositions ``||beta||_1 = total``.

    ``lower``/``upper`` are the continuous bounds ``total**2/d`` and
    ``total**2``; the partitions are the integer witnesses (balanced and delta).
    """

    d: int
    total: int
    lower: Fraction
    upper: int
    min_partition: tuple
    max_partition: tuple

    @property
    def min_value(self) -> int:
        return sum(b * b for b in self.min_partition)

    @property
    def max_value(self) -> int:
        return sum(b * b for b in self.max_partition)

    @property
    def lower_attained(self) -> bool:
        return self.min_value == self.lower


def xi_variance_bounds(d: int, total) -> XiVarianceBounds:
    if int(d) != d or d < 1:
        raise ParameterError(f"d must be a positive integer, got {d!r}")
    if isinstance(total, bool) or int(total) != total or total < 1:
        raise ParameterError(f"total must be a positive integer, got {total!r}")
    d, total = int(d), int(total)
    q, rem = divmod(total, d)
    balanced = tuple([q + 1] * rem + [q] * (d - rem))
    delta = (total,) + (0,) * (d - 1)
    return XiVarianceBounds(
        d=d,
        total=total,
        lower=Fraction(total * total, d),
        upper=total * total,
        min_partition=balanced,
        max_partition=delta,
    )
