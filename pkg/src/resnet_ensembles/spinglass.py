"""Finite-dimensional mixed spherical spin glasses.

The Hamiltonian on the sphere ``sum(w**2) == Lambda`` is

    H(w) = sum_r eps_r / Lambda**((r-1)/2) * sum_{i1..ir} J^r_{i1..ir} w_i1 ... w_ir

with i.i.d. standard Gaussian couplings.  Couplings are stored exactly as
drawn (not symmetrized); derivatives use the symmetrized tensor, which has
the same multilinear form.

Critical points of ``H`` restricted to the sphere solve ``grad H = lam * w``.
They are found by multistart Newton iteration on that Lagrange system and
classified by the number of negative eigenvalues of the tangent-space
Hessian ``P (hess H - lam I) P``.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, ParameterError, SizeError

MAX_COUPLING_ENTRIES = 10**7
SPHERE_TOL = 1e-10
GRAD_TOL = 1e-8
DEDUP_TOL = 1e-6
NEWTON_MAX_ITER = 200


def _symmetrize(t: np.ndarray) -> np.ndarray:
    r = t.ndim
    perms = list(itertools.permutations(range(r)))
    out = np.zeros_like(t)
    for perm in perms:
        out += np.transpose(t, perm)
    return out / len(perms)


def _contract(t: np.ndarray, W: np.ndarray, times: int) -> np.ndarray:
    """Contract the last ``times`` axes of symmetric ``t`` with each row of ``W``.

    ``W`` has shape ``(B, Lambda)``; the result has shape ``(B,) + t.shape[times:]``.
    """
    out = np.broadcast_to(t, (W.shape[0],) + t.shape)
    for _ in range(times):
        out = np.einsum("b...i,bi->b...", out, W)
    return out


@dataclass
class SpinGlassModel:
    """Couplings ``J^r`` for each order in ``orders`` with mixture weights ``eps``."""

    Lambda: int
    orders: tuple
    eps: np.ndarray
    couplings: dict = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.orders = tuple(int(r) for r in self.orders)
        if len(self.orders) != self.eps.size:
            raise ParameterError("one weight per interaction order is required")
        for r in self.orders:
            t = self.couplings[r]
            if t.shape != (self.Lambda,) * r:
                raise ParameterError(f"coupling tensor of order {r} has shape {t.shape}")

    @cached_property
    def _symmetric(self) -> dict:
        return {r: _symmetrize(self.couplings[r]) for r in self.orders}

    @property
    def prefactors(self) -> np.ndarray:
        r = np.asarray(self.orders, dtype=float)
        return self.eps / self.Lambda ** ((r - 1.0) / 2.0)

    @property
    def is_degenerate(self) -> bool:
        """True when ``H`` vanishes identically, making every point critical."""
        return all(
            c == 0 or not np.any(self.couplings[r]) for r, c in zip(self.orders, self.prefactors)
        )

    def energy_batch(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        e = np.zeros(W.shape[0])
        for r, c in zip(self.orders, self.prefactors):
            e += c * _contract(self.couplings[r], W, r)
        return e

    def derivatives_batch(self, W: np.ndarray):
        """Energy, gradients ``(B, Lambda)`` and Hessians ``(B, Lambda, Lambda)``."""
        W = np.atleast_2d(W)
        B, L = W.shape
        e = np.zeros(B)
        g = np.zeros((B, L))
        h = np.zeros((B, L, L))
        for r, c in zip(self.orders, self.prefactors):
            s = self._symmetric[r]
            if r >= 2:
                m2 = _contract(s, W, r - 2)
            else:
                m2 = None
            if m2 is not None:
                m1 = np.einsum("bij,bj->bi", m2, W)
                h += c * r * (r - 1) * m2
            else:
                m1 = np.broadcast_to(s, (B, L))
            m0 = np.einsum("bi,bi->b", m1, W)
            g += c * r * m1
            e += c * m0
        return e, g, h

    def to_dict(self) -> dict:
        return {
            "Lambda": self.Lambda,
            "orders": list(self.orders),
            "eps": [float(x) for x in self.eps],
            "seed": self.seed,
            "couplings": {
                str(r): {"shape": list(self.couplings[r].shape), "data": self.couplings[r].ravel().tolist()}
                for r in self.orders
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpinGlassModel":
        couplings = {
            int(r): np.asarray(v["data"], dtype=float).reshape(v["shape"]) for r, v in d["couplings"].items()
        }
        return cls(d["Lambda"], tuple(d["orders"]), np.asarray(d["eps"]), couplings, d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SpinGlassModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_memory(Lambda: int, orders) -> int:
    total = sum(Lambda**r for r in orders)
    if total > MAX_COUPLING_ENTRIES:
        raise SizeError(f"{total} coupling entries exceed the guard of {MAX_COUPLING_ENTRIES}")
    return total


def sample_model(Lambda: int, eps, seed: int, orders=None) -> SpinGlassModel:
    """Draw i.i.d. N(0, 1) couplings for every order carrying weight.

    ``eps`` is either a mapping ``{order: weight}`` or an array paired with
    ``orders``.  Weights must satisfy ``sum(eps**2) == 1``.
    """
    if int(Lambda) != Lambda or Lambda < 1:
        raise ParameterError(f"Lambda must be a positive integer, got {Lambda!r}")
    if isinstance(eps, dict):
        orders, eps = zip(*sorted(eps.items()))
    if orders is None:
        raise ParameterError("orders are required when eps is an array")
    orders = tuple(int(r) for r in orders)
    eps = np.asarray(eps, dtype=float)
    if any(r < 1 for r in orders) or len(set(orders)) != len(orders):
        raise ParameterError("orders must be distinct positive integers")
    if abs(float(np.sum(eps**2)) - 1.0) > 1e-10:
        raise ParameterError("mixture weights must satisfy sum(eps**2) = 1")
    check_memory(Lambda, orders)
    rng = np.random.default_rng(seed)
    couplings = {r: rng.standard_normal((Lambda,) * r) for r in orders}
    return SpinGlassModel(int(Lambda), orders, eps, couplings, seed)


def _check_sphere(w: np.ndarray, Lambda: int):
    if w.shape[-1] != Lambda:
        raise DomainError(f"expected a vector of length {Lambda}")
    dev = np.abs(np.sum(w * w, axis=-1) - Lambda)
    if np.any(dev > SPHERE_TOL * Lambda):
        raise DomainError("point is off the sphere sum(w**2) = Lambda")


def evaluate(model: SpinGlassModel, point):
    """Energy ``H(w)``, Euclidean gradient and Hessian at a point on the sphere."""
    w = np.asarray(point, dtype=float)
    _check_sphere(w, model.Lambda)
    e, g, h = model.derivatives_batch(w[None, :])
    return float(e[0]), g[0], h[0]


def random_sphere_points(Lambda: int, count: int, rng) -> np.ndarray:
    x = rng.standard_normal((count, Lambda))
    return x * (math.sqrt(Lambda) / np.linalg.norm(x, axis=1, keepdims=True))


@dataclass(frozen=True)
class CriticalPointRecord:
    point: np.ndarray
    energy: float
    lagrange_multiplier: float
    index: int
    grad_norm: float
    multiplicity: int = 1


@dataclass
class CriticalPointCensus:
    """Deduplicated critical points plus search diagnostics.

    Counts are lower bounds on the true number of critical points.
    """

    Lambda: int
    records: list
    starts: int
    converged: int
    failed: int
    degenerate: bool = False

    def histogram(self, energy_ceiling: float = math.inf) -> dict:
        hist: dict[int, int] = {}
        for rec in self.records:
            if rec.energy <= energy_ceiling:
                hist[rec.index] = hist.get(rec.index, 0) + 1
        return dict(sorted(hist.items()))


def tangent_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the hyperplane orthogonal to ``w``."""
    u = w / np.linalg.norm(w)
    # complete u to an orthonormal basis; the trailing columns span the tangent space
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(w.size)]))
    return q[:, 1 : w.size]


def tangent_index(hess: np.ndarray, lam: float, w: np.ndarray, tol: float = 1e-9):
    """Index of the Lagrange-shifted Hessian restricted to the tangent space.

    Returns ``(index, eigenvalues)``.
    """
    b = tangent_basis(w)
    shifted = hess - lam * np.eye(w.size)
    ev = np.linalg.eigvalsh(b.T @ shifted @ b)
    return int(np.sum(ev < -tol * max(1.0, np.abs(ev).max()))), ev


def _newton(model: SpinGlassModel, W: np.ndarray):
    """Batched Newton iteration on ``grad H - lam w = 0``, ``|w|**2 = Lambda``."""
    B, L = W.shape
    active = np.ones(B, dtype=bool)
    done = np.zeros(B, dtype=bool)
    target = math.sqrt(L)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        w = W[idx]
        _, g, h = model.derivatives_batch(w)
        lam = np.einsum("bi,bi->b", g, w) / L
        res = g - lam[:, None] * w
        rnorm = np.linalg.norm(res, axis=1)
        finished = rnorm < 1e-12
        done[idx[finished]] = True
        active[idx[finished]] = False
        keep = ~finished
        if not np.any(keep):
            break
        idx, w, g, h, lam, res = idx[keep], w[keep], g[keep], h[keep], lam[keep], res[keep]
        n = idx.size
        jac = np.zeros((n, L + 1, L + 1))
        jac[:, :L, :L] = h - lam[:, None, None] * np.eye(L)
        jac[:, :L, L] = -w
        jac[:, L, :L] = w
        rhs = np.concatenate([-res, np.zeros((n, 1))], axis=1)
        try:
            step = np.linalg.solve(jac, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(j, r, rcond=None)[0] for j, r in zip(jac, rhs)])
        w_new = w + step[:, :L]
        norms = np.linalg.norm(w_new, axis=1, keepdims=True)
        bad = ~np.isfinite(norms[:, 0]) | (norms[:, 0] == 0)
        w_new[~bad] *= target / norms[~bad]
        active[idx[bad]] = False
        W[idx[~bad]] = w_new[~bad]
    # Newton stalls at ~1e-13 residuals for larger models; accept at the census tolerance
    _, g, _ = model.derivatives_batch(W)
    lam = np.einsum("bi,bi->b", g, W) / L
    rnorm = np.linalg.norm(g - lam[:, None] * W, axis=1)
    ok = np.isfinite(rnorm) & (rnorm < GRAD_TOL)
    return W, ok


def find_critical_points(model: SpinGlassModel, restarts: int, seed: int, jobs: int = 1, chunk: int = 1000):
    """Multistart Newton census of critical points on the sphere.

    Starts are drawn uniformly on the sphere from ``seed``; converged points
    closer than ``DEDUP_TOL`` in angle are merged (``w`` and ``-w`` are kept
    as distinct points).  Non-converging starts are counted in ``failed``.
    """
    if restarts < 0:
        raise ParameterError("restarts must be non-negative")
    L = model.Lambda
    if model.is_degenerate:
        return CriticalPointCensus(L, [], restarts, 0, 0, degenerate=True)
    rng = np.random.default_rng(seed)
    starts = random_sphere_points(L, restarts, rng)
    blocks = [starts[i : i + chunk].copy() for i in range(0, restarts, chunk)]
    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(lambda b: _newton(model, b), blocks))
    else:
        results = [_newton(model, b) for b in blocks]
    points = [W[ok] for W, ok in results]
    converged = int(sum(p.shape[0] for p in points))
    found = np.concatenate(points) if points else np.zeros((0, L))
    return CriticalPointCensus(
        L, classify_points(model, found), restarts, converged, restarts - converged
    )


def dedupe_points(points: np.ndarray, tol: float = DEDUP_TOL):
    """Cluster unit directions closer than ``tol``; returns ``(representatives, counts)``."""
    reps: list[np.ndarray] = []
    counts: list[int] = []
    if points.shape[0] == 0:
        return np.zeros((0, points.shape[1] if points.ndim == 2 else 0)), []
    units = points / np.linalg.norm(points, axis=1, keepdims=True)
    # sort so the clustering (and therefore the output) does not depend on start order
    order = np.lexsort(np.round(units, 6).T[::-1])
    rep_units = np.zeros((0, units.shape[1]))
    for i in order:
        u = units[i]
        if rep_units.shape[0]:
            cos = np.clip(rep_units @ u, -1.0, 1.0)
            j = int(np.argmax(cos))
            if math.acos(cos[j]) < tol or np.linalg.norm(rep_units[j] - u) < tol:
                counts[j] += 1
                continue
        reps.append(points[i])
        counts.append(1)
        rep_units = np.vstack([rep_units, u])
    return np.array(reps), counts


def classify_points(model: SpinGlassModel, points: np.ndarray) -> list:
    reps, counts = dedupe_points(points)
    L = model.Lambda
    records = []
    if len(counts) == 0:
        return records
    e, g, h = model.derivatives_batch(reps)
    for w, en, gr, he, mult in zip(reps, e, g, h, counts):
        lam = float(gr @ w) / L
        idx, _ = tangent_index(he, lam, w)
        records.append(
            CriticalPointRecord(
                point=w,
                energy=float(en) / L,
                lagrange_multiplier=lam,
                index=idx,
                grad_norm=float(np.linalg.norm(gr - lam * w)),
                multiplicity=mult,
            )
        )
    records.sort(key=lambda rec: (rec.energy, rec.index, tuple(np.round(rec.point, 9))))
    return records


def empirical_census(model: SpinGlassModel, restarts: int, seed: int, energy_ceiling: float = math.inf, jobs: int = 1):
    """Histogram ``{index: count}`` of critical points with ``H/Lambda <= energy_ceiling``."""
    census = find_critical_points(model, restarts, seed, jobs=jobs)
    return census.histogram(energy_ceiling)


def quadratic_oracle(model: SpinGlassModel):
    """Closed-form critical points of a pure order-2 model.

    With ``S = (J + J^T)/2`` the critical points are ``+-sqrt(Lambda) v_k`` for
    the eigenvectors ``v_k`` of ``S``; the one for the ``k``-th smallest
    eigenvalue has index ``k`` and normalized energy ``s_k / sqrt(Lambda)``.
    Returns a list of ``(energy, index, point)`` sorted by energy.
    """
    if model.orders != (2,):
        raise ParameterError("the eigendecomposition oracle only covers pure order-2 models")
    L = model.Lambda
    J = model.couplings[2]
    s, v = np.linalg.eigh(0.5 * (J + J.T))
    c = model.eps[0] / math.sqrt(L)
    out = []
    for k in range(L):
        for sign in (1.0, -1.0):
            out.append((c * s[k], k, sign * math.sqrt(L) * v[:, k]))
    return sorted(out, key=lambda t: (t[0], t[1]))


def monte_carlo_second_moment(Lambda: int, eps, orders, models: int, seed: int, point=None):
    """Sample mean and standard error of ``H(w)**2`` over independent models at a fixed ``w``."""
    orders = tuple(orders)
    check_memory(Lambda, orders)
    ss = np.random.SeedSequence(seed)
    point_seed, *model_seeds = ss.spawn(models + 1)
    if point is None:
        point = random_sphere_points(Lambda, 1, np.random.default_rng(point_seed))[0]
    w = np.asarray(point, dtype=float)
    _check_sphere(w, Lambda)
    h = np.array([sample_model(Lambda, eps, s, orders=orders).energy_batch(w)[0] for s in model_seeds])
    sq = h * h
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(models))
