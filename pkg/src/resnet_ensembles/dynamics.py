"""Scale dynamics of a residual network reduced to two paths.

A network of depth ``p`` with one skip connection over ``p - m`` layers has a
short path of order ``m`` and a long path of order ``p``.  Its loss is

    L(w) = L_m(w) + L_p(w),
    L_r(w) = eps_r * lam_hat_r / Lambda**((r-1)/2) * X_r(w / C, ..., w / C)

where ``X_r`` is a Gaussian order-``r`` coefficient tensor, ``lam_hat_r`` the
product of batch-norm scales along the path, and ``C`` the global weight
scale at which ``eps_r`` is quoted.  Because ``eps_r`` grows like ``C**r``,
each term is homogeneous of degree ``r`` in the raw weights, so the
derivative with respect to the global scale is the radial derivative

    dL/dC = (m * L_m + p * L_p) / C,    C = ||w|| / sqrt(Lambda).

The two verifiers check the one-step Taylor predictions for the batch-norm
scales (``verify_thm3``) and for the global scale (``verify_thm4``) at points
where the relevant derivative is made to vanish exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ParameterError, SizeError
from .spinglass import _symmetrize

MAX_TENSOR_ENTRIES = 10**6
NORM_TOL = 1e-8


@dataclass(frozen=True)
class TwoPathLoss:
    Lambda: int
    m: int
    p: int
    eps_m: float
    eps_p: float
    xm: np.ndarray = field(repr=False)
    xp: np.ndarray = field(repr=False)
    C: float = 1.0
    lambda_hat_m: float = 1.0
    lambda_hat_p: float = 1.0

    def __post_init__(self):
        if not 1 <= self.m < self.p:
            raise ParameterError(f"need 1 <= m < p, got m={self.m}, p={self.p}")
        if self.Lambda**self.p > MAX_TENSOR_ENTRIES:
            raise SizeError(f"Lambda**p = {self.Lambda**self.p} exceeds {MAX_TENSOR_ENTRIES}")
        if self.xm.shape != (self.Lambda,) * self.m or self.xp.shape != (self.Lambda,) * self.p:
            raise ParameterError("coefficient tensors must have shapes Lambda**m and Lambda**p")
        if not self.C > 0:
            raise ParameterError("C must be positive")
        # symmetric copies give the gradients of the (asymmetric) multilinear forms
        object.__setattr__(self, "_sym_m", _symmetrize(self.xm))
        object.__setattr__(self, "_sym_p", _symmetrize(self.xp))

    def coefficient(self, order: int) -> float:
        if order == self.m:
            eps, lam = self.eps_m, self.lambda_hat_m
        elif order == self.p:
            eps, lam = self.eps_p, self.lambda_hat_p
        else:
            raise ParameterError(f"no path of order {order}")
        return eps * lam / self.Lambda ** ((order - 1) / 2) / self.C**order

    def rescaled(self, which: str, factor: float) -> "TwoPathLoss":
        """Copy with one coefficient tensor (``"m"`` or ``"p"``) multiplied by ``factor``."""
        if which == "m":
            return replace(self, xm=self.xm * factor)
        if which == "p":
            return replace(self, xp=self.xp * factor)
        raise ParameterError("which must be 'm' or 'p'")


def sample_two_path_loss(Lambda=4, m=2, p=4, seed=0, eps_m=None, eps_p=None, C=1.0,
                         lambda_hat_m=1.0, lambda_hat_p=1.0) -> TwoPathLoss:
    rng = np.random.default_rng(seed)
    if eps_m is None or eps_p is None:
        eps_m = eps_p = 1.0 / math.sqrt(2.0)
    return TwoPathLoss(
        Lambda, m, p, eps_m, eps_p,
        rng.standard_normal((Lambda,) * m),
        rng.standard_normal((Lambda,) * p),
        C, lambda_hat_m, lambda_hat_p,
    )


class LossEval(NamedTuple):
    L: float
    L_m: float
    L_p: float
    g: np.ndarray
    g_m: np.ndarray
    g_p: np.ndarray


def _term(sym: np.ndarray, w: np.ndarray, order: int, coef: float):
    t = sym
    for _ in range(order - 1):
        t = t @ w
    return coef * float(t @ w), coef * order * t


def _check_norm(loss: TwoPathLoss, w: np.ndarray):
    target = loss.C * math.sqrt(loss.Lambda)
    if abs(np.linalg.norm(w) - target) > NORM_TOL * target:
        raise DomainError(f"||w|| = {np.linalg.norm(w)!r} but C*sqrt(Lambda) = {target!r}")


def loss_and_grads(loss: TwoPathLoss, w, strict: bool = True) -> LossEval:
    """Both loss terms and their exact gradients at ``w``.

    With ``strict`` the weights must satisfy ``||w|| = C sqrt(Lambda)``; the
    loss itself is defined everywhere, which is what the one-step checks need.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (loss.Lambda,):
        raise ParameterError(f"w must have shape ({loss.Lambda},)")
    if strict:
        _check_norm(loss, w)
    L_m, g_m = _term(loss._sym_m, w, loss.m, loss.coefficient(loss.m))
    L_p, g_p = _term(loss._sym_p, w, loss.p, loss.coefficient(loss.p))
    return LossEval(L_m + L_p, L_m, L_p, g_m + g_p, g_m, g_p)


def dC_derivative(loss: TwoPathLoss, w, strict: bool = True) -> float:
    """``dL/dC = (m L_m + p L_p) / C`` with ``C = ||w|| / sqrt(Lambda)``."""
    w = np.asarray(w, dtype=float)
    ev = loss_and_grads(loss, w, strict)
    C = float(np.linalg.norm(w)) / math.sqrt(loss.Lambda)
    if not C > 0:
        raise ParameterError("the global scale C must be positive")
    return (loss.m * ev.L_m + loss.p * ev.L_p) / C


def layer_scales(loss: TwoPathLoss):
    """Per-layer batch-norm scales ``(lam_unskipped, lam_skipped)``.

    Equal factors per layer (with unit ``sigma``) reproduce the path products
    ``lam_hat_m`` and ``lam_hat_p``.
    """
    lam_in = loss.lambda_hat_m ** (1.0 / loss.m)
    lam_skip = (loss.lambda_hat_p / loss.lambda_hat_m) ** (1.0 / (loss.p - loss.m))
    return lam_in, lam_skip


def dlambda(loss: TwoPathLoss, w, case: str, strict: bool = False) -> float:
    """``dL/dlambda_l`` for a layer on both paths (``"unskipped"``) or the long path only."""
    ev = loss_and_grads(loss, w, strict)
    lam_in, lam_skip = layer_scales(loss)
    if case == "unskipped":
        return (ev.L_m + ev.L_p) / lam_in
    if case == "skipped":
        return ev.L_p / lam_skip
    raise ParameterError(f"unknown layer case {case!r}")


def _balance(loss: TwoPathLoss, ev: LossEval, a_m: float, a_p: float) -> TwoPathLoss:
    """Rescale one tensor so that ``a_m * L_m + a_p * L_p == 0``.

    The tensor with the larger weighted term is shrunk, so the factor never
    exceeds one in magnitude.
    """
    tm, tp = a_m * ev.L_m, a_p * ev.L_p
    if abs(tp) >= abs(tm):
        return loss.rescaled("p", -tm / tp if tp else 0.0)
    return loss.rescaled("m", -tp / tm)


def prepare_lambda_stationary(loss: TwoPathLoss, w, case: str) -> TwoPathLoss:
    """Modify the coefficients so ``dL/dlambda_l = 0`` holds exactly at ``w``.

    Unskipped layer: rescale a tensor so ``L_m + L_p = 0``.  Skipped layer:
    remove the component of ``X_p`` along ``w**p`` so ``L_p = 0``.
    """
    w = np.asarray(w, dtype=float)
    if case == "unskipped":
        return _balance(loss, loss_and_grads(loss, w, strict=False), 1.0, 1.0)
    if case == "skipped":
        outer = w
        for _ in range(loss.p - 1):
            outer = np.multiply.outer(outer, w)
        coef = float(np.sum(loss.xp * outer)) / float(np.sum(outer * outer))
        return replace(loss, xp=loss.xp - coef * outer)
    raise ParameterError(f"unknown layer case {case!r}")


def prepare_radial_stationary(loss: TwoPathLoss, w) -> TwoPathLoss:
    """Rescale a tensor so ``m L_m + p L_p = 0`` (equivalently ``w . g = 0``)."""
    return _balance(loss, loss_and_grads(loss, w, strict=False), float(loss.m), float(loss.p))


@dataclass
class Thm3Trial:
    case: str
    mu: float
    lam: float
    lam_new: float
    observed: float
    predicted: float
    passed: bool
    g_norm: float
    g_m_norm: float
    g_p_norm: float

    @property
    def residual(self) -> float:
        return abs(self.observed - self.predicted)


def thm3_step(loss: TwoPathLoss, w, case: str, mu: float) -> Thm3Trial:
    """One gradient step on ``w`` followed by one step on ``lambda_l``.

    ``predicted`` is the first-order value of ``dL/dlambda_l`` after the step:
    ``-mu |g|**2 / lambda`` (unskipped) or ``-mu (g_m.g_p + |g_p|**2) / lambda``.
    """
    ev = loss_and_grads(loss, w, strict=False)
    lam_in, lam_skip = layer_scales(loss)
    lam = lam_in if case == "unskipped" else lam_skip
    w_new = np.asarray(w, dtype=float) - mu * ev.g
    observed = dlambda(loss, w_new, case)
    if case == "unskipped":
        predicted = -mu * float(ev.g @ ev.g) / lam
    else:
        predicted = -mu * float(ev.g_m @ ev.g_p + ev.g_p @ ev.g_p) / lam
    lam_new = lam - mu * observed
    return Thm3Trial(
        case, mu, lam, lam_new, observed, predicted, abs(lam_new) > abs(lam),
        float(np.linalg.norm(ev.g)), float(np.linalg.norm(ev.g_m)), float(np.linalg.norm(ev.g_p)),
    )


def thm4_prediction(g_m, g_p, m: int, p: int, C: float, mu: float, variant: str = "statement") -> float:
    """First-order ``dL/dC`` after one gradient step from a radially stationary point.

    ``"statement"``: ``-mu/C (m|g_m|**2 + p|g_p|**2 + (m+p) g_p.g_m)``;
    ``"appendix"`` replaces ``m|g_m|**2`` with ``m|g_p|**2``.
    """
    g_m = np.asarray(g_m, dtype=float)
    g_p = np.asarray(g_p, dtype=float)
    if variant not in ("statement", "appendix"):
        raise ParameterError(f"unknown variant {variant!r}")
    first = g_m @ g_m if variant == "statement" else g_p @ g_p
    return -mu / C * float(m * first + p * (g_p @ g_p) + (m + p) * (g_p @ g_m))


@dataclass
class Thm4Trial:
    mu: float
    observed: float
    predicted: dict
    g_m_norm: float
    g_p_norm: float

    def residual(self, variant: str = "statement") -> float:
        return abs(self.observed - self.predicted[variant])

    def relative_residual(self, variant: str = "statement") -> float:
        return self.residual(variant) / abs(self.predicted[variant])


def thm4_step(loss: TwoPathLoss, w, mu: float) -> Thm4Trial:
    w = np.asarray(w, dtype=float)
    ev = loss_and_grads(loss, w, strict=False)
    C = float(np.linalg.norm(w)) / math.sqrt(loss.Lambda)
    observed = dC_derivative(loss, w - mu * ev.g, strict=False)
    predicted = {
        v: thm4_prediction(ev.g_m, ev.g_p, loss.m, loss.p, C, mu, v) for v in ("statement", "appendix")
    }
    return Thm4Trial(mu, observed, predicted, float(np.linalg.norm(ev.g_m)), float(np.linalg.norm(ev.g_p)))


@dataclass
class VerificationReport:
    check: str
    trials: int
    mu: float
    pass_fraction: float
    median_residual: float
    residual_slope: float
    residual_ratio: float
    sign_variant: str | None = None
    passed: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _slope(mus, residuals) -> float:
    return float(np.polyfit(np.log(mus), np.log(residuals), 1)[0])


def _trial_point(rng, Lambda, C):
    x = rng.standard_normal(Lambda)
    return x * (C * math.sqrt(Lambda) / np.linalg.norm(x))


MU_LADDER = (1.0, 0.5, 0.25, 0.125)


def _prepared_trials(trials, seed, Lambda, m, p, prepare):
    out = []
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        loss = sample_two_path_loss(Lambda, m, p, seed=rng.integers(2**63))
        w = _trial_point(rng, Lambda, loss.C)
        out.append((prepare(loss, w), w))
    return out


def verify_thm3(trials: int = 200, mu: float = 1e-3, seed: int = 0, Lambda: int = 4, m: int = 2, p: int = 4,
                min_pass_fraction: float = 0.95) -> VerificationReport:
    """Batch-norm scales grow after one step from a point with ``dL/dlambda_l = 0``.

    Both layer cases are run on every trial; the skipped-layer case only
    counts when ``|g_p| > |g_m|``.
    """
    if not 0 < mu <= 1e-2:
        raise ParameterError(f"mu must lie in (0, 1e-2], got {mu!r}")
    if trials < 1:
        raise ParameterError("need at least one trial")
    cases = {}
    for case in ("unskipped", "skipped"):
        prepared = _prepared_trials(
            trials, [seed, 3, 0 if case == "unskipped" else 1], Lambda, m, p,
            lambda loss, w, case=case: prepare_lambda_stationary(loss, w, case),
        )
        steps = [[thm3_step(loss, w, case, mu * f) for f in MU_LADDER] for loss, w in prepared]
        if case == "skipped":
            steps = [s for s in steps if s[0].g_p_norm > s[0].g_m_norm]
        cases[case] = steps
    summary = {}
    all_first = []
    for case, steps in cases.items():
        first = [s[0] for s in steps]
        all_first += first
        abs_res = [float(np.median([s[i].residual for s in steps])) for i in range(len(MU_LADDER))]
        summary[case] = {
            "trials_used": len(first),
            "pass_fraction": float(np.mean([t.passed for t in first])) if first else float("nan"),
            "median_residual": float(np.median([t.residual / abs(t.predicted) for t in first])) if first else float("nan"),
            "residual_slope": _slope([mu * f for f in MU_LADDER], abs_res) if first else float("nan"),
            "residual_ratio": abs_res[0] / abs_res[1] if first else float("nan"),
        }
        if case == "skipped":
            # |g_p| > |g_m| forces g_m.g_p + |g_p|**2 > 0 (Cauchy-Schwarz), so the
            # predicted derivative is negative on every kept trial
            hits = sum(t.predicted >= 0 for t in first)
            assert hits == 0, "skipped-layer trial entered the region excluded by |g_p| > |g_m|"
            summary[case]["excluded_region_hits"] = hits
    pass_fraction = float(np.mean([t.passed for t in all_first]))
    worst_case_pass = min(v["pass_fraction"] for v in summary.values())
    slopes = [v["residual_slope"] for v in summary.values()]
    return VerificationReport(
        check="thm3",
        trials=trials,
        mu=mu,
        pass_fraction=pass_fraction,
        median_residual=float(np.median([t.residual / abs(t.predicted) for t in all_first])),
        residual_slope=float(np.mean(slopes)),
        residual_ratio=float(np.mean([v["residual_ratio"] for v in summary.values()])),
        passed=bool(worst_case_pass >= min_pass_fraction),
        details=summary,
    )


def verify_thm4(trials: int = 200, mu: float = 1e-3, seed: int = 0, Lambda: int = 4, m: int = 2, p: int = 4,
                max_median_residual: float = 0.05) -> VerificationReport:
    """Global scale derivative after one step from a radially stationary point.

    Reports the median relative Taylor residual, the log-log slope of the
    absolute residual against ``mu`` and which printed variant of the
    ``m``-coefficient the numbers support.
    """
    if not 0 < mu <= 1e-2:
        raise ParameterError(f"mu must lie in (0, 1e-2], got {mu!r}")
    if trials < 1:
        raise ParameterError("need at least one trial")
    prepared = _prepared_trials(trials, [seed, 4], Lambda, m, p, prepare_radial_stationary)
    steps = [[thm4_step(loss, w, mu * f) for f in MU_LADDER] for loss, w in prepared]
    first = [s[0] for s in steps]
    med = {v: float(np.median([t.relative_residual(v) for t in first])) for v in ("statement", "appendix")}
    variant = min(med, key=med.get)
    abs_res = [float(np.median([s[i].residual(variant) for s in steps])) for i in range(len(MU_LADDER))]
    slope = _slope([mu * f for f in MU_LADDER], abs_res)
    return VerificationReport(
        check="thm4",
        trials=trials,
        mu=mu,
        pass_fraction=float(np.mean([t.observed < 0 for t in first])),
        median_residual=med[variant],
        residual_slope=slope,
        residual_ratio=abs_res[0] / abs_res[1],
        sign_variant=variant,
        passed=bool(med[variant] < max_median_residual and 1.8 <= slope <= 2.2),
        details={"median_relative_residual": med, "predicted_negative_fraction": float(
            np.mean([t.predicted[variant] < 0 for t in first]))},
    )
