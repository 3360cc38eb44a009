"""A small fully connected ResNet trained from scratch with numpy.

Layer ``l`` computes

    N_1 = s_1 * relu(x W_1)
    N_l = s_l * relu(N_{l-1} W_l) + N_{l-1}        (l >= 2)

with ``s_l = lambda_l / sigma_l`` when multiplicative batch normalization is
on and ``s_l = 1`` otherwise.  ``sigma_l`` is the mean over units of the
per-unit standard deviation of ``relu(N_{l-1} W_l)`` on the current batch and
is treated as a constant when differentiating.  A linear readout maps
``N_p`` to class logits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ToyNetConfig:
    p: int = 10
    n: int = 32
    d: int = 8
    num_classes: int = 50
    samples_per_class: int = 40
    use_bn: bool = True
    learning_rate: float = 0.01
    batch_size: int = 64
    iterations: int = 5000
    log_every: int = 250
    seed: int = 0
    loss: str = "xent"
    noise_var: float = 0.1

    def __post_init__(self):
        if self.p < 2:
            raise ParameterError("the toy ResNet needs p >= 2 layers")
        for name in ("n", "d", "num_classes", "samples_per_class", "batch_size", "log_every"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.iterations < 0:
            raise ParameterError("iterations must be non-negative")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.loss not in ("xent", "hinge"):
            raise ParameterError("loss must be 'xent' or 'hinge'")
        if self.loss == "hinge" and self.num_classes != 2:
            raise ParameterError("the scalar hinge head is binary: num_classes must be 2")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    means: np.ndarray

    def __len__(self):
        return self.y.size


def make_dataset(num_classes: int, d: int, samples_per_class: int, seed: int,
                 noise_var: float = 0.1, mean_range: float = 1.0) -> Dataset:
    """Gaussian mixture: means uniform in ``[-mean_range, mean_range]**d``, covariance ``noise_var * I``."""
    if samples_per_class < 1:
        raise ParameterError("samples_per_class must be positive; the dataset would be empty")
    if num_classes < 1 or d < 1:
        raise ParameterError("num_classes and d must be positive")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-mean_range, mean_range, size=(num_classes, d))
    y = np.repeat(np.arange(num_classes), samples_per_class)
    X = means[y] + math.sqrt(noise_var) * rng.standard_normal((y.size, d))
    perm = rng.permutation(y.size)
    return Dataset(X[perm], y[perm], means)


@dataclass
class ToyNetParams:
    """Layer weights, batch-norm scales and the running mean of ``sigma_l``."""

    W: list
    lambdas: np.ndarray
    readout: np.ndarray | None
    sigmas: np.ndarray = field(default=None)

    def weight_norm(self) -> float:
        """Euclidean norm of the residual-layer weights ``W_1..W_p`` (readout excluded)."""
        return math.sqrt(sum(float(np.sum(w * w)) for w in self.W))

    def copy(self) -> "ToyNetParams":
        return ToyNetParams(
            [w.copy() for w in self.W],
            self.lambdas.copy(),
            None if self.readout is None else self.readout.copy(),
            None if self.sigmas is None else self.sigmas.copy(),
        )


def init_params(config: ToyNetConfig, rng) -> ToyNetParams:
    """Fan-in initialization ``N(0, 1/fan_in)`` and ``lambda_l = 1``.

    The readout starts at ``N(0, 1/n**2)`` so initial logits are small.
    """
    n, d = config.n, config.d
    W = [rng.standard_normal((d, n)) / math.sqrt(d)]
    W += [rng.standard_normal((n, n)) / math.sqrt(n) for _ in range(config.p - 1)]
    readout = None
    if config.loss == "xent":
        readout = rng.standard_normal((n, config.num_classes)) / n
    return ToyNetParams(W, np.ones(config.p), readout, np.ones(config.p))


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    post: list
    scales: np.ndarray
    sigmas: np.ndarray
    out: np.ndarray


def forward(params: ToyNetParams, config: ToyNetConfig, X: np.ndarray, sigmas=None):
    """Logits (or scalar outputs for the hinge head) and the activation cache.

    ``sigmas`` overrides the per-batch normalizers, e.g. for finite-difference
    checks that hold them fixed.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != config.d:
        raise ParameterError(f"batch must have shape (B, {config.d}), got {X.shape}")
    h = X
    inputs, pre, post = [], [], []
    scales = np.ones(config.p)
    used_sigmas = np.ones(config.p)
    for l in range(config.p):
        a = h @ params.W[l]
        u = np.maximum(a, 0.0)
        if config.use_bn:
            if sigmas is None:
                sig = max(float(u.std(axis=0).mean()), SIGMA_FLOOR)
            else:
                sig = float(sigmas[l])
            used_sigmas[l] = sig
            scales[l] = params.lambdas[l] / sig
        inputs.append(h)
        pre.append(a)
        post.append(u)
        h = scales[l] * u if l == 0 else scales[l] * u + h
    out = h @ params.readout if params.readout is not None else h.sum(axis=1)
    return out, ForwardCache(inputs, pre, post, scales, used_sigmas, h)


def loss_value(out: np.ndarray, y: np.ndarray, kind: str):
    """Mean loss and its gradient with respect to ``out``."""
    B = y.size
    if kind == "xent":
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -float(logp[np.arange(B), y].mean())
        dout = np.exp(logp)
        dout[np.arange(B), y] -= 1.0
        return loss, dout / B
    sign = 2.0 * y - 1.0
    margin = 1.0 - sign * out
    loss = float(np.maximum(margin, 0.0).mean())
    dout = np.where(margin > 0, -sign, 0.0) / B
    return loss, dout


@dataclass
class Gradients:
    W: list
    lambdas: np.ndarray
    readout: np.ndarray | None
    sigmas: np.ndarray


def backward(params: ToyNetParams, config: ToyNetConfig, X, y, sigmas=None):
    """Mean loss and exact gradients for every ``W_l``, ``lambda_l`` and the readout."""
    out, cache = forward(params, config, X, sigmas)
    loss, dout = loss_value(out, np.asarray(y), config.loss)
    if params.readout is not None:
        d_readout = cache.out.T @ dout
        dh = dout @ params.readout.T
    else:
        d_readout = None
        dh = np.repeat(dout[:, None], config.n, axis=1)
    dW = [None] * config.p
    dlam = np.zeros(config.p)
    for l in reversed(range(config.p)):
        u = cache.post[l]
        if config.use_bn:
            dlam[l] = float(np.sum(dh * u)) / cache.sigmas[l]
        da = (dh * cache.scales[l]) * (cache.pre[l] > 0)
        dW[l] = cache.inputs[l].T @ da
        dh_prev = da @ params.W[l].T
        dh = dh_prev + dh if l > 0 else dh_prev
    return loss, Gradients(dW, dlam, d_readout, cache.sigmas)


def accuracy(out: np.ndarray, y: np.ndarray, kind: str) -> float:
    if kind == "xent":
        return float(np.mean(out.argmax(axis=1) == y))
    return float(np.mean((out > 0) == (y == 1)))


@dataclass
class TraceRow:
    iteration: int
    loss: float
    accuracy: float
    lambdas: tuple
    weight_norm: float


@dataclass
class TrainingTrace:
    config: ToyNetConfig
    rows: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_lambdas(self) -> np.ndarray:
        return np.asarray(self.rows[-1].lambdas)

    @property
    def weight_norms(self) -> np.ndarray:
        return np.array([r.weight_norm for r in self.rows])

    def header(self) -> list:
        return ["iteration", "loss", "accuracy"] + [f"lambda_{l + 1}" for l in range(self.config.p)] + ["weight_norm"]

    def csv_rows(self):
        for r in self.rows:
            yield [r.iteration, r.loss, r.accuracy, *r.lambdas, r.weight_norm]


def _log_row(params, config, data, it) -> TraceRow:
    out, _ = forward(params, config, data.X)
    loss, _ = loss_value(out, data.y, config.loss)
    return TraceRow(it, loss, accuracy(out, data.y, config.loss),
                    tuple(float(v) for v in params.lambdas), params.weight_norm())


def train(config: ToyNetConfig, data: Dataset | None = None) -> TrainingTrace:
    """Plain constant-rate SGD; every ``log_every`` iterations the full-data loss is logged.

    A non-finite loss stops training and returns the partial trace with
    ``diverged`` set.
    """
    ss = np.random.SeedSequence(config.seed)
    data_seed, init_seed, batch_seed = ss.spawn(3)
    if data is None:
        data = make_dataset(config.num_classes, config.d, config.samples_per_class,
                            int(data_seed.generate_state(1)[0]), config.noise_var)
    params = init_params(config, np.random.default_rng(init_seed))
    batch_rng = np.random.default_rng(batch_seed)
    trace = TrainingTrace(config)
    trace.rows.append(_log_row(params, config, data, 0))
    N = len(data)
    lr = config.learning_rate
    # overflow on the way to divergence is expected; it is caught by the finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, config.iterations + 1):
            idx = batch_rng.choice(N, size=min(config.batch_size, N), replace=False)
            loss, grads = backward(params, config, data.X[idx], data.y[idx])
            if not math.isfinite(loss):
                trace.diverged = True
                break
            for W, gW in zip(params.W, grads.W):
                W -= lr * gW
            if config.use_bn:
                params.lambdas -= lr * grads.lambdas
            if params.readout is not None:
                params.readout -= lr * grads.readout
            if config.use_bn:
                params.sigmas = grads.sigmas.copy() if it == 1 else 0.9 * params.sigmas + 0.1 * grads.sigmas
            if it % config.log_every == 0 or it == config.iterations:
                row = _log_row(params, config, data, it)
                if not (math.isfinite(row.loss) and math.isfinite(row.weight_norm)):
                    trace.diverged = True
                    break
                trace.rows.append(row)
    return trace
