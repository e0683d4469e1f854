"""Dense ReLU network with manual backprop, SGD and parameter-space EMA.

Everything is float64. Weight matrices are stored ``(fan_in, fan_out)`` so a
layer computes ``a @ W + b`` on row-major batches.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericFaultError, RejectedInputError


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple = ()
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise RejectedInputError(f"layer widths must be >= 1, got {self}")
        if self.num_classes < 2:
            raise RejectedInputError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def n_params(self):
        d = self.layer_dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))


@dataclass
class ParamSet:
    weights: list
    biases: list

    @property
    def depth(self):
        return len(self.weights)

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return type(self)([np.zeros_like(w) for w in self.weights],
                          [np.zeros_like(b) for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def max_abs_diff(self, other):
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays(), other.arrays()))

    def bitwise_equal(self, other):
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.arrays(), other.arrays()))

    def __add__(self, other):
        return type(self)([a + b for a, b in zip(self.weights, other.weights)],
                          [a + b for a, b in zip(self.biases, other.biases)])


class Gradients(ParamSet):
    """Gradient carrier, shape-congruent with the ParamSet it was taken from."""


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[None, :]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] < 1:
            raise RejectedInputError("batch must hold at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise RejectedInputError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )

    def __len__(self):
        return self.features.shape[0]


@dataclass
class ForwardTrace:
    activations: list  # input to each layer; activations[0] is the batch features
    preacts: list = field(default_factory=list)
    logits: np.ndarray = None

    @property
    def depth(self):
        return len(self.preacts)


def init_params(spec, seed):
    """He-scaled Gaussian weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases)


def _features(batch):
    if isinstance(batch, Batch):
        return batch.features
    x = np.asarray(batch, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def forward(params, batch):
    """Return ``(logits, trace)`` for a Batch or a bare feature matrix."""
    a = _features(batch)
    if a.shape[1] != params.weights[0].shape[0]:
        raise RejectedInputError(
            f"feature width {a.shape[1]} does not match input_dim {params.weights[0].shape[0]}"
        )
    trace = ForwardTrace([a])
    last = params.depth - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        trace.preacts.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            trace.activations.append(a)
    trace.logits = z
    return z, trace


def logits_of(params, features):
    return forward(params, features)[0]


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise RejectedInputError(f"labels must lie in [0, {num_classes})")
    return labels


def per_sample_ce(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape != (logits.shape[0],):
        raise RejectedInputError("one label per logit row required")
    # log-sum-exp minus the true logit is >= 0 up to rounding
    return np.maximum(kernels.row_ce(logits, labels), 0.0)


def ce_dlogits(logits, labels, weights):
    """d/dlogits of ``mean_i(weights_i * CE_i)``."""
    labels = _check_labels(labels, logits.shape[1])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != labels.shape:
        raise RejectedInputError("one weight per sample required")
    if np.any(weights < 0):
        raise RejectedInputError("loss weights must be nonnegative")
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    g *= (weights / len(labels))[:, None]
    return g


def mse_dlogits(logits, target_logits, scale):
    """d/dlogits of ``scale * mean((logits - target)**2)`` over all entries."""
    target_logits = np.asarray(target_logits, dtype=np.float64)
    if target_logits.shape != logits.shape:
        raise RejectedInputError(
            f"target shape {target_logits.shape} differs from logits {logits.shape}"
        )
    if scale < 0:
        raise RejectedInputError("scale must be nonnegative")
    return (2.0 * scale / logits.size) * (logits - target_logits)


def mse(logits, target_logits):
    return float(np.mean((logits - target_logits) ** 2))


def backward(params, trace, dlogits):
    """Backpropagate a logit-space gradient through the traced forward pass."""
    n = params.depth
    dws, dbs = [None] * n, [None] * n
    dz = dlogits
    for i in range(n - 1, -1, -1):
        dws[i] = trace.activations[i].T @ dz
        dbs[i] = dz.sum(axis=0)
        if i:
            dz = (dz @ params.weights[i].T) * (trace.preacts[i - 1] > 0)
    return Gradients(dws, dbs)


def backward_weighted_ce(params, trace, labels, weights):
    return backward(params, trace, ce_dlogits(trace.logits, labels, weights))


def backward_mse_logits(params, trace, target_logits, scale):
    return backward(params, trace, mse_dlogits(trace.logits, target_logits, scale))


def sgd_step(params, grads, lr):
    if lr <= 0:
        raise RejectedInputError("learning rate must be positive")
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericFaultError(f"non-finite gradient in layer {i}", layer=i)
    return ParamSet([w - lr * g for w, g in zip(params.weights, grads.weights)],
                    [b - lr * g for b, g in zip(params.biases, grads.biases)])


def ema_update(stable, working, alpha):
    if not 0.0 < alpha < 1.0:
        raise RejectedInputError(f"EMA decay must lie in (0, 1), got {alpha}")
    beta = 1.0 - alpha
    return ParamSet([alpha * s + beta * w for s, w in zip(stable.weights, working.weights)],
                    [alpha * s + beta * w for s, w in zip(stable.biases, working.biases)])


def _rel_err(analytic, numeric, floor):
    return float(np.max(np.abs(analytic - numeric)
                        / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def grad_check(spec, seed, batch_size=6, eps=1e-5, weights=None, floor=1e-6):
    """Worst relative error of both analytic backward paths vs central differences.

    The objective checked is ``mean(w * CE) + 0.7 * MSE(logits, target)`` on a
    random batch; ``weights`` defaults to a mix of 0, 0.5 and 1. Relative
    errors use ``max(|a|, |n|, floor)`` as denominator so exactly-zero
    gradients (dead units) do not divide by zero.
    """
    if spec.n_params > 10_000:
        raise RejectedInputError("grad_check is limited to networks with <= 1e4 parameters")
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng.integers(2**63))
    for b in params.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((batch_size, spec.input_dim))
    y = rng.integers(0, spec.num_classes, batch_size)
    target = rng.standard_normal((batch_size, spec.num_classes))
    if weights is None:
        weights = np.array([0.0, 0.5, 1.0])[np.arange(batch_size) % 3]
    weights = np.asarray(weights, dtype=np.float64)
    scale = 0.7

    def objective(p):
        z = forward(p, x)[0]
        return float(np.mean(weights * per_sample_ce(z, y)) + scale * mse(z, target))

    _, trace = forward(params, x)
    analytic = backward_weighted_ce(params, trace, y, weights) + \
        backward_mse_logits(params, trace, target, scale)

    worst = 0.0
    for arr, garr in zip(params.arrays(), analytic.arrays()):
        numeric = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = objective(params)
            arr[idx] = orig - eps
            fm = objective(params)
            arr[idx] = orig
            numeric[idx] = (fp - fm) / (2 * eps)
        worst = max(worst, _rel_err(garr, numeric, floor))
    return worst
