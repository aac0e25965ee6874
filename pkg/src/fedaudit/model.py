"""L2-regularized logistic regression, F1 scoring and the Laplace mechanism."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Shard


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelWeights:
    w: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise ModelError("weight vector must be 1-D")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ModelError("model weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, dim: int) -> ModelWeights:
        return cls(np.zeros(dim), 0.0)

    @classmethod
    def from_vector(cls, theta) -> ModelWeights:
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], theta[-1])

    @property
    def dim(self) -> int:
        return len(self.w)

    def vector(self) -> np.ndarray:
        """Weights with the bias appended as the last coordinate."""
        return np.append(self.w, self.bias)

    def to_bytes(self) -> bytes:
        theta = self.vector()
        return struct.pack(f"<Q{len(theta)}d", len(theta), *theta)

    @classmethod
    def from_bytes(cls, blob: bytes) -> ModelWeights:
        if len(blob) < 8:
            raise ModelError("truncated model blob")
        (count,) = struct.unpack_from("<Q", blob)
        if count < 1 or len(blob) != 8 + 8 * count:
            raise ModelError(f"model blob length {len(blob)} does not match count {count}")
        return cls.from_vector(struct.unpack_from(f"<{count}d", blob, 8))

    def __eq__(self, other):
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return self.bias == other.bias and np.array_equal(self.w, other.w)

    __hash__ = None


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 1.0
    eta: float = 0.25
    epochs: int = 200
    epsilon: float = 0.01

    def __post_init__(self):
        if not (self.alpha > 0 and self.eta > 0 and self.epsilon > 0):
            raise ModelError("alpha, eta and epsilon must be positive")
        if self.epochs < 0:
            raise ModelError("epochs must be non-negative")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_dim(m: ModelWeights, features: np.ndarray):
    if features.ndim != 2 or features.shape[1] != m.dim:
        raise ModelError(f"model has {m.dim} weights but data has shape {features.shape}")


def objective(theta: np.ndarray, x: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Mean logistic loss plus (alpha/2)·||theta||², bias included in theta."""
    z = x @ theta[:-1] + theta[-1]
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(loss + 0.5 * alpha * theta @ theta)


def gradient(theta: np.ndarray, x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    z = x @ theta[:-1] + theta[-1]
    r = sigmoid(z) - y
    g = np.empty_like(theta)
    g[:-1] = x.T @ r / len(y)
    g[-1] = r.mean()
    return g + alpha * theta


def train_logistic(shard: Shard | Dataset, init: ModelWeights, hp: HyperParams) -> ModelWeights:
    """Full-batch gradient descent for ``hp.epochs`` steps from ``init``."""
    data = shard.train if isinstance(shard, Shard) else shard
    if len(data) == 0:
        raise ModelError("empty training set")
    _check_dim(init, data.features)
    x, y = data.features, data.labels.astype(np.float64)
    theta = init.vector()
    for _ in range(hp.epochs):
        theta = theta - hp.eta * gradient(theta, x, y, hp.alpha)
    if hp.epochs and not np.isfinite(objective(theta, x, y, hp.alpha)):
        raise ModelError("training diverged (non-finite loss); reduce eta")
    return ModelWeights.from_vector(theta)


def predict(m: ModelWeights, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    _check_dim(m, x)
    # sigmoid(z) >= 0.5  <=>  z >= 0; ties go to the positive class
    return (x @ m.w + m.bias >= 0.0).astype(np.int64)


def laplace_scale(d: int, alpha: float, epsilon: float) -> float:
    """Noise scale 2/(d·alpha·epsilon) for the regularized logistic-regression sensitivity."""
    if d < 1 or alpha <= 0 or epsilon <= 0:
        raise ModelError("d, alpha and epsilon must be positive")
    return 2.0 / (d * alpha * epsilon)


def add_dp_noise(m: ModelWeights, d: int, alpha: float, epsilon: float, seed) -> ModelWeights:
    scale = laplace_scale(d, alpha, epsilon)
    rng = np.random.default_rng(seed)
    return ModelWeights.from_vector(m.vector() + rng.laplace(0.0, scale, size=m.dim + 1))


def confusion(m: ModelWeights, ds: Dataset) -> tuple[int, int, int]:
    """(TP, FP, FN) of the positive class."""
    pred = predict(m, ds.features)
    y = ds.labels
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        # nothing positive predicted and nothing positive present
        return 1.0
    return 2 * tp / denom


def f1_eval(m: ModelWeights, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ModelError("cannot evaluate on an empty dataset")
    return f1_from_counts(*confusion(m, ds))


def f1_micro(m: ModelWeights, ds: Dataset) -> int:
    """F1 in integer micro-units, rounded half up from the exact ratio."""
    if len(ds) == 0:
        raise ModelError("cannot evaluate on an empty dataset")
    tp, fp, fn = confusion(m, ds)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1_000_000
    return (2 * tp * 2_000_000 + denom) // (2 * denom)
