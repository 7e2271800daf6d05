"""Small MLP engine with hand-written backpropagation.

Parameters live in one flat float64 vector so that updates, virtual updates
and finite-difference checks all work on the same representation. Every
update returns a new ``ModelParams``; nothing here mutates its inputs.
"""
from dataclasses import dataclass, field, replace
import warnings

import numpy as np

from .errors import EmptyBatchWarning, NumericError, ShapeError, UnsupportedArchitecture
from .seeding import child_seed, make_rng

EPS = 1e-12
MODES = ("eval", "train", "stochastic")


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        elif x.ndim == 1 and x.size == 0:
            x = x.reshape(0, 0)
        elif x.ndim != 2:
            raise ShapeError(f"features must be a matrix, got shape {x.shape}")
        if y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"features have {x.shape[0]} rows but labels have shape {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.features[idx], self.labels[idx])

    @staticmethod
    def concat(*batches):
        batches = [b for b in batches if b is not None]
        nonempty = [b for b in batches if len(b)] or batches[:1]
        return Batch(np.concatenate([b.features for b in nonempty]),
                     np.concatenate([b.labels for b in nonempty]))


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    layer_shapes: tuple
    flat: np.ndarray = field(repr=False)
    learning_rate: float = 0.05
    dropout_rate: float = 0.0

    def __post_init__(self):
        shapes = tuple((int(i), int(o)) for i, o in self.layer_shapes)
        object.__setattr__(self, "layer_shapes", shapes)
        flat = _freeze(self.flat)
        if flat.ndim != 1 or flat.size != n_params(shapes):
            raise ShapeError(f"flat vector has {flat.size} entries, layers need {n_params(shapes)}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "flat", flat)

    @property
    def n_layers(self):
        return len(self.layer_shapes)

    @property
    def in_dim(self):
        return self.layer_shapes[0][0]

    @property
    def out_dim(self):
        return self.layer_shapes[-1][1]

    def layers(self):
        """(W, b) views into the flat vector; W has shape (in, out)."""
        out, pos = [], 0
        for i, o in self.layer_shapes:
            W = self.flat[pos:pos + i * o].reshape(i, o)
            pos += i * o
            b = self.flat[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def with_flat(self, flat):
        return replace(self, flat=flat)


def n_params(layer_shapes):
    return sum(i * o + o for i, o in layer_shapes)


def init_params(sizes, seed, learning_rate=0.05, dropout_rate=0.0):
    """Glorot-uniform weights and zero biases for an MLP with widths ``sizes``."""
    rng = make_rng(seed)
    shapes = list(zip(sizes[:-1], sizes[1:]))
    chunks = []
    for i, o in shapes:
        limit = np.sqrt(6.0 / (i + o))
        chunks.append(rng.uniform(-limit, limit, size=i * o))
        chunks.append(np.zeros(o))
    return ModelParams(shapes, np.concatenate(chunks), learning_rate, dropout_rate)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Cache:
    inputs: list        # input to each layer (post-dropout for hidden layers)
    pre: list           # pre-activations of hidden layers
    masks: list         # scaled dropout masks per hidden layer (None when off)
    probs: np.ndarray
    layer_shapes: tuple


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {x.shape}")
    if x.shape[1] != params.in_dim and x.shape[0] > 0:
        raise ShapeError(f"feature width {x.shape[1]} does not match input layer {params.in_dim}")
    return x


def _features(batch):
    return batch.features if isinstance(batch, Batch) else batch


def forward(params, batch, mode="eval", seed=None):
    """Run the MLP and return ``(probs, cache)``.

    ``mode`` is ``"eval"`` (no dropout) or ``"train"``/``"stochastic"``
    (inverted dropout after every hidden layer, masks drawn from ``seed``).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    x = _check_input(params, _features(batch))
    n = x.shape[0]
    if n == 0:
        empty = np.zeros((0, params.out_dim))
        return empty, Cache([], [], [], empty, params.layer_shapes)

    use_dropout = mode != "eval" and params.dropout_rate > 0
    if mode != "eval" and seed is None:
        raise ValueError(f"mode {mode!r} requires a seed")
    rng = make_rng(seed) if use_dropout else None
    keep = 1.0 - params.dropout_rate

    layers = params.layers()
    inputs, pre, masks = [], [], []
    h = x
    for W, b in layers[:-1]:
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        if use_dropout:
            m = (rng.random(h.shape) < keep) / keep
            h = h * m
            masks.append(m)
        else:
            masks.append(None)
    W, b = layers[-1]
    inputs.append(h)
    logits = h @ W + b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    probs = softmax(logits)
    return probs, Cache(inputs, pre, masks, probs, params.layer_shapes)


def predict(params, batch):
    return forward(params, batch, "eval")[0]


def cross_entropy(preds, labels):
    """Mean negative log-likelihood with probabilities clamped at 1e-12."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape[0] != labels.shape[0]:
        raise ShapeError(f"{preds.shape[0]} prediction rows vs {labels.shape[0]} labels")
    if labels.size == 0:
        warnings.warn("cross_entropy of an empty batch is defined as 0", EmptyBatchWarning, stacklevel=2)
        return 0.0
    return float(per_sample_nll(preds, labels).mean())


def per_sample_nll(preds, labels):
    if labels.size and labels.max() >= preds.shape[1]:
        raise ShapeError(f"label {labels.max()} out of range for {preds.shape[1]} classes")
    p = preds[np.arange(labels.size), labels]
    return -np.log(np.maximum(p, EPS))


def per_sample_loss(params, batch):
    """Eval-mode cross-entropy of every row of ``batch`` (no averaging)."""
    return per_sample_nll(predict(params, batch), batch.labels)


def backward(params, cache, labels):
    """Gradient of the mean cross-entropy for the pass recorded in ``cache``."""
    if cache.layer_shapes != params.layer_shapes:
        raise ShapeError("cache was produced by a different architecture")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        return np.zeros_like(params.flat)
    if cache.probs.shape[0] != n:
        raise ShapeError(f"cache holds {cache.probs.shape[0]} rows, got {n} labels")

    layers = params.layers()
    delta = cache.probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        grads[li] = (cache.inputs[li].T @ delta, delta.sum(axis=0))
        if li == 0:
            break
        delta = delta @ W.T
        if cache.masks[li - 1] is not None:
            delta = delta * cache.masks[li - 1]
        delta = delta * (cache.pre[li - 1] > 0)

    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
    if not np.all(np.isfinite(flat)):
        raise NumericError("non-finite gradient")
    return flat


def loss_and_grad(params, batch, mode="eval", seed=None):
    probs, cache = forward(params, batch, mode, seed)
    if len(batch) == 0:
        return 0.0, np.zeros_like(params.flat)
    return float(per_sample_nll(probs, batch.labels).mean()), backward(params, cache, batch.labels)


def sgd_step(params, grad):
    """Return ``params`` moved by ``-learning_rate * grad``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameters {params.flat.shape}")
    return params.with_flat(params.flat - params.learning_rate * grad)


def virtual_update(params, grad):
    """Throwaway copy of ``params`` after one SGD step, used for interference scoring.

    Same arithmetic as :func:`sgd_step`; callers must never install the result
    as the live model.
    """
    return sgd_step(params, grad)


def extract_embeddings(params, batch):
    """Post-ReLU activations of the last hidden layer, dropout disabled."""
    if params.n_layers < 2:
        raise UnsupportedArchitecture("embeddings need at least one hidden layer")
    x = _check_input(params, _features(batch))
    width = params.layer_shapes[-1][0]
    if x.shape[0] == 0:
        return np.zeros((0, width))
    h = x
    for W, b in params.layers()[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    return h


def mc_predict(params, batch, k, seed):
    """``k`` stochastic forward passes; pass ``i`` draws its mask from ``(seed, i)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return [forward(params, batch, "stochastic", child_seed(seed, i))[0] for i in range(k)]
