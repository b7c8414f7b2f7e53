"""Dense-tensor engine: exact forward/backward passes in float64.

Layers operate on explicit numpy arrays and keep their parameters as
views into the owning model's flat parameter vector, so the optimizer
and the pruning mask can treat the whole network as one length-m vector.

Backward returns the gradient of the *mean* loss over the batch, i.e. an
unbiased estimate of the full-data gradient under i.i.d. sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, NumericOverflow, StaleCacheError


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Affine:
    """Fully-connected layer: y = x @ W + b."""

    def __init__(self, n_in: int, n_out: int):
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"affine dims must be >= 1, got ({n_in}, {n_out})")
        self.n_in = n_in
        self.n_out = n_out

    @property
    def param_shapes(self):
        return [(self.n_in, self.n_out), (self.n_out,)]

    def fan_in(self):
        return self.n_in

    def forward(self, x, params):
        W, b = params
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ConfigError(
                f"affine expects (batch, {self.n_in}) input, got {x.shape}")
        return x @ W + b, x

    def backward(self, d_out, cache, params):
        W, _ = params
        x = cache
        d_W = x.T @ d_out
        d_b = d_out.sum(axis=0)
        d_x = d_out @ W.T
        return d_x, [d_W, d_b]


class Conv3x3:
    """3x3 convolution, stride 1, zero 'same' padding, channels-last.

    Implemented as patch extraction (im2col) followed by one matmul, so
    the backward pass is exact matrix calculus rather than a hand-rolled
    correlation.
    """

    def __init__(self, c_in: int, c_out: int):
        if c_in < 1 or c_out < 1:
            raise ConfigError(f"conv channels must be >= 1, got ({c_in}, {c_out})")
        self.c_in = c_in
        self.c_out = c_out

    @property
    def param_shapes(self):
        return [(3, 3, self.c_in, self.c_out), (self.c_out,)]

    def fan_in(self):
        return 9 * self.c_in

    def forward(self, x, params):
        K, b = params
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ConfigError(
                f"conv expects (batch, h, w, {self.c_in}) input, got {x.shape}")
        n, h, w, _ = x.shape
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (n, h, w, c_in, 3, 3) -> (n, h, w, 3, 3, c_in)
        patches = sliding_window_view(padded, (3, 3), axis=(1, 2))
        patches = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3))
        flat = patches.reshape(n * h * w, 9 * self.c_in)
        y = flat @ K.reshape(9 * self.c_in, self.c_out) + b
        return y.reshape(n, h, w, self.c_out), (flat, x.shape)

    def backward(self, d_out, cache, params):
        K, _ = params
        flat, x_shape = cache
        n, h, w, _ = x_shape
        d_flat_out = d_out.reshape(n * h * w, self.c_out)
        d_K = (flat.T @ d_flat_out).reshape(3, 3, self.c_in, self.c_out)
        d_b = d_flat_out.sum(axis=0)
        d_patches = (d_flat_out @ K.reshape(9 * self.c_in, self.c_out).T)
        d_patches = d_patches.reshape(n, h, w, 3, 3, self.c_in)
        d_padded = np.zeros((n, h + 2, w + 2, self.c_in))
        for i in range(3):
            for j in range(3):
                d_padded[:, i:i + h, j:j + w, :] += d_patches[:, :, :, i, j, :]
        return d_padded[:, 1:1 + h, 1:1 + w, :], [d_K, d_b]


class Relu:
    param_shapes: list = []

    def forward(self, x, params):
        return np.maximum(x, 0.0), x

    def backward(self, d_out, cache, params):
        return d_out * (cache > 0), []


class MeanPool2x2:
    """2x2 mean pooling, stride 2; spatial dims must be even."""

    param_shapes: list = []

    def forward(self, x, params):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"mean-pool needs even spatial dims, got {h}x{w}")
        y = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
        return y, x.shape

    def backward(self, d_out, cache, params):
        n, h, w, c = cache
        d_x = np.repeat(np.repeat(d_out, 2, axis=1), 2, axis=2) / 4.0
        return d_x, []


class GlobalMeanPool:
    """Average over all spatial positions: (n, h, w, c) -> (n, c)."""

    param_shapes: list = []

    def forward(self, x, params):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, d_out, cache, params):
        n, h, w, c = cache
        return np.broadcast_to(d_out[:, None, None, :], (n, h, w, c)) / (h * w), []


class Flatten:
    param_shapes: list = []

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, d_out, cache, params):
        return d_out.reshape(cache), []


# ---------------------------------------------------------------------------
# Gradient / cache containers
# ---------------------------------------------------------------------------

@dataclass
class Gradient:
    """Flat length-m gradient plus per-layer views aliasing the same buffer."""

    flat: np.ndarray
    views: list = field(default_factory=list)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))


@dataclass
class BatchCache:
    """Per-layer activations from one forward pass; consumed once by backward."""

    layer_caches: list
    params_version: int
    batch_size: int
    consumed: bool = False


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def forward(model, inputs: np.ndarray):
    """Run the model on a batch; returns (logits, cache).

    Masked parameters are forced to zero before use, so forward output is
    invariant to whatever values the raw vector stores at pruned positions.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[0] < 1:
        raise ConfigError("empty batch")
    param_views = model.masked_param_views()
    layer_caches = []
    for layer, views in zip(model.layers, param_views):
        x, cache = layer.forward(x, views)
        layer_caches.append(cache)
    if not np.all(np.isfinite(x)):
        raise NumericOverflow("non-finite activation in forward pass")
    return x, BatchCache(layer_caches, model.params_version, x.shape[0])


def loss_and_error(logits: np.ndarray, targets: np.ndarray):
    """Softmax cross-entropy (log-sum-exp stabilized) and argmax error rate.

    Argmax ties break toward the lowest class index.
    """
    targets = np.asarray(targets)
    if logits.shape[0] != targets.shape[0]:
        raise ConfigError(
            f"{logits.shape[0]} logit rows vs {targets.shape[0]} targets")
    if not np.all(np.isfinite(logits)):
        raise NumericOverflow("non-finite logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted[np.arange(len(targets)), targets] - log_z
    mean_loss = float(-log_probs.mean())
    error_rate = float((logits.argmax(axis=1) != targets).mean())
    return mean_loss, error_rate


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def backward(model, cache: BatchCache, targets: np.ndarray, logits: np.ndarray) -> Gradient:
    """Mean gradient of the softmax cross-entropy over the batch.

    Entries at masked positions are zeroed: pruned coordinates are outside
    the optimization problem entirely.
    """
    if cache.params_version != model.params_version:
        raise StaleCacheError("cache was built for different parameters")
    if cache.consumed:
        raise StaleCacheError("cache already consumed by a backward pass")
    cache.consumed = True

    n = cache.batch_size
    d_out = _softmax(logits)
    d_out[np.arange(len(targets)), targets] -= 1.0
    d_out /= n

    grad = model.new_gradient()
    param_views = model.masked_param_views()
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        d_out, d_params = layer.backward(d_out, cache.layer_caches[i], param_views[i])
        for view, d_p in zip(grad.views[i], d_params):
            view[...] = d_p
    grad.flat *= model.mask
    if not np.all(np.isfinite(grad.flat)):
        raise NumericOverflow("non-finite gradient")
    return grad


def batch_gradient(model, inputs, targets):
    """forward + loss + backward in one call; returns (loss, error, Gradient)."""
    logits, cache = forward(model, inputs)
    loss, err = loss_and_error(logits, targets)
    grad = backward(model, cache, targets, logits)
    return loss, err, grad


def full_gradient(model, inputs, labels, chunk: int = 1024) -> Gradient:
    """Exact mean gradient over an entire data set.

    Chunked so large sets do not blow up the im2col buffers; the weighted
    chunk mean equals the one-shot mean exactly (linearity).
    """
    n = len(labels)
    if n == 0:
        raise ConfigError("empty dataset")
    total = model.new_gradient()
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        _, _, g = batch_gradient(model, inputs[start:stop], labels[start:stop])
        total.flat += g.flat * (stop - start)
    total.flat /= n
    return total
