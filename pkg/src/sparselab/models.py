"""Reference architectures at desk scale.

Two families:

* ``simple-mlp``  -- flatten -> affine/relu stack -> affine classifier
* ``cnn-lite``    -- conv3x3 -> relu -> meanpool2x2 -> conv3x3 -> relu
                     -> global meanpool -> affine classifier

All parameters live in one flat float64 vector; each layer's weights are
reshaped views into it. A binary mask of the same length marks pruned
coordinates (1 = kept). ``cnn-lite`` is deliberately the smallest net
exercising conv backprop, not a faithful residual architecture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .exceptions import ConfigError
from .nn import Affine, Conv3x3, Flatten, GlobalMeanPool, Gradient, MeanPool2x2, Relu

ARCHITECTURES = ("simple-mlp", "cnn-lite")
INIT_SCHEMES = ("he-uniform",)


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple
    widths: tuple            # hidden widths (mlp) or channel counts (cnn)
    classes: int
    init: str = "he-uniform"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init!r}")
        if self.classes < 2:
            raise ConfigError("class count must be >= 2")
        if any(w < 1 for w in self.widths):
            raise ConfigError("widths must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls(**json.loads(text))


class Model:
    """Layer stack plus flat parameter vector and sparsity mask."""

    def __init__(self, spec: ModelSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self._slices = []          # per layer: list of (slice, shape)
        offset = 0
        for layer in layers:
            entries = []
            for shape in layer.param_shapes:
                size = int(np.prod(shape))
                entries.append((slice(offset, offset + size), shape))
                offset += size
            self._slices.append(entries)
        self.params = np.zeros(offset)
        self.mask = np.ones(offset)
        self.params_version = 0
        self.pruned = False

    @property
    def param_count(self) -> int:
        return self.params.size

    def bump_version(self):
        self.params_version += 1

    def _views_of(self, buffer: np.ndarray) -> list:
        return [[buffer[s].reshape(shape) for s, shape in entries]
                for entries in self._slices]

    def param_views(self) -> list:
        """Per-layer writable views of the raw parameter vector."""
        return self._views_of(self.params)

    def masked_param_views(self) -> list:
        """Per-layer views of params with pruned coordinates forced to zero."""
        return self._views_of(self.params * self.mask)

    def new_gradient(self) -> Gradient:
        flat = np.zeros(self.param_count)
        return Gradient(flat, self._views_of(flat))

    def set_params(self, values: np.ndarray):
        if values.shape != self.params.shape:
            raise ConfigError("parameter vector length mismatch")
        self.params[...] = values
        self.bump_version()


def _mlp_layers(spec: ModelSpec) -> list:
    d_in = int(np.prod(spec.input_shape))
    layers = []
    if len(spec.input_shape) > 1:
        layers.append(Flatten())
    for width in spec.widths:
        layers.append(Affine(d_in, width))
        layers.append(Relu())
        d_in = width
    layers.append(Affine(d_in, spec.classes))
    return layers


def _cnn_layers(spec: ModelSpec) -> list:
    if len(spec.input_shape) != 3:
        raise ConfigError(
            f"cnn-lite needs (h, w, c) input shape, got {spec.input_shape}")
    h, w, c = spec.input_shape
    if h % 2 or w % 2:
        raise ConfigError("cnn-lite needs even spatial dims for mean-pooling")
    if len(spec.widths) != 2:
        raise ConfigError("cnn-lite takes exactly two channel counts")
    c1, c2 = spec.widths
    return [
        Conv3x3(c, c1), Relu(), MeanPool2x2(),
        Conv3x3(c1, c2), Relu(),
        GlobalMeanPool(),
        Affine(c2, spec.classes),
    ]


def build_model(spec: ModelSpec) -> Model:
    """Deterministic construction: same spec + seed -> identical parameters.

    He-uniform init: weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases
    zero. Mask starts all-ones.
    """
    layers = _mlp_layers(spec) if spec.arch == "simple-mlp" else _cnn_layers(spec)
    model = Model(spec, layers)
    rng = np.random.default_rng(spec.seed)
    for layer, views in zip(model.layers, model.param_views()):
        if not layer.param_shapes:
            continue
        weight, bias = views
        limit = np.sqrt(6.0 / layer.fan_in())
        weight[...] = rng.uniform(-limit, limit, size=weight.shape)
        bias[...] = 0.0
    return model
