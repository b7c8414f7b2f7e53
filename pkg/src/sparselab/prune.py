"""Pruning at initialization by connection sensitivity.

The saliency of coordinate j is |g_j * w_j| normalized to sum to one,
where g is a single mini-batch gradient taken at the untrained
initialization. The mask keeps the top m - floor(s*m) coordinates
globally (no per-layer quota) and is then frozen for the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .nn import batch_gradient


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray        # length-m vector of {0.0, 1.0}
    sparsity: float

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.float64))
        self.bits.setflags(write=False)

    @property
    def kept(self) -> int:
        return int(self.bits.sum())


def connection_sensitivity(model, inputs, targets) -> np.ndarray:
    """Normalized |gradient * weight| saliency at initialization.

    Returns the all-zero vector when every product is zero (e.g. an
    all-zero initialization), rather than dividing by zero.
    """
    if model.pruned or not np.all(model.mask == 1.0):
        raise ConfigError("saliency must be computed on an unpruned model")
    _, _, grad = batch_gradient(model, inputs, targets)
    scores = np.abs(grad.flat * model.params)
    total = scores.sum()
    if total == 0.0:
        return scores
    return scores / total


def topk_mask(saliency: np.ndarray, sparsity: float) -> Mask:
    """Keep the m - floor(s*m) highest-saliency coordinates.

    Ties break toward the lower index (stable sort on descending score),
    so the selection is deterministic even for degenerate saliencies.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ConfigError("sparsity must be in [0, 1)")
    saliency = np.asarray(saliency, dtype=np.float64)
    m = saliency.size
    keep = m - math.floor(sparsity * m)
    order = np.argsort(-saliency, kind="stable")
    bits = np.zeros(m)
    bits[order[:keep]] = 1.0
    return Mask(bits, sparsity)


def apply_mask(model, mask: Mask):
    """Zero the pruned parameters and pin the mask on the model. Idempotent."""
    if mask.bits.size != model.param_count:
        raise ConfigError(
            f"mask length {mask.bits.size} != parameter count {model.param_count}")
    model.mask = mask.bits.copy()
    model.params *= model.mask
    model.pruned = True
    model.bump_version()
    return model
