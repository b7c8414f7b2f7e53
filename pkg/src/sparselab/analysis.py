"""Theory-facing measurements.

* fit_scaling / predict_steps: least-squares fit of the steps-to-result
  law K(B) = c1/B + c2 (same functional form for fixed and decaying
  learning-rate schedules, different constant labels).
* estimate_lipschitz / trace_smoothness: Hessian-free local smoothness
  estimate along the realized update direction, max over a grid of
  fractional steps, with the expected gradient taken over the entire
  training set.
* estimate_beta: single-sample gradient variance at (pruned)
  initialization; the batch-B variance bound is then beta / B.
* estimate_delta: twice the empirical optimality gap from a loss history.
* ratio_report: sparse/dense decomposition delta * beta * L, which must
  multiply out to the ratio of fitted c1 constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .exceptions import ConfigError, DegenerateStepError, InsufficientDataError
from .harness import (StudyPoint, Workload, prune_at_init, resolve_dataset,
                      run_trial, _shaped)
from .models import build_model

FIT_FORMS = ("fixed-lr", "decaying-lr")


@dataclass(frozen=True)
class ScalingFit:
    form: str
    c1: float
    c2: float
    residual: float               # RMS relative error over the fitted points
    points: tuple                 # ((B, K), ...) actually used

    def constant_labels(self):
        return ("c1", "c2") if self.form == "fixed-lr" else ("c1_tilde", "c2_tilde")


@dataclass
class TheoryParams:
    """Constants of the convergence bound for one (workload, sparsity)."""
    L: float
    beta: float
    delta: float
    mu: float = 1.0
    epsilon: float | None = None
    M: float | None = None        # beta / B at the batch size of interest
    M_G: float | None = None      # second-moment slope; only M_G >= mu^2 is used
    H: float | None = None        # sum of squared rates, decaying schedules


@dataclass
class SmoothnessTrace:
    entries: list                 # (step, L_hat or None)
    losses: list                  # (step, full-training-set loss)
    stride: int
    point: StudyPoint
    metaparams: dict = field(default_factory=dict)

    @property
    def average(self) -> float:
        values = [v for _, v in self.entries if v is not None]
        if not values:
            raise DegenerateStepError("no valid smoothness samples in trace")
        return float(np.mean(values))


# ---------------------------------------------------------------------------
# Scaling-law fit
# ---------------------------------------------------------------------------

def fit_scaling(points, form: str = "fixed-lr") -> ScalingFit:
    """Least squares for K = c1/B + c2, linear in the coefficients.

    Negative coefficients are clamped to zero and the other refit, which
    only triggers when the data contradicts the model; the reported
    residual then exposes the mismatch.
    """
    if form not in FIT_FORMS:
        raise ConfigError(f"unknown fit form {form!r}")
    pts = [(float(b), float(k)) for b, k in points]
    if len({b for b, _ in pts}) < 2:
        raise InsufficientDataError("need measurements at >= 2 distinct batch sizes")
    if any(k <= 0 for _, k in pts):
        raise ConfigError("steps-to-result values must be positive")

    b = np.array([p[0] for p in pts])
    k = np.array([p[1] for p in pts])
    x = 1.0 / b
    design = np.column_stack([x, np.ones_like(x)])
    (c1, c2), *_ = np.linalg.lstsq(design, k, rcond=None)

    if c1 < 0:
        c1, c2 = 0.0, float(k.mean())
    elif c2 < 0:
        c2, c1 = 0.0, float((k * x).sum() / (x * x).sum())

    pred = c1 * x + c2
    residual = float(np.sqrt(np.mean(((pred - k) / k) ** 2)))
    return ScalingFit(form, float(c1), float(c2), residual, tuple(pts))


def predict_steps(fit: ScalingFit, batch_size: float) -> float:
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    return fit.c1 / batch_size + fit.c2


# ---------------------------------------------------------------------------
# Convergence-bound playback
# ---------------------------------------------------------------------------

def convergence_bound(eta_bar: float, L: float, M: float, mu: float,
                      num_steps: int, f_start: float, f_floor: float) -> float:
    """Upper bound on the average squared gradient norm over the first
    num_steps iterations of fixed-rate SGD (requires eta_bar <= mu/(L*M_G))."""
    if min(eta_bar, L, mu, num_steps) <= 0 or M < 0:
        raise ConfigError("bound constants must be positive (M >= 0)")
    return eta_bar * L * M / mu + 2.0 * (f_start - f_floor) / (num_steps * mu * eta_bar)


# ---------------------------------------------------------------------------
# Local Lipschitz estimation
# ---------------------------------------------------------------------------

def estimate_lipschitz(grad_fn, w_k: np.ndarray, w_k1: np.ndarray,
                       delta: float = 0.1) -> float:
    """Max difference quotient of grad_fn along d = w_{k+1} - w_k.

    Candidates gamma run over {delta, 2*delta, ..., 1}: round(1/delta)
    gradient evaluations beyond the base point.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    steps = round(1.0 / delta)
    if abs(steps * delta - 1.0) > 1e-9:
        raise ConfigError("1/delta must be an integer")
    d = w_k1 - w_k
    d_norm = float(np.linalg.norm(d))
    if d_norm == 0.0:
        raise DegenerateStepError("zero parameter displacement")
    g0 = np.asarray(grad_fn(w_k))
    best = 0.0
    for i in range(1, steps + 1):
        gamma = i * delta
        g = np.asarray(grad_fn(w_k + gamma * d))
        quotient = float(np.linalg.norm(g - g0)) / (gamma * d_norm)
        best = max(best, quotient)
    return best


class _SnapshotHook:
    """Captures (w_k, w_{k+1}) around every stride-th update."""

    def __init__(self, stride: int, limit: int):
        self.stride = stride
        self.limit = limit
        self._held = None
        self.pairs = []           # (k, w_k, w_{k+1})

    def __call__(self, model, k: int):
        if k > 0 and (k - 1) % self.stride == 0 and (k - 1) < self.limit:
            self.pairs.append((k - 1, self._held, model.params.copy()))
        if k % self.stride == 0 and k < self.limit:
            self._held = model.params.copy()


def trace_smoothness(workload: Workload, point: StudyPoint, metaparams: dict,
                     stride: int = 100, num_steps: int = 2000,
                     delta: float = 0.1, seed: int = 0,
                     data_root: str | None = None) -> SmoothnessTrace:
    """Train for a fixed number of steps, estimating the local Lipschitz
    constant every `stride` steps (at k = 0, stride, 2*stride, ...).

    Every gradient in the estimate is the exact mean over the whole
    training split. The trace also records the full-training-set loss at
    each measured step, which feeds the optimality-gap estimate.
    """
    fixed = replace(workload, goal_error=0.0, max_steps=num_steps,
                    eval_interval=num_steps + 1)
    hook = _SnapshotHook(stride, num_steps)
    run_trial(fixed, point, metaparams, seed, data_root=data_root, step_hook=hook)

    train, _ = resolve_dataset(workload, data_root)
    train_x = _shaped(train.inputs, workload.model_spec)

    # Rebuild the trial's pruning deterministically so the probe model
    # evaluates the same masked objective the trajectory was trained on.
    probe = prune_at_init(build_model(workload.model_spec), train,
                          point.sparsity, workload.data_seed)

    def grad_at(w):
        probe.set_params(w)
        return nn.full_gradient(probe, train_x, train.labels).flat

    def loss_at(w):
        probe.set_params(w)
        logits, _ = nn.forward(probe, train_x)
        loss, _ = nn.loss_and_error(logits, train.labels)
        return loss

    entries, losses = [], []
    for k, w_k, w_k1 in hook.pairs:
        # Masked coordinates are zero in both snapshots, so the probe model
        # sees the pruned objective without re-applying the mask.
        losses.append((k, loss_at(w_k)))
        try:
            entries.append((k, estimate_lipschitz(grad_at, w_k, w_k1, delta)))
        except DegenerateStepError:
            entries.append((k, None))
    return SmoothnessTrace(entries, losses, stride, point, dict(metaparams))


# ---------------------------------------------------------------------------
# Variance and optimality-gap estimates
# ---------------------------------------------------------------------------

def estimate_beta(model, inputs, labels) -> float:
    """Mean squared deviation of single-sample gradients from the full
    gradient: the variance bound at batch size 1."""
    n = len(labels)
    if n == 0:
        raise ConfigError("empty dataset")
    mean_grad = nn.full_gradient(model, inputs, labels).flat
    total = 0.0
    for i in range(n):
        _, _, g = nn.batch_gradient(model, inputs[i:i + 1], labels[i:i + 1])
        total += float(np.sum(g.flat * g.flat))
    # clamp: the identity E||g||^2 - ||g_mean||^2 can go epsilon-negative
    return max(0.0, total / n - float(np.sum(mean_grad * mean_grad)))


def estimate_delta(loss_history) -> float:
    """Twice the empirical optimality gap: 2 * (first loss - min loss).

    Accepts plain losses or (step, loss) pairs; the minimum achieved loss
    stands in for the unknowable lower bound.
    """
    history = list(loss_history)
    if not history:
        raise ConfigError("empty loss history")
    if isinstance(history[0], (tuple, list)) and len(history[0]) == 2:
        history = [v for _, v in history]
    values = [float(v) for v in history]
    return 2.0 * (values[0] - min(values))


def ratio_report(sparse: TheoryParams, dense: TheoryParams) -> dict:
    """Sparse/dense ratios of the c1 ingredients.

    mu and the convergence degree cancel between matched workloads, so
    c1_ratio = delta_ratio * beta_ratio * L_ratio exactly. A ratio above
    one attributes the sparse-training slowdown to these constants, with
    the smoothness term typically dominant.
    """
    for name, value in (("delta", dense.delta), ("beta", dense.beta), ("L", dense.L)):
        if value == 0:
            raise ZeroDivisionError(f"dense {name} is zero; ratios are undefined")
    delta_ratio = sparse.delta / dense.delta
    beta_ratio = sparse.beta / dense.beta
    l_ratio = sparse.L / dense.L
    c1_ratio = delta_ratio * beta_ratio * l_ratio
    return {
        "delta_ratio": delta_ratio,
        "beta_ratio": beta_ratio,
        "L_ratio": l_ratio,
        "c1_ratio": c1_ratio,
        "slowdown_explained": c1_ratio > 1.0,
    }
