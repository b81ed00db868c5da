"""Dense float64 numerics for the training core: similarity and loss
primitives with analytic gradients, the adaptive-moment optimizer, the
cosine-annealed learning-rate schedule, and a finite-difference checker
that every analytic gradient in the package is verified against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NUM_VISEME_LABELS = 18
DEGENERATE_NORM = 1e-12


class NumericError(Exception):
    pass


class DegenerateVectorError(NumericError):
    pass


class EmptySequenceError(NumericError):
    pass


class ShapeError(NumericError):
    pass


class OptimizerError(NumericError):
    pass


class ScheduleError(NumericError):
    pass


def as_array(values, name: str = "array") -> np.ndarray:
    out = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name} contains non-finite values")
    return out


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|), clamped into [-1, 1] against rounding.

    Near-zero norms raise :class:`DegenerateVectorError`: a silent 0 would
    corrupt attention scores invisibly.
    """
    a = as_array(a, "a")
    b = as_array(b, "b")
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < DEGENERATE_NORM or norm_b < DEGENERATE_NORM:
        raise DegenerateVectorError(f"degenerate vector in cosine (norms {norm_a:.3g}, {norm_b:.3g})")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def cosine_similarity_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """d cos(a,b) / da and / db (clamp ignored; it only binds at rounding)."""
    a = as_array(a, "a")
    b = as_array(b, "b")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < DEGENERATE_NORM or norm_b < DEGENERATE_NORM:
        raise DegenerateVectorError("degenerate vector in cosine gradient")
    cos = np.dot(a, b) / (norm_a * norm_b)
    grad_a = b / (norm_a * norm_b) - cos * a / (norm_a * norm_a)
    grad_b = a / (norm_a * norm_b) - cos * b / (norm_b * norm_b)
    return grad_a, grad_b


def softmax(scores) -> np.ndarray:
    """Stable softmax along the last axis (max subtraction)."""
    scores = as_array(scores, "scores")
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


def log_softmax(scores) -> np.ndarray:
    scores = as_array(scores, "scores")
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def mean_over_time(frames) -> np.ndarray:
    """Average a (T, D) sequence over its first axis."""
    frames = as_array(frames, "frames")
    if frames.ndim != 2:
        raise ShapeError(f"expected a (T, D) array, got shape {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptySequenceError("cannot average an empty sequence")
    return np.sum(frames, axis=0) / frames.shape[0]


def smoothed_target(target, num_classes: int, smoothing: float) -> np.ndarray:
    """(1 - eps) on the target distribution plus eps/C uniform mass.

    ``target`` is a class index or a full distribution (mixup produces the
    latter).
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    if np.isscalar(target) or getattr(target, "ndim", None) == 0:
        index = int(target)
        if not 0 <= index < num_classes:
            raise IndexError(f"target class {index} out of range [0, {num_classes})")
        dist = np.zeros(num_classes, dtype=np.float64)
        dist[index] = 1.0
    else:
        dist = as_array(target, "target")
        if dist.shape != (num_classes,):
            raise ShapeError(f"soft target must have shape ({num_classes},), got {dist.shape}")
    return (1.0 - smoothing) * dist + smoothing / num_classes


def cross_entropy_smoothed(logits, target, smoothing: float = 0.0) -> float:
    """Label-smoothed cross entropy, log-sum-exp stabilized.

    ``target`` may be a hard class index or a soft distribution; with
    ``smoothing=0`` and a one-hot soft target the two forms agree
    bit-for-bit.
    """
    logits = as_array(logits, "logits")
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ShapeError(f"logits must be a vector of >= 2 classes, got shape {logits.shape}")
    soft = smoothed_target(target, logits.shape[0], smoothing)
    return float(-np.dot(soft, log_softmax(logits)))


def cross_entropy_smoothed_grad(logits, target, smoothing: float = 0.0) -> np.ndarray:
    """d loss / d logits = softmax(logits) - smoothed target."""
    logits = as_array(logits, "logits")
    soft = smoothed_target(target, logits.shape[0], smoothing)
    return softmax(logits) - soft


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    expx = np.exp(x[~positive])
    out[~positive] = expx / (1.0 + expx)
    return out


def multilabel_bce(logits, target) -> float:
    """Mean sigmoid binary cross-entropy over the 18 viseme labels.

    Computed in the stable logit form max(l,0) - l*y + log(1 + exp(-|l|)).
    Targets are 0/1, or in [0, 1] when mixup has softened them.
    """
    logits = as_array(logits, "logits")
    target = as_array(target, "target")
    if logits.shape != (NUM_VISEME_LABELS,) or target.shape != (NUM_VISEME_LABELS,):
        raise ShapeError(
            f"expected {NUM_VISEME_LABELS}-dim logits and target, "
            f"got {logits.shape} and {target.shape}"
        )
    if np.any(target < 0.0) or np.any(target > 1.0):
        raise ValueError("multi-label targets must lie in [0, 1]")
    per_label = np.maximum(logits, 0.0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
    return float(np.mean(per_label))


def multilabel_bce_grad(logits, target) -> np.ndarray:
    """d loss / d logits = (sigmoid(logits) - target) / 18."""
    logits = as_array(logits, "logits")
    target = as_array(target, "target")
    return (sigmoid(logits) - target) / NUM_VISEME_LABELS


@dataclass
class Parameter:
    """Named trainable array with an accumulated gradient of the same shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def reset_grad(self) -> None:
        self.grad.fill(0.0)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def moments(self, param: Parameter) -> tuple[np.ndarray, np.ndarray]:
        if param.name not in self._moments:
            self._moments[param.name] = (np.zeros_like(param.value), np.zeros_like(param.value))
        first, second = self._moments[param.name]
        if first.shape != param.value.shape:
            raise OptimizerError(f"moment shape mismatch for parameter {param.name!r}")
        return first, second


def adam_step(state: AdamState, parameters: list[Parameter], learning_rate: float) -> None:
    """One bias-corrected adaptive-moment update, in place.

    Fails fast on non-finite gradients rather than letting NaNs propagate
    into the moments.
    """
    for param in parameters:
        if not np.all(np.isfinite(param.grad)):
            raise OptimizerError(f"non-finite gradient for parameter {param.name!r}")
    state.step_count += 1
    t = state.step_count
    for param in parameters:
        first, second = state.moments(param)
        np.multiply(first, state.beta1, out=first)
        first += (1.0 - state.beta1) * param.grad
        np.multiply(second, state.beta2, out=second)
        second += (1.0 - state.beta2) * np.square(param.grad)
        first_hat = first / (1.0 - state.beta1**t)
        second_hat = second / (1.0 - state.beta2**t)
        param.value -= learning_rate * first_hat / (np.sqrt(second_hat) + state.epsilon)


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine-annealed learning rate from ``initial_rate`` down to ``minimum_rate``."""

    total_steps: int
    initial_rate: float = 3e-4
    minimum_rate: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ScheduleError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 <= self.minimum_rate <= self.initial_rate:
            raise ScheduleError("need 0 <= minimum_rate <= initial_rate")

    def rate(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ScheduleError(f"step {step} outside [0, {self.total_steps}]")
        cosine = math.cos(math.pi * step / self.total_steps)
        return self.minimum_rate + 0.5 * (self.initial_rate - self.minimum_rate) * (1.0 + cosine)


def cosine_annealed_lr(schedule: CosineSchedule, step: int) -> float:
    return schedule.rate(step)


@dataclass
class GradCheckEntry:
    name: str
    max_relative_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    def add(self, name: str, max_relative_error: float) -> GradCheckEntry:
        entry = GradCheckEntry(name, max_relative_error, max_relative_error < self.tolerance)
        self.entries.append(entry)
        return entry


def grad_check(
    value_fn,
    parameters: list[Parameter],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    report: GradCheckReport | None = None,
    label: str = "",
) -> GradCheckReport:
    """Compare each parameter's analytic ``grad`` against central differences.

    ``value_fn`` re-evaluates the scalar loss at the parameters' current
    values.  The relative error reported per parameter is
    ``|g_analytic - g_numeric|_inf / max(1, |g_numeric|_inf)``.
    """
    if report is None:
        report = GradCheckReport(tolerance=tolerance)
    for param in parameters:
        numeric = np.zeros_like(param.value)
        flat_value = param.value.reshape(-1)
        flat_numeric = numeric.reshape(-1)
        for i in range(flat_value.size):
            original = flat_value[i]
            flat_value[i] = original + step
            upper = float(value_fn())
            flat_value[i] = original - step
            lower = float(value_fn())
            flat_value[i] = original
            if not (math.isfinite(upper) and math.isfinite(lower)):
                raise NumericError(f"non-finite loss while checking {param.name!r}")
            flat_numeric[i] = (upper - lower) / (2.0 * step)
        gap = float(np.max(np.abs(param.grad - numeric))) if numeric.size else 0.0
        scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 0.0)
        name = f"{label}/{param.name}" if label else param.name
        report.add(name, gap / scale)
    return report
