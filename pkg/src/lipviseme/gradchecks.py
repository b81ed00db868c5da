"""Named finite-difference checks covering every analytic gradient in the
package, from the loss primitives up through the full multi-task model.

Each check builds a small random instance, fills in analytic gradients,
and compares them against central differences.  ``corrupt`` deliberately
damages one named gradient so detector sanity can be tested.
"""

from __future__ import annotations

import numpy as np

from .model import (
    ModelConfig,
    conv1d_same,
    conv1d_same_backward,
    init_model,
    model_backward_batch,
    model_forward_batch,
    viseme_loss_batch,
    word_loss_batch,
)
from .numeric import (
    NUM_VISEME_LABELS,
    GradCheckReport,
    Parameter,
    cosine_similarity,
    cosine_similarity_grad,
    cross_entropy_smoothed,
    cross_entropy_smoothed_grad,
    grad_check,
    mean_over_time,
    multilabel_bce,
    multilabel_bce_grad,
    softmax,
)
from .tafm import TafmConfig, tafm_backward, tafm_forward

TINY_MODEL = ModelConfig(
    input_dim=3, word_classes=3, hidden_dim=5, encoder_layers=2, kernel_width=3,
    tafm=TafmConfig(gamma=4.0, lam=0.1), beta=1.0, label_smoothing=0.1, mixup_alpha=0.0,
)
TINY_BATCH = 2
TINY_FRAMES = 4


def _entropy_checks(rng, report, tolerance, step, corrupt):
    logits = Parameter("logits", rng.normal(size=6))
    logits.grad[...] = cross_entropy_smoothed_grad(logits.value, 2, 0.1)
    _run(report, "cross_entropy_hard", [logits],
         lambda: cross_entropy_smoothed(logits.value, 2, 0.1), tolerance, step, corrupt)

    soft = softmax(rng.normal(size=6))
    logits2 = Parameter("logits", rng.normal(size=6))
    logits2.grad[...] = cross_entropy_smoothed_grad(logits2.value, soft, 0.05)
    _run(report, "cross_entropy_soft", [logits2],
         lambda: cross_entropy_smoothed(logits2.value, soft, 0.05), tolerance, step, corrupt)

    target = rng.integers(0, 2, size=NUM_VISEME_LABELS).astype(np.float64)
    bce_logits = Parameter("logits", rng.normal(size=NUM_VISEME_LABELS))
    bce_logits.grad[...] = multilabel_bce_grad(bce_logits.value, target)
    _run(report, "multilabel_bce", [bce_logits],
         lambda: multilabel_bce(bce_logits.value, target), tolerance, step, corrupt)


def _similarity_checks(rng, report, tolerance, step, corrupt):
    a = Parameter("a", rng.normal(size=7))
    b = Parameter("b", rng.normal(size=7))
    grad_a, grad_b = cosine_similarity_grad(a.value, b.value)
    a.grad[...] = grad_a
    b.grad[...] = grad_b
    _run(report, "cosine_similarity", [a, b],
         lambda: cosine_similarity(a.value, b.value), tolerance, step, corrupt)

    frames = Parameter("frames", rng.normal(size=(5, 4)))
    direction = rng.normal(size=4)
    frames.grad[...] = np.tile(direction / 5.0, (5, 1))
    _run(report, "mean_over_time", [frames],
         lambda: float(direction @ mean_over_time(frames.value)), tolerance, step, corrupt)

    scores = Parameter("scores", rng.normal(size=6))
    weights = rng.normal(size=6)
    probs = softmax(scores.value)
    scores.grad[...] = probs * (weights - float(weights @ probs))
    _run(report, "softmax", [scores],
         lambda: float(weights @ softmax(scores.value)), tolerance, step, corrupt)


def _tafm_checks(rng, report, tolerance, step, corrupt):
    for label, config in (
        ("tafm_finite", TafmConfig(gamma=4.0, lam=0.1)),
        ("tafm_infinite", TafmConfig(gamma=None, lam=0.1)),
    ):
        frames = Parameter("X", rng.normal(size=(6, 4)))
        prototypes = Parameter("W", rng.normal(size=(3, 4)))
        direction = rng.normal(size=3)

        def value_fn(frames=frames, prototypes=prototypes, config=config, direction=direction):
            return float(direction @ tafm_forward(frames.value, prototypes.value, config).logits)

        out = tafm_forward(frames.value, prototypes.value, config)
        dX, dW = tafm_backward(frames.value, prototypes.value, config, out, direction)
        frames.grad[...] = dX
        prototypes.grad[...] = dW
        _run(report, label, [frames, prototypes], value_fn, tolerance, step, corrupt)


def _encoder_checks(rng, report, tolerance, step, corrupt):
    x = Parameter("input", rng.normal(size=(2, 5, 3)))
    kernel = Parameter("kernel", rng.normal(size=(4, 3, 3)) * 0.5)
    bias = Parameter("bias", rng.normal(size=4) * 0.5)
    weights = rng.normal(size=(2, 5, 4))

    def value_fn():
        return float(np.sum(weights * conv1d_same(x.value, kernel.value, bias.value)))

    dx, dkernel, dbias = conv1d_same_backward(x.value, kernel.value, weights)
    x.grad[...] = dx
    kernel.grad[...] = dkernel
    bias.grad[...] = dbias
    _run(report, "encoder_conv", [x, kernel, bias], value_fn, tolerance, step, corrupt)


def _model_checks(rng, report, tolerance, step, corrupt):
    state = init_model(TINY_MODEL, rng)
    features = rng.normal(size=(TINY_BATCH, TINY_FRAMES, TINY_MODEL.input_dim))
    lengths = np.array([TINY_FRAMES, TINY_FRAMES - 1], dtype=np.int64)
    features[1, TINY_FRAMES - 1:] = 0.0
    word_targets = np.zeros((TINY_BATCH, TINY_MODEL.word_classes))
    word_targets[np.arange(TINY_BATCH), rng.integers(0, TINY_MODEL.word_classes, TINY_BATCH)] = 1.0
    viseme_targets = rng.integers(0, 2, size=(TINY_BATCH, NUM_VISEME_LABELS)).astype(np.float64)

    def value_fn():
        cache = model_forward_batch(state, TINY_MODEL, features, lengths)
        word, _ = word_loss_batch(cache.word_logits, word_targets, TINY_MODEL.label_smoothing)
        viseme, _ = viseme_loss_batch(cache.tafm.logits, viseme_targets)
        return word + TINY_MODEL.beta * viseme

    cache = model_forward_batch(state, TINY_MODEL, features, lengths)
    _, dword = word_loss_batch(cache.word_logits, word_targets, TINY_MODEL.label_smoothing)
    _, dviseme = viseme_loss_batch(cache.tafm.logits, viseme_targets)
    state.reset_grads()
    model_backward_batch(state, TINY_MODEL, cache, dword, TINY_MODEL.beta * dviseme)
    _run(report, "total_loss", state.ordered(), value_fn, tolerance, step, corrupt)


def _run(report, label, parameters, value_fn, tolerance, step, corrupt):
    if corrupt is not None:
        for param in parameters:
            if f"{label}/{param.name}" == corrupt:
                param.grad.reshape(-1)[0] += 1.0
    grad_check(value_fn, parameters, tolerance=tolerance, step=step, report=report, label=label)


def run_gradcheck_suite(
    tolerance: float = 1e-4,
    step: float = 1e-5,
    seed: int = 20240,
    corrupt: str | None = None,
) -> GradCheckReport:
    """All named checks in one report; ``corrupt`` names an entry (for
    example "tafm_finite/X") whose analytic gradient gets damaged first."""
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    _entropy_checks(rng, report, tolerance, step, corrupt)
    _similarity_checks(rng, report, tolerance, step, corrupt)
    _tafm_checks(rng, report, tolerance, step, corrupt)
    _encoder_checks(rng, report, tolerance, step, corrupt)
    _model_checks(rng, report, tolerance, step, corrupt)
    return report
