"""The multi-task sequence model: a temporal-convolution encoder feeding a
word head (average pooling + linear map) and a viseme head (18 prototype
rows scored through temporal attention fusion).

Forward and backward run over zero-padded (B, T, D) blocks with explicit
length masks; padded positions are hard-zeroed between layers so results
per sample are independent of how much padding a batch happens to carry.
All gradients are analytic and covered by the finite-difference suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .numeric import NUM_VISEME_LABELS, Parameter, ShapeError, log_softmax, sigmoid, softmax
from .tafm import TafmBatchCache, TafmConfig, tafm_backward_batch, tafm_forward_batch


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    word_classes: int
    hidden_dim: int = 24
    encoder_layers: int = 2
    kernel_width: int = 5
    tafm: TafmConfig = field(default_factory=TafmConfig)
    beta: float = 1.0               # auxiliary-loss weight
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.2        # Beta(a, a) concentration; 0 disables
    input_scale: float | None = None  # None -> sqrt(input_dim)

    def __post_init__(self):
        checks = [
            (self.input_dim >= 1, "input_dim must be >= 1"),
            (self.word_classes >= 2, "word_classes must be >= 2"),
            (self.hidden_dim >= 1, "hidden_dim must be >= 1"),
            (self.encoder_layers >= 1, "encoder_layers must be >= 1"),
            (self.kernel_width >= 1 and self.kernel_width % 2 == 1,
             "kernel_width must be odd so same-length padding is symmetric"),
            (self.beta >= 0, "beta must be >= 0"),
            (0 <= self.label_smoothing < 1, "label_smoothing must be in [0, 1)"),
            (self.mixup_alpha >= 0, "mixup_alpha must be >= 0"),
            (self.input_scale is None or self.input_scale > 0, "input_scale must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def effective_input_scale(self) -> float:
        # Unit-norm input frames carry per-coordinate std of 1/sqrt(D_in).
        # Rescaling by 8*sqrt(D_in) puts initial logits near unit scale, so
        # the reference learning rate makes progress within desk-scale step
        # budgets instead of spending them growing head magnitudes.
        return 8.0 * float(np.sqrt(self.input_dim)) if self.input_scale is None else self.input_scale

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "word_classes": self.word_classes,
            "hidden_dim": self.hidden_dim,
            "encoder_layers": self.encoder_layers,
            "kernel_width": self.kernel_width,
            "tafm": {"gamma": self.tafm.gamma, "lambda": self.tafm.lam},
            "beta": self.beta,
            "label_smoothing": self.label_smoothing,
            "mixup_alpha": self.mixup_alpha,
            "input_scale": self.input_scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        tafm_data = dict(data.pop("tafm", {}))
        known = {"gamma", "lambda"}
        if set(tafm_data) - known:
            raise ConfigError(f"unknown tafm config keys: {sorted(set(tafm_data) - known)}")
        gamma = tafm_data.get("gamma")
        tafm = TafmConfig(
            gamma=None if gamma in (None, "inf") else float(gamma),
            lam=float(tafm_data.get("lambda", 0.1)),
        )
        try:
            return cls(tafm=tafm, **data)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None


class ModelState:
    """Named parameter set: encoder kernels/biases plus the two heads."""

    def __init__(self, parameters: dict[str, Parameter]):
        self.parameters = parameters

    def __getitem__(self, name: str) -> Parameter:
        return self.parameters[name]

    def ordered(self) -> list[Parameter]:
        return [self.parameters[name] for name in sorted(self.parameters)]

    def reset_grads(self) -> None:
        for param in self.parameters.values():
            param.reset_grad()


def init_model(config: ModelConfig, rng: np.random.Generator) -> ModelState:
    """Zero-mean uniform init scaled by 1/sqrt(fan-in); viseme prototype
    rows are re-drawn if they come out degenerate."""
    parameters: dict[str, Parameter] = {}
    in_dim = config.input_dim
    for layer in range(config.encoder_layers):
        fan_in = in_dim * config.kernel_width
        limit = 1.0 / np.sqrt(fan_in)
        kernel = rng.uniform(-limit, limit, size=(config.hidden_dim, in_dim, config.kernel_width))
        bias = rng.uniform(-limit, limit, size=config.hidden_dim)
        parameters[f"encoder.{layer}.kernel"] = Parameter(f"encoder.{layer}.kernel", kernel)
        parameters[f"encoder.{layer}.bias"] = Parameter(f"encoder.{layer}.bias", bias)
        in_dim = config.hidden_dim
    limit = 1.0 / np.sqrt(config.hidden_dim)
    parameters["word_head.weight"] = Parameter(
        "word_head.weight", rng.uniform(-limit, limit, size=(config.word_classes, config.hidden_dim))
    )
    viseme = rng.uniform(-limit, limit, size=(NUM_VISEME_LABELS, config.hidden_dim))
    for row in range(NUM_VISEME_LABELS):
        while np.linalg.norm(viseme[row]) < 1e-6:
            viseme[row] = rng.uniform(-limit, limit, size=config.hidden_dim)
    parameters["viseme_head.weight"] = Parameter("viseme_head.weight", viseme)
    return ModelState(parameters)


def lengths_to_mask(lengths: np.ndarray, padded_length: int) -> np.ndarray:
    return (np.arange(padded_length)[None, :] < lengths[:, None]).astype(np.float64)


def _im2col(x: np.ndarray, K: int) -> np.ndarray:
    """Stack the K shifted views of a zero-padded (B, T, D) block into a
    contiguous (B*T, K*D) matrix so the convolution is a single GEMM."""
    B, T, D = x.shape
    pad = (K - 1) // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    columns = np.empty((B, T, K, D))
    for k in range(K):
        columns[:, :, k, :] = padded[:, k:k + T, :]
    return columns.reshape(B * T, K * D)


def conv1d_same(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, columns: np.ndarray | None = None
) -> np.ndarray:
    """Temporal convolution with same-length zero padding.

    x: (B, T, D_in), kernel: (D_out, D_in, K) -> (B, T, D_out).
    """
    B, T, _ = x.shape
    D_out, D_in, K = kernel.shape
    if columns is None:
        columns = _im2col(x, K)
    weight = kernel.transpose(2, 1, 0).reshape(K * D_in, D_out)
    return (columns @ weight).reshape(B, T, D_out) + bias


def conv1d_same_backward(
    x: np.ndarray, kernel: np.ndarray, dout: np.ndarray, columns: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_same: returns (dx, dkernel, dbias)."""
    B, T, D_in = x.shape
    D_out, _, K = kernel.shape
    pad = (K - 1) // 2
    if columns is None:
        columns = _im2col(x, K)
    dout_flat = np.ascontiguousarray(dout).reshape(B * T, D_out)

    dweight = columns.T @ dout_flat                      # (K*D_in, D_out)
    dkernel = dweight.reshape(K, D_in, D_out).transpose(2, 1, 0)
    dbias = dout_flat.sum(axis=0)

    weight = kernel.transpose(2, 1, 0).reshape(K * D_in, D_out)
    dcolumns = (dout_flat @ weight.T).reshape(B, T, K, D_in)
    dpadded = np.zeros((B, T + 2 * pad, D_in))
    for k in range(K):
        dpadded[:, k:k + T, :] += dcolumns[:, :, k, :]
    return dpadded[:, pad:pad + T, :], dkernel, dbias


@dataclass
class ForwardCache:
    features: np.ndarray            # (B, T, D_in) zero-padded input
    lengths: np.ndarray             # (B,)
    mask: np.ndarray                # (B, T)
    layer_inputs: list[np.ndarray]  # input to each encoder layer
    layer_columns: list[np.ndarray]  # im2col form of each layer input
    pre_activations: list[np.ndarray]
    embeddings: np.ndarray          # (B, T, D) masked encoder output
    z: np.ndarray                   # (B, D) masked mean embedding
    word_logits: np.ndarray         # (B, C_w)
    tafm: TafmBatchCache            # viseme-head internals


def model_forward_batch(
    state: ModelState, config: ModelConfig, features: np.ndarray, lengths: np.ndarray
) -> ForwardCache:
    """Encoder -> masked mean -> word logits, and encoder -> TAFM -> viseme
    logits.  ``features`` must be zero at padded positions."""
    features = np.asarray(features, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if features.ndim != 3 or features.shape[2] != config.input_dim:
        raise ShapeError(f"expected (B, T, {config.input_dim}) features, got {features.shape}")
    if np.any(lengths < 1) or np.any(lengths > features.shape[1]):
        raise ShapeError("sequence lengths must lie in [1, padded length]")
    mask = lengths_to_mask(lengths, features.shape[1])

    # Rectifier between layers only: the last layer stays linear so frame
    # embeddings keep full sign range for the cosine attention (an all-zero
    # rectified frame would be a degenerate cosine input).
    current = features * config.effective_input_scale
    layer_inputs, layer_columns, pre_activations = [], [], []
    for layer in range(config.encoder_layers):
        kernel = state[f"encoder.{layer}.kernel"].value
        bias = state[f"encoder.{layer}.bias"].value
        layer_inputs.append(current)
        columns = _im2col(current, config.kernel_width)
        layer_columns.append(columns)
        pre = conv1d_same(current, kernel, bias, columns=columns)
        pre_activations.append(pre)
        if layer < config.encoder_layers - 1:
            current = np.maximum(pre, 0.0) * mask[:, :, None]
        else:
            current = pre * mask[:, :, None]

    z = current.sum(axis=1) / lengths[:, None]
    word_logits = z @ state["word_head.weight"].value.T
    tafm_cache = tafm_forward_batch(current, lengths, state["viseme_head.weight"].value, config.tafm)
    return ForwardCache(
        features=features, lengths=lengths, mask=mask,
        layer_inputs=layer_inputs, layer_columns=layer_columns,
        pre_activations=pre_activations,
        embeddings=current, z=z, word_logits=word_logits, tafm=tafm_cache,
    )


def model_backward_batch(
    state: ModelState,
    config: ModelConfig,
    cache: ForwardCache,
    dword_logits: np.ndarray,
    dviseme_logits: np.ndarray,
) -> np.ndarray:
    """Accumulate parameter gradients; returns the input-feature gradient."""
    word_weight = state["word_head.weight"]
    dz = dword_logits @ word_weight.value
    word_weight.grad += dword_logits.T @ cache.z

    dh, dviseme_weight = tafm_backward_batch(
        cache.embeddings, state["viseme_head.weight"].value, config.tafm, cache.tafm, dviseme_logits
    )
    state["viseme_head.weight"].grad += dviseme_weight
    dh = dh + (dz / cache.lengths[:, None])[:, None, :] * cache.mask[:, :, None]

    for layer in reversed(range(config.encoder_layers)):
        pre = cache.pre_activations[layer]
        if layer < config.encoder_layers - 1:
            dpre = dh * (pre > 0) * cache.mask[:, :, None]
        else:
            dpre = dh * cache.mask[:, :, None]
        kernel = state[f"encoder.{layer}.kernel"]
        dh, dkernel, dbias = conv1d_same_backward(
            cache.layer_inputs[layer], kernel.value, dpre, columns=cache.layer_columns[layer]
        )
        kernel.grad += dkernel
        state[f"encoder.{layer}.bias"].grad += dbias
    return dh * config.effective_input_scale


def model_forward(
    state: ModelState, config: ModelConfig, features: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-sequence forward: (word logits, viseme logits, embeddings)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected a (T, D_in) sequence, got shape {features.shape}")
    cache = model_forward_batch(
        state, config, features[None, :, :], np.array([features.shape[0]], dtype=np.int64)
    )
    return cache.word_logits[0], cache.tafm.logits[0], cache.embeddings[0]


# ---------------------------------------------------------------------------
# Losses over batches (means of the per-sample scalar forms).


def word_loss_batch(logits: np.ndarray, soft_targets: np.ndarray, smoothing: float) -> tuple[float, np.ndarray]:
    """Mean smoothed cross entropy and its logit gradient over a batch."""
    B, C = logits.shape
    smoothed = (1.0 - smoothing) * soft_targets + smoothing / C
    loss = float(np.mean(-np.sum(smoothed * log_softmax(logits), axis=1)))
    grad = (softmax(logits) - smoothed) / B
    return loss, grad


def viseme_loss_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean (over batch and the 18 labels) stable sigmoid BCE and gradient."""
    B = logits.shape[0]
    per_label = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    loss = float(np.mean(np.mean(per_label, axis=1)))
    grad = (sigmoid(logits) - targets) / (NUM_VISEME_LABELS * B)
    return loss, grad


def total_loss(
    word_logits, viseme_logits, word_target, viseme_target, config: ModelConfig
) -> float:
    """Single-sample combined objective: smoothed word CE + beta * viseme BCE."""
    from .numeric import cross_entropy_smoothed, multilabel_bce

    word = cross_entropy_smoothed(word_logits, word_target, config.label_smoothing)
    viseme = multilabel_bce(viseme_logits, viseme_target)
    return word + config.beta * viseme
