"""Temporal attention fusion: class-prototype cosine attention over frames,
attentive embeddings, and fusion with the mean embedding.

Each class prototype is the matching row of the classifier weight matrix.
Per class i and frame j the attention weight is a softmax over frames of
``scale * cos(frame_j, prototype_i)``; in the infinite-scale limit the
softmax collapses to exact argmax selection (global max pooling), which is
implemented as selection rather than a large-scale softmax so the limit is
exact and overflow-free.

Single-sequence functions implement the contracts; the ``*_batch`` variants
carry the same arithmetic over padded (B, T, D) blocks for the trainer and
treat padding frames as absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numeric import DEGENERATE_NORM, DegenerateVectorError, ShapeError, as_array


@dataclass(frozen=True)
class TafmConfig:
    """Attention scale and fusion weight.

    ``gamma=None`` selects the max-pooling limit; a finite value must be
    positive.  ``lam`` weights the attentive embedding in the fusion
    ``fused_i = mean + lam * attentive_i``.
    """

    gamma: float | None = None
    lam: float = 0.1

    def __post_init__(self):
        if self.gamma is not None and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"finite gamma must be positive, got {self.gamma}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lam must be finite and >= 0, got {self.lam}")

    @property
    def infinite(self) -> bool:
        return self.gamma is None


@dataclass
class TafmOutput:
    alpha: np.ndarray       # (C, T) attention, each row a distribution over frames
    z: np.ndarray           # (D,) mean embedding
    z_tilde: np.ndarray     # (C, D) attentive embeddings
    fused: np.ndarray       # (C, D) per-class fused features
    logits: np.ndarray      # (C,)


def _row_norms(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1)
    bad = np.nonzero(norms < DEGENERATE_NORM)[0]
    if bad.size:
        raise DegenerateVectorError(f"{what} row {int(bad[0])} has near-zero norm")
    return norms


def attention_scores(X, W, config: TafmConfig) -> np.ndarray:
    """Per-class attention over frames, shape (C, T).

    Finite scale: row-wise softmax of ``gamma * cos``.  Infinite scale:
    exact one-hot at the argmax cosine, ties broken toward the earliest
    frame.
    """
    X = as_array(X, "X")
    W = as_array(W, "W")
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ShapeError(f"need (T, D) frames and (C, D) prototypes, got {X.shape} and {W.shape}")
    if X.shape[0] < 1:
        raise ShapeError("need at least one frame")
    cos = _cosine_matrix(X, W)
    if config.infinite:
        alpha = np.zeros_like(cos)
        alpha[np.arange(cos.shape[0]), np.argmax(cos, axis=1)] = 1.0
        return alpha
    scores = config.gamma * cos
    shifted = scores - scores.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def _cosine_matrix(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """cos(X_j, W_i) arranged as (C, T)."""
    frame_norms = _row_norms(X, "frame")
    proto_norms = _row_norms(W, "prototype")
    cos = (W @ X.T) / (proto_norms[:, None] * frame_norms[None, :])
    return np.clip(cos, -1.0, 1.0)


def attentive_embeddings(X, alpha) -> np.ndarray:
    """Attention-weighted frame sums, one (D,) embedding per class."""
    X = as_array(X, "X")
    alpha = as_array(alpha, "alpha")
    if alpha.ndim != 2 or X.ndim != 2 or alpha.shape[1] != X.shape[0]:
        raise ShapeError(f"alpha {alpha.shape} does not match frames {X.shape}")
    return alpha @ X


def fuse_features(z, z_tilde, lam: float) -> np.ndarray:
    """fused_i = z + lam * z_tilde_i for every class i."""
    z = as_array(z, "z")
    z_tilde = as_array(z_tilde, "z_tilde")
    if lam < 0:
        raise ConfigError(f"fusion weight must be >= 0, got {lam}")
    if z_tilde.ndim != 2 or z.shape != (z_tilde.shape[1],):
        raise ShapeError(f"z {z.shape} does not match z_tilde {z_tilde.shape}")
    return z[None, :] + lam * z_tilde


def class_logits(fused, W) -> np.ndarray:
    """logit_i = W_i . fused_i (each class scored against its own prototype)."""
    fused = as_array(fused, "fused")
    W = as_array(W, "W")
    if fused.shape != W.shape:
        raise ShapeError(f"fused {fused.shape} does not match prototypes {W.shape}")
    return np.einsum("cd,cd->c", W, fused)


def mean_pool_logits(z, W) -> np.ndarray:
    """Plain pooled linear head: every class scores the shared mean embedding.

    Identical, entry for entry, to the full fused path at ``lam = 0``.
    """
    z = as_array(z, "z")
    W = as_array(W, "W")
    return class_logits(np.broadcast_to(z, W.shape), W)


def tafm_forward(X, W, config: TafmConfig) -> TafmOutput:
    """Attention, embeddings, fusion, and per-class logits in one pass."""
    X = as_array(X, "X")
    W = as_array(W, "W")
    alpha = attention_scores(X, W, config)
    z = np.sum(X, axis=0) / X.shape[0]
    z_tilde = attentive_embeddings(X, alpha)
    fused = fuse_features(z, z_tilde, config.lam)
    logits = class_logits(fused, W)
    return TafmOutput(alpha=alpha, z=z, z_tilde=z_tilde, fused=fused, logits=logits)


def tafm_backward(X, W, config: TafmConfig, out: TafmOutput, dlogits) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``dlogits . logits`` with respect to X and W.

    In the max-pooling limit the argmax selection is treated as locally
    constant, so gradient flows only through the selected frames (correct
    away from cosine ties).
    """
    X = as_array(X, "X")
    W = as_array(W, "W")
    g = as_array(dlogits, "dlogits")
    T = X.shape[0]

    dfused = g[:, None] * W
    dW = g[:, None] * out.fused
    dz = dfused.sum(axis=0)
    dz_tilde = config.lam * dfused

    dX = out.alpha.T @ dz_tilde
    if not config.infinite:
        dalpha = dz_tilde @ X.T
        weighted = (out.alpha * dalpha).sum(axis=1, keepdims=True)
        dcos = config.gamma * out.alpha * (dalpha - weighted)
        frame_norms = np.linalg.norm(X, axis=1)
        proto_norms = np.linalg.norm(W, axis=1)
        cos = (W @ X.T) / (proto_norms[:, None] * frame_norms[None, :])
        scaled = dcos / (proto_norms[:, None] * frame_norms[None, :])
        dX += scaled.T @ W - X * ((dcos * cos).sum(axis=0) / frame_norms**2)[:, None]
        dW += scaled @ X - W * ((dcos * cos).sum(axis=1) / proto_norms**2)[:, None]
    dX += dz[None, :] / T
    return dX, dW


# ---------------------------------------------------------------------------
# Batched variants over zero-padded (B, T, D) blocks.


@dataclass
class TafmBatchCache:
    alpha: np.ndarray        # (B, C, T)
    z: np.ndarray            # (B, D)
    z_tilde: np.ndarray      # (B, C, D)
    fused: np.ndarray        # (B, C, D)
    logits: np.ndarray       # (B, C)
    cos: np.ndarray          # (B, C, T), zero at padding
    frame_norms: np.ndarray  # (B, T), 1.0 at padding
    proto_norms: np.ndarray  # (C,)
    mask: np.ndarray         # (B, T) float 0/1
    lengths: np.ndarray      # (B,)


def tafm_forward_batch(H, lengths, W, config: TafmConfig) -> TafmBatchCache:
    """Batched forward over padded sequences; padding frames are ignored.

    ``H`` must be exactly zero at padded positions (the encoder masks them).
    """
    H = np.asarray(H, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    B, T, _ = H.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)

    frame_norms = np.linalg.norm(H, axis=2)
    if np.any((frame_norms < DEGENERATE_NORM) & (mask > 0)):
        b, t = np.argwhere((frame_norms < DEGENERATE_NORM) & (mask > 0))[0]
        raise DegenerateVectorError(f"frame {int(t)} of sample {int(b)} has near-zero norm")
    proto_norms = _row_norms(W, "prototype")
    safe_norms = np.where(mask > 0, frame_norms, 1.0)

    dots = (H.reshape(B * T, -1) @ W.T).reshape(B, T, -1).transpose(0, 2, 1)
    cos = dots / (safe_norms[:, None, :] * proto_norms[None, :, None])
    cos = np.clip(cos, -1.0, 1.0) * mask[:, None, :]

    if config.infinite:
        ranked = np.where(mask[:, None, :] > 0, cos, -np.inf)
        alpha = np.zeros_like(cos)
        B_idx, C_idx = np.indices(alpha.shape[:2])
        alpha[B_idx, C_idx, np.argmax(ranked, axis=2)] = 1.0
    else:
        scores = np.where(mask[:, None, :] > 0, config.gamma * cos, -np.inf)
        shifted = scores - scores.max(axis=2, keepdims=True)
        exps = np.exp(shifted)
        alpha = exps / exps.sum(axis=2, keepdims=True)

    z = H.sum(axis=1) / lengths[:, None]
    z_tilde = alpha @ H
    fused = z[:, None, :] + config.lam * z_tilde
    # einsum keeps the per-class reduction order identical to class_logits,
    # so the lam = 0 path stays bit-equal to the pooled linear head.
    logits = np.einsum("cd,bcd->bc", W, fused)
    return TafmBatchCache(
        alpha=alpha, z=z, z_tilde=z_tilde, fused=fused, logits=logits,
        cos=cos, frame_norms=safe_norms, proto_norms=proto_norms,
        mask=mask, lengths=lengths,
    )


def tafm_backward_batch(H, W, config: TafmConfig, cache: TafmBatchCache, dlogits):
    """Batched mirror of :func:`tafm_backward`; returns (dH, dW)."""
    H = np.asarray(H, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    g = np.asarray(dlogits, dtype=np.float64)

    B, T, _ = H.shape
    dfused = g[:, :, None] * W[None, :, :]
    dW = (g[:, :, None] * cache.fused).sum(axis=0)
    dz = dfused.sum(axis=1)
    dz_tilde = config.lam * dfused

    alpha_t = cache.alpha.transpose(0, 2, 1)            # (B, T, C)
    dH = np.matmul(alpha_t, dz_tilde)
    if not config.infinite:
        dalpha = np.matmul(dz_tilde, H.transpose(0, 2, 1))
        weighted = (cache.alpha * dalpha).sum(axis=2, keepdims=True)
        dcos = config.gamma * cache.alpha * (dalpha - weighted)
        denom = cache.proto_norms[None, :, None] * cache.frame_norms[:, None, :]
        scaled = dcos / denom                            # (B, C, T)
        scaled_t = np.ascontiguousarray(scaled.transpose(0, 2, 1)).reshape(B * T, -1)
        dH += (scaled_t @ W).reshape(B, T, -1)
        dH -= H * ((dcos * cache.cos).sum(axis=1) / cache.frame_norms**2)[:, :, None]
        dW += np.matmul(scaled, H).sum(axis=0)
        dW -= W * ((dcos * cache.cos).sum(axis=2).sum(axis=0) / cache.proto_norms**2)[:, None]
    dH += (dz / cache.lengths[:, None])[:, None, :] * cache.mask[:, :, None]
    return dH, dW
