"""Guidance math over noise-prediction tensors.

Tensors are rank-4 arrays (batch, channel, height, width).  Two ways to
combine a conditional and an unconditional noise prediction are provided:

* ``cfg_guidance`` - the classic linear blend ``w*cond + (1-w)*uncond``
  controlled by a scale parameter ``w``;
* ``in_guidance`` - instance-normalization guidance: the unconditional
  prediction is renormalized with the conditional prediction's per-channel
  statistics, passed through a 1x1 conv, then rescaled and shifted back with
  the unconditional statistics.  It takes no scale parameter at all.

A small cross-attention primitive rounds out the module for attention-based
noise predictors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch, TooFewElements

STATS_EPS = 1e-8


def ensure_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 4:
        raise ShapeMismatch(f"{name} must be rank-4 (N,C,H,W), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeMismatch(f"{name} has a zero-length dim: {t.shape}")
    if not np.isfinite(t).all():
        raise ShapeMismatch(f"{name} contains non-finite values")
    return t


@dataclass(frozen=True)
class ConvParams:
    """A 1x1 convolution: per-pixel channel mixing ``weight @ x + bias``."""

    weight: np.ndarray  # (C, C)
    bias: np.ndarray    # (C,)

    def __post_init__(self):
        w, b = np.asarray(self.weight), np.asarray(self.bias)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeMismatch(f"conv weight must be square, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(f"conv bias shape {b.shape} != ({w.shape[0]},)")

    @classmethod
    def identity(cls, channels: int) -> "ConvParams":
        return cls(weight=np.eye(channels), bias=np.zeros(channels))

    def apply(self, t: np.ndarray) -> np.ndarray:
        if t.shape[1] != self.weight.shape[0]:
            raise ShapeMismatch(
                f"conv is {self.weight.shape[0]}-channel, tensor has {t.shape[1]}")
        out = np.einsum("oc,nchw->nohw", self.weight.astype(t.dtype), t)
        return out + self.bias.astype(t.dtype)[None, :, None, None]


@dataclass(frozen=True)
class ChannelStats:
    """Per-(batch, channel) mean and standard deviation over H*W."""

    mean: np.ndarray  # (N, C)
    std: np.ndarray   # (N, C), sqrt(sample variance + eps), always > 0


def channel_stats(t: np.ndarray, eps: float = STATS_EPS) -> ChannelStats:
    """Spatial statistics per (n, c): mean, and sqrt of the (H*W - 1)-divisor
    variance plus ``eps``."""
    t = ensure_tensor(t)
    n, c, h, w = t.shape
    if h * w < 2:
        raise TooFewElements(f"need H*W >= 2 for a sample variance, got {h}x{w}")
    flat = t.reshape(n, c, h * w)
    mean = flat.mean(axis=2)
    var = flat.var(axis=2, ddof=1)
    return ChannelStats(mean=mean, std=np.sqrt(var + eps))


def _broadcast(stat: np.ndarray) -> np.ndarray:
    return stat[:, :, None, None]


def in_guidance(cond: np.ndarray, uncond: np.ndarray, conv: ConvParams) -> np.ndarray:
    """Instance-normalization guidance.

    Normalize the unconditional prediction with the conditional prediction's
    per-channel mean/std, mix channels through the 1x1 conv, then restore the
    unconditional prediction's own scale and shift:

        sigma_u * conv((uncond - mu_c) / sigma_c) + mu_u

    There is no tunable scale parameter; both statistics come from the
    predictions themselves.
    """
    cond = ensure_tensor(cond, "cond")
    uncond = ensure_tensor(uncond, "uncond")
    if cond.shape != uncond.shape:
        raise ShapeMismatch(f"shape mismatch: {cond.shape} vs {uncond.shape}")
    u_stats = channel_stats(uncond)
    c_stats = channel_stats(cond)
    normalized = (uncond - _broadcast(c_stats.mean)) / _broadcast(c_stats.std)
    mixed = conv.apply(normalized.astype(uncond.dtype))
    return (mixed * _broadcast(u_stats.std) + _broadcast(u_stats.mean)).astype(uncond.dtype)


def cfg_guidance(cond: np.ndarray, uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: ``w*cond + (1-w)*uncond`` elementwise."""
    cond = ensure_tensor(cond, "cond")
    uncond = ensure_tensor(uncond, "uncond")
    if cond.shape != uncond.shape:
        raise ShapeMismatch(f"shape mismatch: {cond.shape} vs {uncond.shape}")
    return (w * cond + (1.0 - w) * uncond).astype(cond.dtype)


@dataclass(frozen=True)
class AttentionProjections:
    """Learned linear maps for queries, keys, and values."""

    w_q: np.ndarray  # (d_model, d)
    w_k: np.ndarray  # (d_text, d)
    w_v: np.ndarray  # (d_text, d_v)


def cross_attention(spatial: np.ndarray, prompt: np.ndarray,
                    proj: AttentionProjections, d: int,
                    return_weights: bool = False):
    """Scaled dot-product attention of spatial features over prompt tokens.

    ``softmax(Q K^T / sqrt(d)) V`` with a row-wise, max-subtracted softmax.
    """
    spatial = np.asarray(spatial)
    prompt = np.asarray(prompt)
    if d <= 0:
        raise DimensionMismatch("head dim must be > 0")
    if spatial.ndim != 2 or prompt.ndim != 2:
        raise DimensionMismatch("spatial and prompt must be matrices")
    if spatial.shape[1] != proj.w_q.shape[0] or prompt.shape[1] != proj.w_k.shape[0] \
            or prompt.shape[1] != proj.w_v.shape[0]:
        raise DimensionMismatch("projection input dims do not match features")
    if proj.w_q.shape[1] != d or proj.w_k.shape[1] != d:
        raise DimensionMismatch("projection output dims do not match head dim")

    q = spatial @ proj.w_q
    k = prompt @ proj.w_k
    v = prompt @ proj.w_v
    scores = q @ k.T / np.sqrt(float(d))
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    out = weights @ v
    if return_weights:
        return out, weights
    return out
