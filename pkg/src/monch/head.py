"""Text-conditioned segmentation head, BCE loss, and label prediction.

The head regenerates its per-class classifier weights from the frozen text
embeddings on every forward pass (a dynamic pointwise convolution), so the
class set is carried by the prompts rather than by stored parameters.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv2d, Linear, collect_params
from .tensor import Tensor

PROB_EPS = 1e-7


class SegmentationHead:
    """Two 3x3 convs on the merged feature, then per-class logits from
    text-generated weight vectors: logits[b,n,x,y] = <w_n, h[b,:,x,y]> + b_n."""

    def __init__(self, channels: int, dtext: int, rng: np.random.Generator, dtype):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype, init="identity")
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype, init="identity")
        self.weight_gen = Linear(dtext, channels + 1, rng, dtype)

    def __call__(self, merged: Tensor, text_embeddings: Tensor) -> Tensor:
        b, c, h, w = merged.shape
        if c != self.channels:
            raise T.TensorError(f"text_head: channel mismatch {c} vs {self.channels}")
        n_classes = text_embeddings.shape[0]
        feat = self.conv2(self.conv1(merged))
        wb = self.weight_gen(text_embeddings)  # [(N+1), C+1]
        w = T.narrow(wb, 1, 0, self.channels)
        bias = T.reshape(T.narrow(wb, 1, self.channels, 1), (n_classes,))
        tokens = T.reshape(T.permute(feat, (0, 2, 3, 1)), (b, h * w, self.channels))
        logits = T.linear(tokens, w, bias)  # [B, HW, N+1]
        return T.permute(T.reshape(logits, (b, h, w, n_classes)), (0, 3, 1, 2))

    def params(self) -> dict[str, Tensor]:
        return collect_params(
            {"conv1": self.conv1, "conv2": self.conv2, "weight_gen": self.weight_gen}
        )


def upsample_to_input(logits: Tensor, size: int) -> Tensor:
    """Bilinear-resize [B, N, H', W'] up to the input extent by repeated x2."""
    _, _, h, w = logits.shape
    if h == size and w == size:
        return logits
    if size % h or (size // h) & (size // h - 1):
        raise T.TensorError(f"upsample_to_input: {h} -> {size} is not a power-of-two ratio")
    out = logits
    while out.shape[-1] < size:
        out = T.resize_bilinear(out, 2)
    return out


def bce_loss(y: Tensor, p: Tensor) -> Tensor:
    """Mean binary cross-entropy over batch, classes, and pixels.

    Probabilities are clamped to [eps, 1-eps]; the loss is zero only when
    the clamped probabilities match the binary targets exactly.
    """
    if y.shape != p.shape:
        raise T.TensorError(f"bce_loss: shape mismatch {y.shape} vs {p.shape}")
    pc = T.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    pos = T.mul(y, T.log(pc))
    neg = T.mul(T.affine(y, -1.0, 1.0), T.log(T.affine(pc, -1.0, 1.0)))
    return T.affine(T.mean_all(T.add(pos, neg)), -1.0, 0.0)


def predict(probabilities: Tensor) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lowest index."""
    return T.argmax_channel(probabilities).astype(np.int64)
