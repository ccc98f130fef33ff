"""Progressive prompt decoder: a cascade of multi-head cross-attention
stages in which each finer feature queries the next coarser one
(high-frequency -> conv -> topological -> text), the harmonized tokens then
query the blended feature, and a final merge adds the upsampled blend back
at fine resolution.

Stage names follow the cascade: q_h (fine tokens query the conv feature),
q_v (query the topological feature), q_t (query the text embeddings), q_T
(query the blended feature). A disabled stage passes its query through
unchanged and owns no parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, collect_params
from .tensor import Tensor

STAGE_NAMES = ("q_h", "q_v", "q_t", "q_T")
STAGE_KV_SOURCES = {"q_h": "fv", "q_v": "ft", "q_t": "text", "q_T": "fblend"}
DISABLE_CHOICES = STAGE_NAMES + ("blend",)


@dataclass
class TokenSeq:
    """Token view of a feature map: tokens [B, T, Dm] plus the spatial origin
    they were flattened from ((H, W), or ("text", N+1) for class embeddings)."""

    tokens: Tensor
    origin: tuple


class Tokenizer:
    """Row-major spatial flattening plus a channel -> model-dim projection."""

    def __init__(self, channels: int, model_dim: int, rng: np.random.Generator, dtype):
        self.proj = Linear(channels, model_dim, rng, dtype)

    def __call__(self, feature: Tensor) -> TokenSeq:
        b, c, h, w = feature.shape
        flat = T.reshape(T.permute(feature, (0, 2, 3, 1)), (b, h * w, c))
        return TokenSeq(self.proj(flat), (h, w))

    def params(self) -> dict[str, Tensor]:
        return collect_params({"proj": self.proj})


class TextTokenizer:
    """Project frozen class embeddings [(N+1), Dtext] to one token per class,
    broadcast across the batch."""

    def __init__(self, dtext: int, model_dim: int, rng: np.random.Generator, dtype):
        self.proj = Linear(dtext, model_dim, rng, dtype)

    def __call__(self, embeddings: Tensor, batch: int) -> TokenSeq:
        tokens = T.expand_batch(self.proj(embeddings), batch)
        return TokenSeq(tokens, ("text", embeddings.shape[0]))

    def params(self) -> dict[str, Tensor]:
        return collect_params({"proj": self.proj})


class Detokenizer:
    """Invert the flattening: model-dim -> channel projection, then reshape
    to the recorded spatial origin."""

    def __init__(self, model_dim: int, channels: int, rng: np.random.Generator, dtype,
                 scale: float = 1.0):
        self.proj = Linear(model_dim, channels, rng, dtype, scale=scale)
        self.channels = channels

    def __call__(self, seq: TokenSeq) -> Tensor:
        if len(seq.origin) != 2 or seq.origin[0] == "text":
            raise T.TensorError(f"detokenize: origin {seq.origin} is not spatial")
        h, w = seq.origin
        b, t, _ = seq.tokens.shape
        if t != h * w:
            raise T.TensorError(f"detokenize: token count {t} != origin {h}x{w}")
        flat = self.proj(seq.tokens)
        return T.permute(T.reshape(flat, (b, h, w, self.channels)), (0, 3, 1, 2))

    def params(self) -> dict[str, Tensor]:
        return collect_params({"proj": self.proj})


class AttentionStage:
    """One multi-head cross-attention stage with a residual query connection.

    scores = g_q(Q) g_k(KV)^T / sqrt(d_k) per head, row softmax, weighted sum
    of g_v(KV); heads are concatenated, output-projected (zero-initialized),
    and added back onto the query tokens.
    """

    def __init__(self, model_dim: int, heads: int, rng: np.random.Generator, dtype):
        if model_dim % heads:
            raise ValueError(f"model_dim {model_dim} not divisible by heads {heads}")
        self.model_dim = model_dim
        self.heads = heads
        self.key_dim = model_dim // heads
        self.g_q = Linear(model_dim, model_dim, rng, dtype)
        self.g_k = Linear(model_dim, model_dim, rng, dtype)
        self.g_v = Linear(model_dim, model_dim, rng, dtype)
        self.out = Linear(model_dim, model_dim, rng, dtype, init="zero")
        self.last_attention: np.ndarray | None = None

    def _split_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        return T.permute(T.reshape(x, (b, t, self.heads, self.key_dim)), (0, 2, 1, 3))

    def __call__(self, q: TokenSeq, kv: TokenSeq, record_attention: bool = False) -> TokenSeq:
        b, tq, dm = q.tokens.shape
        bk, tk, dk = kv.tokens.shape
        if dm != self.model_dim or dk != self.model_dim:
            raise T.TensorError("cross_attend: sequences must be projected to model_dim")
        if bk != b:
            raise T.TensorError(f"cross_attend: batch mismatch {b} vs {bk}")
        qh = self._split_heads(self.g_q(q.tokens), b, tq)
        kh = self._split_heads(self.g_k(kv.tokens), b, tk)
        vh = self._split_heads(self.g_v(kv.tokens), b, tk)
        scores = T.affine(
            T.matmul(qh, T.permute(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(self.key_dim), 0.0
        )
        attn = T.softmax_lastaxis(scores)
        if record_attention:
            self.last_attention = attn.data.copy()
        ctx = T.matmul(attn, vh)  # [B, h, Tq, dk]
        merged = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (b, tq, self.model_dim))
        return TokenSeq(T.add(self.out(merged), q.tokens), q.origin)

    def params(self) -> dict[str, Tensor]:
        return collect_params(
            {"g_q": self.g_q, "g_k": self.g_k, "g_v": self.g_v, "out": self.out}
        )


class PromptDecoder:
    """The full cascade plus the final merge with the upsampled blend."""

    def __init__(self, channels: int, dtext: int, model_dim: int, heads: int,
                 rng: np.random.Generator, dtype, disabled_stages: frozenset = frozenset()):
        unknown = disabled_stages - set(DISABLE_CHOICES)
        if unknown:
            raise ValueError(f"unknown stage name(s) in disabled set: {sorted(unknown)}")
        self.build_disabled = frozenset(disabled_stages)
        self.query_tokenizer = Tokenizer(channels, model_dim, rng, dtype)
        self.detokenizer = Detokenizer(model_dim, channels, rng, dtype, scale=0.05)
        self.stages: dict[str, AttentionStage] = {}
        self.kv_tokenizers: dict[str, object] = {}
        for name in STAGE_NAMES:
            if name in self.build_disabled:
                continue
            if STAGE_KV_SOURCES[name] == "text":
                self.kv_tokenizers[name] = TextTokenizer(dtext, model_dim, rng, dtype)
            else:
                self.kv_tokenizers[name] = Tokenizer(channels, model_dim, rng, dtype)
            self.stages[name] = AttentionStage(model_dim, heads, rng, dtype)

    def decode(self, bundle, text_embeddings: Tensor, disabled: frozenset = frozenset(),
               record_attention: bool = False, captures: dict | None = None) -> Tensor:
        """Run the cascade; a disabled stage passes its query through unchanged.

        When `captures` is given, the post-stage query tokens are stored in it
        (detached, as [B, Dm, H, W] grids) under each stage name.
        """
        unknown = set(disabled) - set(DISABLE_CHOICES)
        if unknown:
            raise T.TensorError(f"unknown stage name(s) in disabled set: {sorted(unknown)}")
        off = self.build_disabled | set(disabled)
        batch = bundle.fh.shape[0]
        kv_features = {"fv": bundle.fv, "ft": bundle.ft, "fblend": bundle.fblend}
        q = self.query_tokenizer(bundle.fh)
        for name in STAGE_NAMES:
            if name not in off:
                source = STAGE_KV_SOURCES[name]
                if source == "text":
                    kv = self.kv_tokenizers[name](text_embeddings, batch)
                else:
                    kv = self.kv_tokenizers[name](kv_features[source])
                q = self.stages[name](q, kv, record_attention=record_attention)
            if captures is not None:
                h, w = q.origin
                b, t, dm = q.tokens.shape
                captures[name] = np.ascontiguousarray(
                    q.tokens.data.reshape(b, h, w, dm).transpose(0, 3, 1, 2)
                )
        merged = self.detokenizer(q)
        if "blend" not in off:
            merged = T.add(merged, T.resize_bilinear(bundle.fblend, 2))
        return merged

    def params(self) -> dict[str, Tensor]:
        blocks: dict[str, object] = {
            "query_tok": self.query_tokenizer,
            "detok": self.detokenizer,
        }
        for name in STAGE_NAMES:
            if name in self.stages:
                blocks[f"stage_{name}.kv_tok"] = self.kv_tokenizers[name]
                blocks[f"stage_{name}.attn"] = self.stages[name]
        return collect_params(blocks)
