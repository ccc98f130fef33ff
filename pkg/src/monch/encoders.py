"""Deterministic stand-ins for the pre-trained vision-language encoders.

The image encoder is a small trainable conv stack producing the mid-grain
feature map. The text encoder is frozen: sentences are hashed into a seeded
embedding table and mean-pooled, so identical prompts always map to
identical embeddings and no gradient ever reaches them.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, collect_params
from .tensor import Tensor

DEFAULT_CLASS_NAMES = ["background", "neoplastic", "epithelial", "inflammatory", "connective", "dead"]

SENTENCES_PER_CLASS = 3
HASH_BUCKETS = 4096
TOKEN_PATTERN = re.compile(r"[a-z0-9]+")


class PromptError(ValueError):
    """Prompt file violates the class/sentence contract."""


@dataclass
class PromptSet:
    """Class names, three description sentences per class, frozen embeddings."""

    class_names: list[str]
    sentences: list[list[str]]
    embeddings: Tensor  # [(N+1), Dtext], never trainable

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def load_prompt_file(path: str) -> dict[str, list[str]]:
    """Read a JSON prompt file mapping class name -> exactly 3 sentences."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise PromptError("prompt file must be a JSON object of class -> sentences")
    validate_prompts(raw)
    return raw


def validate_prompts(prompts: dict[str, list[str]]) -> None:
    for name, sents in prompts.items():
        if not isinstance(sents, list) or len(sents) != SENTENCES_PER_CLASS:
            raise PromptError(f"class '{name}' must have exactly {SENTENCES_PER_CLASS} sentences")
        for s in sents:
            if not isinstance(s, str) or not s.strip():
                raise PromptError(f"class '{name}' has an empty sentence")


def tokenize_sentence(sentence: str, max_tokens: int) -> list[str]:
    """Lowercase, split on whitespace/punctuation, truncate."""
    return TOKEN_PATTERN.findall(sentence.lower())[:max_tokens]


def _bucket(token: str) -> int:
    return zlib.crc32(token.encode("utf-8")) % HASH_BUCKETS


def embedding_table(dtext: int, seed: int, dtype=np.float32) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((HASH_BUCKETS, dtext)).astype(dtype)


def encode_text(prompts: dict[str, list[str]], dtext: int, seed: int,
                max_tokens: int = 77, dtype=np.float32) -> PromptSet:
    """Embed each class: hash tokens into a frozen table, mean-pool tokens,
    then mean over the class's three sentences."""
    validate_prompts(prompts)
    table = embedding_table(dtext, seed, dtype)
    rows = []
    for name, sents in prompts.items():
        vecs = []
        for s in sents:
            tokens = tokenize_sentence(s, max_tokens)
            if not tokens:
                raise PromptError(f"class '{name}' has a sentence with no tokens")
            ids = [_bucket(t) for t in tokens]
            vecs.append(table[ids].mean(axis=0))
        rows.append(np.stack(vecs).mean(axis=0))
    emb = Tensor(np.stack(rows).astype(dtype), requires_grad=False)
    return PromptSet(list(prompts.keys()), [list(s) for s in prompts.values()], emb)


class ImageEncoder:
    """Trainable conv stack: [B,3,S,S] -> [B,C,S/s,S/s] with s=4 by default.

    Two stride-2 convs then one stride-1 conv, tanh between layers; the
    final bias starts at zero so a zero image maps to the bias field.
    """

    def __init__(self, channels: int, downsample: int, rng: np.random.Generator, dtype):
        if downsample != 4:
            raise ValueError("the stub encoder supports downsample factor 4 only")
        self.channels = channels
        self.downsample = downsample
        self.conv1 = Conv2d(3, channels, 3, rng, dtype, stride=2)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype, stride=2)
        self.conv3 = Conv2d(channels, channels, 3, rng, dtype, stride=1)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if c != 3:
            raise T.TensorError(f"encode_image: expected 3 input channels, got {c}")
        if h % (2 * self.downsample) or w % (2 * self.downsample):
            raise T.TensorError(
                f"encode_image: extents ({h}, {w}) must be divisible by {2 * self.downsample}"
            )
        y = T.tanh(self.conv1(x))
        y = T.tanh(self.conv2(y))
        return self.conv3(y)

    def params(self) -> dict[str, Tensor]:
        return collect_params({"conv1": self.conv1, "conv2": self.conv2, "conv3": self.conv3})
