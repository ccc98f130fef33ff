"""Full network assembly: encoder -> grains -> enhancement branches ->
FPN blend -> prompt decoder -> text-conditioned head.

Ablation switches change which blocks are built (and therefore which
parameters exist): with the feature-enhancement block off the raw grains
feed the decoder directly; with the decoder off the blended feature feeds
the head directly; the high-frequency and topological branches can each be
replaced by a plain conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .decoder import PromptDecoder
from .encoders import ImageEncoder
from .features import (
    ConvBranch,
    FeatureBundle,
    FpnBlend,
    GrainBlock,
    TopoBranch,
    high_pass_enhance,
)
from .head import SegmentationHead, bce_loss, predict, upsample_to_input
from .layers import Conv2d, collect_params
from .tensor import Tensor

TEXT_EMBEDDINGS_KEY = "text.embeddings"


@dataclass
class ForwardResult:
    bundle: FeatureBundle
    merged: Tensor
    logits: Tensor  # at input resolution
    probabilities: Tensor


class Model:
    """Parameter owner and forward pass for one configuration."""

    def __init__(self, config: TrainConfig, text_embeddings: Tensor, dtype=np.float32):
        config.validate()
        if text_embeddings.shape != (config.num_classes, config.text_dim):
            raise ValueError(
                f"text embeddings shape {text_embeddings.shape} does not match "
                f"({config.num_classes}, {config.text_dim})"
            )
        self.config = config
        self.dtype = np.dtype(dtype)
        self.text_embeddings = Tensor(text_embeddings.data.astype(dtype), requires_grad=False)

        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        c = config.channels
        self.encoder = ImageEncoder(c, config.downsample, rng, dtype)
        self.grains = GrainBlock(c, rng, dtype)
        self.conv_branch = None
        self.topo_branch = None
        self.hf_replacement = None
        self.topo_replacement = None
        if config.use_mgfe:
            self.conv_branch = ConvBranch(c, rng, dtype)
            if not config.use_hf:  # high-pass enhancement itself is parameter-free
                self.hf_replacement = Conv2d(c, c, 3, rng, dtype, init="identity")
            if config.use_topo:
                self.topo_branch = TopoBranch(c, config.topo, rng, dtype)
            else:
                self.topo_replacement = Conv2d(c, c, 3, rng, dtype, init="identity")
        self.blend = FpnBlend(c, rng, dtype)
        self.decoder = None
        if config.use_ppd:
            self.decoder = PromptDecoder(
                c, config.text_dim, config.model_dim, config.heads, rng, dtype,
                disabled_stages=frozenset(config.disabled_stages),
            )
        self.head = SegmentationHead(c, config.text_dim, rng, dtype)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        blocks: dict[str, object] = {
            "encoder": self.encoder,
            "grains": self.grains,
            "blend": self.blend,
            "head": self.head,
        }
        if self.conv_branch is not None:
            blocks["conv_branch"] = self.conv_branch
        if self.topo_branch is not None:
            blocks["topo_branch"] = self.topo_branch
        if self.hf_replacement is not None:
            blocks["hf_replacement"] = self.hf_replacement
        if self.topo_replacement is not None:
            blocks["topo_replacement"] = self.topo_replacement
        if self.decoder is not None:
            blocks["decoder"] = self.decoder
        return collect_params(blocks)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Named tensor table for checkpoints: parameters plus the frozen
        text embeddings."""
        table = {name: p.data for name, p in self.named_parameters().items()}
        table[TEXT_EMBEDDINGS_KEY] = self.text_embeddings.data
        return table

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(tensors)
        if missing:
            raise ValueError(f"checkpoint is missing tensor(s): {sorted(missing)[:3]}")
        for name, p in params.items():
            arr = np.asarray(tensors[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"tensor '{name}' has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr.copy()
        if TEXT_EMBEDDINGS_KEY in tensors:
            emb = np.asarray(tensors[TEXT_EMBEDDINGS_KEY], dtype=self.dtype)
            if emb.shape != self.text_embeddings.data.shape:
                raise ValueError("text embedding table shape mismatch")
            self.text_embeddings.data = emb.copy()

    # -- forward ------------------------------------------------------------

    def features(self, x: Tensor) -> FeatureBundle:
        cfg = self.config
        fm = self.encoder(x)
        fc, ff = self.grains(fm)
        if cfg.use_mgfe:
            if self.hf_replacement is not None:
                fh = self.hf_replacement(ff)
            else:
                fh = high_pass_enhance(ff, cfg.highpass)
            fv = self.conv_branch(fm)
            if self.topo_replacement is not None:
                ft = self.topo_replacement(fc)
            else:
                ft = self.topo_branch(fc)
        else:
            fh, fv, ft = ff, fm, fc
        fblend = self.blend(fc, fm, ff)
        return FeatureBundle(fc=fc, fm=fm, ff=ff, fh=fh, fv=fv, ft=ft, fblend=fblend)

    def forward(self, x: Tensor, disabled: frozenset = frozenset(),
                record_attention: bool = False) -> ForwardResult:
        size = x.shape[-1]
        bundle = self.features(x)
        if self.decoder is not None:
            merged = self.decoder.decode(
                bundle, self.text_embeddings, disabled=disabled,
                record_attention=record_attention,
            )
        else:
            merged = bundle.fblend
        logits = self.head(merged, self.text_embeddings)
        logits = upsample_to_input(logits, size)
        probs = T.sigmoid(logits)
        return ForwardResult(bundle=bundle, merged=merged, logits=logits, probabilities=probs)

    def loss(self, x: Tensor, masks: Tensor) -> tuple[Tensor, ForwardResult]:
        result = self.forward(x)
        return bce_loss(masks, result.probabilities), result

    def predict(self, x: Tensor) -> np.ndarray:
        return predict(self.forward(x).probabilities)
