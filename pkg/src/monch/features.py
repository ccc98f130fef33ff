"""Multi-grained visual feature extraction and enhancement.

From the mid-grain encoder output the grain block derives a coarse (half
resolution) and fine (double resolution) view. Three enhancement branches
then run per grain: a Fourier high-pass residual on the fine feature, a
plain conv on the mid feature, and a KNN-graph residual on the coarse
feature. A small FPN-style block fuses the three raw grains into a blended
map at mid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, collect_params
from .tensor import Tensor


@dataclass
class HighPassConfig:
    """Binary ideal high-pass filter; zeroes centered bins with radius
    strictly below cutoff_ratio * min(H, W) / 2, so ratio 0 passes everything."""

    cutoff_ratio: float = 0.25

    def validate(self):
        if not 0.0 <= self.cutoff_ratio < 1.0:
            raise ValueError(f"cutoff_ratio must be in [0, 1), got {self.cutoff_ratio}")


@dataclass
class TopoConfig:
    k: int = 9
    dilation: int = 1

    def validate(self):
        if self.k < 1 or self.dilation < 1:
            raise ValueError("k and dilation must be positive")


_MASK_CACHE: dict = {}


def high_pass_mask(h: int, w: int, cutoff_ratio: float, dtype) -> np.ndarray:
    """[H, W] binary mask in unshifted DFT layout, radially symmetric about
    the centered DC bin."""
    key = (h, w, float(cutoff_ratio), np.dtype(dtype).str)
    got = _MASK_CACHE.get(key)
    if got is not None:
        return got
    fu = np.minimum(np.arange(h), h - np.arange(h)).astype(np.float64)
    fv = np.minimum(np.arange(w), w - np.arange(w)).astype(np.float64)
    radius = np.sqrt(fu[:, None] ** 2 + fv[None, :] ** 2)
    cutoff = cutoff_ratio * min(h, w) / 2.0
    mask = (radius >= cutoff).astype(dtype)
    _MASK_CACHE[key] = mask
    return mask


def high_pass_enhance(ff: Tensor, cfg: HighPassConfig) -> Tensor:
    """Fourier high-pass residual: idft(mask * dft(x)) + x."""
    cfg.validate()
    _, _, h, w = ff.shape
    mask = np.broadcast_to(high_pass_mask(h, w, cfg.cutoff_ratio, ff.dtype), ff.shape)
    mask_t = Tensor(mask)
    re, im = T.dft2d(ff)
    high = T.idft2d(T.mul(re, mask_t), T.mul(im, mask_t))
    return T.add(high, ff)


class GrainBlock:
    """Derive the coarse and fine grains from the mid-grain feature.

    Downscale: 2x2 average pool then a 3x3 conv. Upscale: bilinear x2 then a
    3x3 conv. Both convs start near identity.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype):
        self.conv_down = Conv2d(channels, channels, 3, rng, dtype, init="identity")
        self.conv_up = Conv2d(channels, channels, 3, rng, dtype, init="identity")

    def __call__(self, fm: Tensor) -> tuple[Tensor, Tensor]:
        _, _, h, w = fm.shape
        if h % 2 or w % 2:
            raise T.TensorError(f"derive_grains: extents ({h}, {w}) must be even")
        fc = self.conv_down(T.resize_bilinear(fm, 0.5))
        ff = self.conv_up(T.resize_bilinear(fm, 2))
        return fc, ff

    def params(self) -> dict[str, Tensor]:
        return collect_params({"conv_down": self.conv_down, "conv_up": self.conv_up})


class ConvBranch:
    """Single channel-preserving 3x3 conv on the mid-grain feature."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype):
        self.conv = Conv2d(channels, channels, 3, rng, dtype, init="identity")

    def __call__(self, fm: Tensor) -> Tensor:
        return self.conv(fm)

    def params(self) -> dict[str, Tensor]:
        return collect_params({"conv": self.conv})


class TopoBranch:
    """KNN-graph enhancement of the coarse grain with a residual connection.

    Pipeline: 1x1 conv to C/2 channels, per-channel spatial standardization,
    flatten to points, pairwise squared distances, dilated KNN, max over
    (neighbor - center) edge features, 1x1 conv back to C channels
    (zero-initialized so the block starts as the identity), add the input.
    """

    def __init__(self, channels: int, cfg: TopoConfig, rng: np.random.Generator, dtype):
        cfg.validate()
        if channels % 2:
            raise ValueError("topo branch needs an even channel count")
        self.cfg = cfg
        self.reduce = Conv2d(channels, channels // 2, 1, rng, dtype)
        self.project = Conv2d(channels // 2, channels, 1, rng, dtype, init="zero")

    def __call__(self, fc: Tensor) -> Tensor:
        b, c, h, w = fc.shape
        positions = h * w
        if positions < self.cfg.k * self.cfg.dilation + 1:
            raise T.TensorError(
                f"topo_enhance: {positions} positions too few for k={self.cfg.k}, "
                f"dilation={self.cfg.dilation}"
            )
        red = T.standardize_spatial(self.reduce(fc))
        grids = []
        for i in range(b):
            sample = T.narrow(red, 0, i, 1)  # [1, C/2, h, w]
            pts = T.reshape(T.permute(sample, (0, 2, 3, 1)), (positions, c // 2))
            dist = T.pairwise_sq_dist(pts)
            idx = T.knn_select(dist.data, self.cfg.k, self.cfg.dilation)
            edges = T.knn_edge_features(pts, idx)  # [P, k, C/2]
            agg = T.reduce_max(edges, axis=1)  # [P, C/2]
            grids.append(T.permute(T.reshape(agg, (h, w, c // 2)), (2, 0, 1)))
        stacked = T.stack(grids, axis=0)  # [B, C/2, h, w]
        return T.add(self.project(stacked), fc)

    def params(self) -> dict[str, Tensor]:
        return collect_params({"reduce": self.reduce, "project": self.project})


class FpnBlend:
    """Top-down fusion of the three grains at mid resolution.

    upsample(coarse) + 1x1-conv(mid), plus downsample(fine), then a 3x3
    smoothing conv.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype):
        self.lateral = Conv2d(channels, channels, 1, rng, dtype, init="identity")
        self.smooth = Conv2d(channels, channels, 3, rng, dtype, init="identity")

    def __call__(self, fc: Tensor, fm: Tensor, ff: Tensor) -> Tensor:
        _, _, h, w = fm.shape
        if fc.shape[-2:] != (h // 2, w // 2) or ff.shape[-2:] != (2 * h, 2 * w):
            raise T.TensorError(
                f"fpn_blend: grain shapes {fc.shape}/{fm.shape}/{ff.shape} inconsistent"
            )
        top = T.add(T.resize_bilinear(fc, 2), self.lateral(fm))
        top = T.add(top, T.resize_bilinear(ff, 0.5))
        return self.smooth(top)

    def params(self) -> dict[str, Tensor]:
        return collect_params({"lateral": self.lateral, "smooth": self.smooth})


@dataclass
class FeatureBundle:
    """The named multi-grained features for one batch."""

    fc: Tensor
    fm: Tensor
    ff: Tensor
    fh: Tensor
    fv: Tensor
    ft: Tensor
    fblend: Tensor
