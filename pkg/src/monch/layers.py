"""Parameter-holding layers shared by the encoder, feature, and decoder blocks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape: tuple, dtype, gain: float = 1.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    std = gain * np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal(shape) * std).astype(dtype)


def identity_kernel(channels: int, k: int, dtype) -> np.ndarray:
    """[C, C, k, k] kernel that reproduces its input (single 1 at the center)."""
    w = np.zeros((channels, channels, k, k), dtype=dtype)
    for c in range(channels):
        w[c, c, k // 2, k // 2] = 1.0
    return w


class Linear:
    def __init__(self, din: int, dout: int, rng: np.random.Generator, dtype,
                 init: str = "glorot", scale: float = 1.0):
        if init == "zero":
            w = np.zeros((dout, din), dtype=dtype)
        else:
            w = glorot(rng, (dout, din), dtype) * scale
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(dout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class Conv2d:
    """3x3 or 1x1 convolution layer; `init` picks glorot/near-identity/zero."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, dtype,
                 stride: int = 1, init: str = "glorot", noise: float = 0.02):
        if init == "identity":
            if cin != cout:
                raise ValueError("identity init needs matching channel counts")
            w = identity_kernel(cin, k, dtype)
            w = w + (rng.standard_normal(w.shape) * noise).astype(dtype)
        elif init == "zero":
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = glorot(rng, (cout, cin, k, k), dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def collect_params(blocks: dict[str, object]) -> dict[str, Tensor]:
    """Flatten {block_name: layer-or-dict} into dotted parameter names."""
    out: dict[str, Tensor] = {}
    for name, block in blocks.items():
        if isinstance(block, Tensor):
            out[name] = block
            continue
        sub = block.params() if hasattr(block, "params") else block
        for key, val in sub.items():
            out[f"{name}.{key}"] = val
    return out
