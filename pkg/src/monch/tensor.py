"""Minimal dense tensor engine with reverse-mode differentiation.

Values are contiguous numpy arrays: float32 for model state, float64 as the
shadow dtype used by the gradient-check and oracle suites. Operations record
onto an explicit tape; reverse accumulation walks the records backwards, so
parameter gradients come out of a single `GradTape.gradients` call.

Every operation validates that its output is finite and raises
`NumericsError` naming the op otherwise; silent NaN/Inf propagation is
forbidden. Everything here is deterministic: identical inputs produce
bitwise-identical outputs on the same build.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class TensorError(ValueError):
    """Shape, dtype, or connectivity violation."""


class NumericsError(ArithmeticError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class Tensor:
    """Dense N-d array of 32/64-bit floats, immutable once produced by an op.

    `requires_grad` marks trainable leaves; intermediates track tape
    relevance internally so backward skips branches that cannot reach a
    trainable parameter.
    """

    __slots__ = ("data", "requires_grad", "_relevant")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._relevant = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detached(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, float(other), 0.0)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)


_ACTIVE_TAPES: list["GradTape"] = []


class GradTape:
    """Ordered record of executed operations for reverse accumulation.

    Single-writer: only one tape may be active at a time (one
    forward/backward pass). Use as a context manager around the forward
    pass, then call `gradients`.
    """

    def __init__(self):
        self._records = []  # (outputs, inputs, backward_fn)
        self._produced = set()

    def __enter__(self):
        if _ACTIVE_TAPES:
            raise TensorError("a GradTape is already active (single-writer)")
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def gradients(self, loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
        """Reverse-accumulate d(loss)/d(param) for every tensor in `params`.

        Returns arrays aligned with `params`; parameters unreachable from the
        loss get zero tensors. The loss must be a scalar produced on this
        tape.
        """
        if loss.data.ndim != 0:
            raise TensorError("loss must be a scalar tensor")
        if id(loss) not in self._produced:
            raise TensorError("loss is not connected to this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        for outputs, inputs, backward in reversed(self._records):
            gouts = [grads.get(id(o)) for o in outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [
                g if g is not None else np.zeros_like(o.data)
                for g, o in zip(gouts, outputs)
            ]
            gins = backward(*gouts)
            for t, g in zip(inputs, gins):
                if g is None or not t._relevant:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = g if prev is None else prev + g
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _record(op: str, outputs: tuple, inputs: tuple, backward) -> None:
    for o in outputs:
        if not np.isfinite(o.data).all():
            raise NumericsError(op)
    tape = _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None
    relevant = any(i._relevant for i in inputs)
    for o in outputs:
        o._relevant = relevant and tape is not None
    if tape is not None:
        for o in outputs:
            tape._produced.add(id(o))
        if relevant:
            tape._records.append((outputs, inputs, backward))


def _check_dtypes(op: str, *tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TensorError(f"{op}: mixed dtypes {dt} and {t.dtype}")
    return dt


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("add", a, b)
    if a.shape != b.shape:
        raise TensorError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    _record("add", (out,), (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("sub", a, b)
    if a.shape != b.shape:
        raise TensorError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)
    _record("sub", (out,), (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    if a.shape != b.shape:
        raise TensorError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    _record("mul", (out,), (a, b), lambda g: (g * b.data, g * a.data))
    return out


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """y = scale * x + shift with python-scalar coefficients."""
    out = Tensor(x.data * scale + shift)
    _record("affine", (out,), (x,), lambda g: (g * scale,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    _record("tanh", (out,), (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    _record("sigmoid", (out,), (x,), lambda g: (g * y * (1.0 - y),))
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    _record("log", (out,), (x,), lambda g: (g / x.data,))
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    inside = (x.data > lo) & (x.data < hi)
    out = Tensor(np.clip(x.data, lo, hi))
    _record("clip", (out,), (x,), lambda g: (g * inside,))
    return out


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    xshape = x.data.shape
    _record("reshape", (out,), (x,), lambda g: (g.reshape(xshape),))
    return out


def permute(x: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    _record("permute", (out,), (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(x.data[idx]))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    _record("narrow", (out,), (x,), backward)
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    _check_dtypes("stack", *tensors)
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(parts[i]) for i in range(len(tensors)))

    _record("stack", (out,), tuple(tensors), backward)
    return out


def expand_batch(x: Tensor, batch: int) -> Tensor:
    """Prepend a batch axis and repeat; backward sums over the batch."""
    out = Tensor(np.broadcast_to(x.data, (batch,) + x.data.shape).copy())
    _record("expand_batch", (out,), (x,), lambda g: (g.sum(axis=0),))
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    _record("sum_all", (out,), (x,), lambda g: (np.full_like(x.data, g),))
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))
    _record("mean_all", (out,), (x,), lambda g: (np.full_like(x.data, g / n),))
    return out


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first argmax (ties)."""
    idx = np.argmax(x.data, axis=axis)
    out = Tensor(np.max(x.data, axis=axis))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (gx,)

    _record("reduce_max", (out,), (x,), backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading axes must match exactly, or one operand may be 2-D (shared
    across the other's batch). No general broadcasting.
    """
    _check_dtypes("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise TensorError("matmul: operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise TensorError(f"matmul: inner mismatch {a.shape} @ {b.shape}")
    if a.ndim != 2 and b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise TensorError(f"matmul: leading axes differ {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if ga.shape != a.data.shape:  # a was 2-D, b batched
            ga = ga.reshape((-1,) + a.data.shape).sum(axis=0)
        if gb.shape != b.data.shape:  # b was 2-D, a batched
            gb = gb.reshape((-1,) + b.data.shape).sum(axis=0)
        return ga, gb

    _record("matmul", (out,), (a, b), backward)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: y = x @ weight.T + bias.

    weight is [Dout, Din]; x is [..., Din]. The weight may itself be a
    non-leaf tensor (used by the text-generated classifier head).
    """
    _check_dtypes("linear", x, weight, bias)
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise TensorError(f"linear: input dim {x.shape[-1]} != weight dim {din}")
    if bias.shape != (dout,):
        raise TensorError(f"linear: bias shape {bias.shape} != ({dout},)")
    out = Tensor(x.data @ weight.data.T + bias.data)

    def backward(g):
        g2 = g.reshape(-1, dout)
        x2 = x.data.reshape(-1, din)
        return g @ weight.data, g2.T @ x2, g2.sum(axis=0)

    _record("linear", (out,), (x, weight, bias), backward)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with odd kernels, via im2col.

    x is [B, Cin, H, W], weight [Cout, Cin, kh, kw], bias [Cout]. Output
    extents follow floor((H + 2p - kh) / stride) + 1 and must be positive.
    """
    _check_dtypes("conv2d", x, weight, bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise TensorError("conv2d: expected 4-D input and weight")
    b_, cin, h, w = x.shape
    cout, cin2, kh, kw = weight.shape
    if cin != cin2:
        raise TensorError(f"conv2d: channel mismatch {cin} vs {cin2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise TensorError("conv2d: kernel extents must be odd")
    if bias.shape != (cout,):
        raise TensorError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise TensorError(f"conv2d: non-positive output extent ({ho}, {wo})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b_, cin, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols2 = cols.reshape(b_, cin * kh * kw, ho * wo)
    w2 = weight.data.reshape(cout, cin * kh * kw)
    y = np.matmul(w2, cols2) + bias.data[:, None]
    out = Tensor(y.reshape(b_, cout, ho, wo))

    def backward(g):
        g2 = g.reshape(b_, cout, ho * wo)
        gw = np.einsum("bcl,bkl->ck", g2, cols2).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.matmul(w2.T, g2).reshape(b_, cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        if padding:
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        else:
            gx = gxp
        return np.ascontiguousarray(gx), gw, gb

    _record("conv2d", (out,), (x, weight, bias), backward)
    return out


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def softmax_lastaxis(x: Tensor) -> Tensor:
    """Row softmax over the last axis, stabilized by max subtraction."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    _record("softmax_lastaxis", (out,), (x,), backward)
    return out


# ---------------------------------------------------------------------------
# resizing (factor 2 up, factor 1/2 down)
# ---------------------------------------------------------------------------

_UPSAMPLE_CACHE: dict = {}
_DOWNSAMPLE_CACHE: dict = {}


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """1-D bilinear x2 matrix [2n, n], half-pixel centers.

    Border rows extrapolate linearly (weights 1.25/-0.25) so that 2x2 mean
    pooling inverts the upsample exactly on globally linear fields.
    """
    key = (n, np.dtype(dtype).str)
    got = _UPSAMPLE_CACHE.get(key)
    if got is not None:
        return got
    u = np.zeros((2 * n, n), dtype=np.float64)
    for j in range(2 * n):
        src = (j + 0.5) / 2.0 - 0.5
        i0 = int(np.floor(src))
        t = src - i0
        if i0 < 0:
            u[j, 0] = 1.0 - src
            u[j, min(1, n - 1)] += src
        elif i0 >= n - 1:
            d = src - (n - 1)
            u[j, n - 1] = 1.0 + d
            u[j, max(n - 2, 0)] += -d
        else:
            u[j, i0] = 1.0 - t
            u[j, i0 + 1] = t
    u = u.astype(dtype)
    _UPSAMPLE_CACHE[key] = u
    return u


def _downsample_matrix(n: int, dtype) -> np.ndarray:
    """1-D pair-averaging matrix [n/2, n]."""
    key = (n, np.dtype(dtype).str)
    got = _DOWNSAMPLE_CACHE.get(key)
    if got is not None:
        return got
    d = np.zeros((n // 2, n), dtype=dtype)
    for i in range(n // 2):
        d[i, 2 * i] = 0.5
        d[i, 2 * i + 1] = 0.5
    _DOWNSAMPLE_CACHE[key] = d
    return d


def resize_bilinear(x: Tensor, factor) -> Tensor:
    """Scale spatial extents of [B, C, H, W] by exactly 2 or 1/2.

    Factor 2 is bilinear interpolation; factor 1/2 is 2x2 average pooling
    (even extents required).
    """
    if x.ndim != 4:
        raise TensorError("resize_bilinear: expected 4-D input")
    _, _, h, w = x.shape
    if factor == 2:
        mh = _upsample_matrix(h, x.dtype)
        mw = _upsample_matrix(w, x.dtype)
        op = "resize_up2"
    elif factor == 0.5:
        if h % 2 or w % 2:
            raise TensorError(f"resize_bilinear: odd extents ({h}, {w}) on downscale")
        mh = _downsample_matrix(h, x.dtype)
        mw = _downsample_matrix(w, x.dtype)
        op = "resize_down2"
    else:
        raise TensorError(f"resize_bilinear: unsupported factor {factor!r}")
    y = np.matmul(np.matmul(mh, x.data), mw.T)
    out = Tensor(y)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    _record(op, (out,), (x,), backward)
    return out


# ---------------------------------------------------------------------------
# 2-D discrete Fourier transform (direct definition)
# ---------------------------------------------------------------------------

_FOURIER_CACHE: dict = {}


def _fourier_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine/sine matrices C[u,x]=cos(2pi ux/n), S[u,x]=sin(2pi ux/n), float64."""
    got = _FOURIER_CACHE.get(n)
    if got is not None:
        return got
    grid = np.outer(np.arange(n), np.arange(n)) * (2.0 * np.pi / n)
    mats = (np.cos(grid), np.sin(grid))
    _FOURIER_CACHE[n] = mats
    return mats


def dft2d(x: Tensor) -> tuple[Tensor, Tensor]:
    """Unnormalized 2-D DFT over the trailing two axes, as a (real, imag) pair.

    Direct definition (matrix form of the textbook double sum), accumulated
    in 64-bit regardless of the input dtype.
    """
    if x.ndim < 2:
        raise TensorError("dft2d: expected at least 2-D input")
    h, w = x.shape[-2], x.shape[-1]
    ch, sh = _fourier_matrices(h)
    cw, sw = _fourier_matrices(w)
    xd = x.data.astype(np.float64, copy=False)
    # X = (Ch - i Sh) x (Cw - i Sw)^T
    re = ch @ xd @ cw.T - sh @ xd @ sw.T
    im = -(sh @ xd @ cw.T + ch @ xd @ sw.T)
    out_re = Tensor(re.astype(x.dtype))
    out_im = Tensor(im.astype(x.dtype))

    def backward(gre, gim):
        gr = gre.astype(np.float64, copy=False)
        gi = gim.astype(np.float64, copy=False)
        gx = ch.T @ gr @ cw - sh.T @ gr @ sw - sh.T @ gi @ cw - ch.T @ gi @ sw
        return (gx.astype(x.dtype),)

    _record("dft2d", (out_re, out_im), (x,), backward)
    return out_re, out_im


def idft2d(re: Tensor, im: Tensor) -> Tensor:
    """Real part of the inverse 2-D DFT of the (real, imag) spectrum pair."""
    _check_dtypes("idft2d", re, im)
    if re.shape != im.shape:
        raise TensorError(f"idft2d: shape mismatch {re.shape} vs {im.shape}")
    h, w = re.shape[-2], re.shape[-1]
    ch, sh = _fourier_matrices(h)
    cw, sw = _fourier_matrices(w)
    scale = 1.0 / (h * w)
    xr = re.data.astype(np.float64, copy=False)
    xi = im.data.astype(np.float64, copy=False)
    # y = (1/HW) Re[(Ch + i Sh)(Xr + i Xi)(Cw + i Sw)^T]
    y = scale * (ch @ xr @ cw.T - sh @ xi @ cw.T - sh @ xr @ sw.T - ch @ xi @ sw.T)
    out = Tensor(y.astype(re.dtype))

    def backward(g):
        gd = g.astype(np.float64, copy=False)
        gr = scale * (ch.T @ gd @ cw - sh.T @ gd @ sw)
        gi = scale * (-(sh.T @ gd @ cw) - ch.T @ gd @ sw)
        return gr.astype(re.dtype), gi.astype(im.dtype)

    _record("idft2d", (out,), (re, im), backward)
    return out


# ---------------------------------------------------------------------------
# normalization and point-set ops
# ---------------------------------------------------------------------------


def standardize_spatial(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(batch, channel) standardization over the spatial grid of [B,C,H,W]."""
    if x.ndim != 4:
        raise TensorError("standardize_spatial: expected 4-D input")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    d = x.data - mu
    var = (d * d).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = d * inv
    out = Tensor(y)

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    _record("standardize_spatial", (out,), (x,), backward)
    return out


def pairwise_sq_dist(points: Tensor) -> Tensor:
    """Squared euclidean distances between rows of [P, C'], clamped at 0.

    Computed as |p_i|^2 - 2 p_i.p_j + |p_j|^2 (the norm/inner-product form),
    so tiny negative round-off is clipped to zero.
    """
    if points.ndim != 2:
        raise TensorError("pairwise_sq_dist: expected 2-D point matrix")
    p = points.data
    sq = (p * p).sum(axis=1)
    dist = sq[:, None] - 2.0 * (p @ p.T) + sq[None, :]
    mask = dist > 0
    out = Tensor(np.maximum(dist, 0.0))

    def backward(g):
        gm = g * mask
        rs = gm.sum(axis=1)
        cs = gm.sum(axis=0)
        return (2.0 * ((rs + cs)[:, None] * p - (gm + gm.T) @ p),)

    _record("pairwise_sq_dist", (out,), (points,), backward)
    return out


def knn_select(dist, k: int, dilation: int = 1) -> np.ndarray:
    """Dilated k-nearest-neighbor indices from a [P, P] distance matrix.

    Per row: the row's own index is excluded, remaining indices are sorted
    ascending by distance with ties broken by lower index, and ranks
    d, 2d, ..., kd are taken. Selection is non-differentiable by design.
    """
    d = dist.data if isinstance(dist, Tensor) else np.asarray(dist)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise TensorError("knn_select: expected a square distance matrix")
    p = d.shape[0]
    if k * dilation >= p:
        raise TensorError(f"knn_select: k*dilation = {k * dilation} must be < {p}")
    work = d.copy()
    np.fill_diagonal(work, np.inf)
    order = np.argsort(work, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, dilation - 1 : k * dilation : dilation])


def knn_edge_features(points: Tensor, idx: np.ndarray) -> Tensor:
    """Edge features neighbor - center: [P, C'] gathered by [P, k] -> [P, k, C']."""
    if points.ndim != 2:
        raise TensorError("knn_edge_features: expected 2-D point matrix")
    p, c = points.shape
    out = Tensor(points.data[idx] - points.data[:, None, :])

    def backward(g):
        gx = np.zeros_like(points.data)
        np.add.at(gx, idx.reshape(-1), g.reshape(-1, c))
        gx -= g.sum(axis=1)
        return (gx,)

    _record("knn_edge_features", (out,), (points,), backward)
    return out


# ---------------------------------------------------------------------------
# non-differentiable helpers
# ---------------------------------------------------------------------------


def argmax_channel(x: Tensor) -> np.ndarray:
    """Per-pixel argmax over the channel axis of [B, N, H, W] (first-index ties)."""
    return np.argmax(x.data, axis=1)
