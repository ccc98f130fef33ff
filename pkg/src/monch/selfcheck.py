"""Gradient and oracle self-check suites.

The gradient suite compares every differentiable operation's reverse-mode
gradients against 64-bit central finite differences. The oracle suite
compares the vectorized kernels against independent explicit-loop
implementations of their textbook definitions. Both are deterministic:
seeds are fixed offsets from a base seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig, defaults_self_test
from .data import one_hot_masks
from .decoder import AttentionStage, TokenSeq
from .features import HighPassConfig, TopoBranch, TopoConfig, high_pass_enhance, high_pass_mask
from .head import PROB_EPS, SegmentationHead, bce_loss
from .tensor import GradTape, Tensor

FD_STEP = 1e-4
FD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}" + (
            f": {self.detail}" if self.detail else ""
        )


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(tensors: dict[str, Tensor], forward, rng: np.random.Generator,
                            samples_per_tensor: int = 4, step: float = FD_STEP,
                            tol: float = FD_TOL) -> tuple[bool, str]:
    """Compare tape gradients of `forward()` against central differences.

    `forward` must recompute the loss from the current `.data` of the given
    tensors; all tensors must be float64 with requires_grad set.
    """
    with GradTape() as tape:
        loss = forward()
        grads = tape.gradients(loss, list(tensors.values()))
    worst = 0.0
    worst_at = ""
    for (name, t), g in zip(tensors.items(), grads):
        flat = t.data.reshape(-1)
        n_samples = min(samples_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=n_samples, replace=False)
        for i in picks:
            keep = flat[i]
            flat[i] = keep + step
            up = forward().item()
            flat[i] = keep - step
            down = forward().item()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            an = float(g.reshape(-1)[i])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            if rel > worst:
                worst = rel
                worst_at = f"{name}[{i}] analytic={an:.3e} fd={fd:.3e}"
    return worst < tol, f"max rel err {worst:.2e}" + (f" ({worst_at})" if worst >= tol else "")


def _proj_loss(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random fixed projection of an op output to a scalar."""
    r = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return T.mean_all(T.mul(out, r))


def _grad_case_conv(rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True, dtype=np.float64)
    stride = 2 if rng.uniform() < 0.5 else 1
    return {"x": x, "w": w, "b": b}, lambda: _proj_loss(
        T.conv2d(x, w, b, stride=stride, padding=1), np.random.default_rng(7)
    )


def _grad_case_linear(rng):
    x = Tensor(rng.standard_normal((2, 5, 7)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((6, 7)) * 0.5, requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(6) * 0.1, requires_grad=True, dtype=np.float64)
    return {"x": x, "w": w, "b": b}, lambda: _proj_loss(
        T.linear(x, w, b), np.random.default_rng(11)
    )


def _grad_case_softmax(rng):
    x = Tensor(rng.standard_normal((3, 6)) * 2.0, requires_grad=True, dtype=np.float64)
    return {"x": x}, lambda: _proj_loss(T.softmax_lastaxis(x), np.random.default_rng(13))


def _grad_case_resize_up(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True, dtype=np.float64)
    return {"x": x}, lambda: _proj_loss(T.resize_bilinear(x, 2), np.random.default_rng(17))


def _grad_case_resize_down(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True, dtype=np.float64)
    return {"x": x}, lambda: _proj_loss(T.resize_bilinear(x, 0.5), np.random.default_rng(19))


def _randomize_stage(stage: AttentionStage, rng, scale: float = 0.5):
    for p in stage.params().values():
        p.data = rng.standard_normal(p.data.shape) * scale


def _grad_case_attention(rng):
    stage = AttentionStage(8, 2, rng, np.float64)
    _randomize_stage(stage, rng)
    q = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True, dtype=np.float64)
    kv = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True, dtype=np.float64)
    tensors = {"q": q, "kv": kv}
    tensors.update(stage.params())

    def forward():
        out = stage(TokenSeq(q, (1, 3)), TokenSeq(kv, (1, 4)))
        return _proj_loss(out.tokens, np.random.default_rng(23))

    return tensors, forward


def _grad_case_highpass(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True, dtype=np.float64)
    cfg = HighPassConfig(cutoff_ratio=0.25)
    return {"x": x}, lambda: _proj_loss(high_pass_enhance(x, cfg), np.random.default_rng(29))


def _grad_case_topo(rng):
    branch = TopoBranch(4, TopoConfig(k=3, dilation=1), rng, np.float64)
    for p in branch.params().values():
        p.data = rng.standard_normal(p.data.shape) * 0.5
    x = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True, dtype=np.float64)
    tensors = {"x": x}
    tensors.update(branch.params())
    return tensors, lambda: _proj_loss(branch(x), np.random.default_rng(31))


def _grad_case_text_head(rng):
    head = SegmentationHead(4, 5, rng, np.float64)
    for p in head.params().values():
        p.data = rng.standard_normal(p.data.shape) * 0.3
    merged = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True, dtype=np.float64)
    ftext = Tensor(rng.standard_normal((3, 5)), dtype=np.float64)
    tensors = {"merged": merged}
    tensors.update(head.params())
    return tensors, lambda: _proj_loss(head(merged, ftext), np.random.default_rng(37))


def _grad_case_bce(rng):
    logits = Tensor(rng.standard_normal((2, 3, 4, 4)) * 2.0, requires_grad=True, dtype=np.float64)
    y = Tensor((rng.uniform(size=(2, 3, 4, 4)) < 0.5).astype(np.float64))
    return {"logits": logits}, lambda: bce_loss(y, T.sigmoid(logits))


GRAD_CASES = {
    "conv2d": _grad_case_conv,
    "linear": _grad_case_linear,
    "softmax": _grad_case_softmax,
    "resize_up": _grad_case_resize_up,
    "resize_down": _grad_case_resize_down,
    "attention_stage": _grad_case_attention,
    "highpass_path": _grad_case_highpass,
    "topo_path": _grad_case_topo,
    "text_head": _grad_case_text_head,
    "bce": _grad_case_bce,
}


def run_gradient_suite(seeds: int = 20, base_seed: int = 1234) -> list[CheckResult]:
    results = []
    for name, case in GRAD_CASES.items():
        worst_detail = ""
        ok = True
        for s in range(seeds):
            rng = np.random.default_rng(base_seed + 1000 * s)
            tensors, forward = case(rng)
            sample_rng = np.random.default_rng(base_seed + 1000 * s + 1)
            passed, detail = finite_difference_check(tensors, forward, sample_rng)
            if not passed:
                ok = False
                worst_detail = f"seed {s}: {detail}"
                break
            worst_detail = detail
        results.append(CheckResult(f"grad/{name}", ok, worst_detail))
    return results


def run_full_model_gradcheck(seeds: int = 2, base_seed: int = 99) -> CheckResult:
    """Finite-difference check of every parameter through the whole network
    on a 2-sample 16x16 batch (64-bit shadow mode)."""
    from .train import build_model

    config = TrainConfig(
        patch_size=16, channels=8, model_dim=8, heads=2, text_dim=8,
        class_names=["background", "neoplastic", "epithelial"],
        topo=TopoConfig(k=3, dilation=1), seed=5,
    )
    ok = True
    detail = ""
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        model = build_model(config, dtype=np.float64)
        x = Tensor(rng.uniform(size=(2, 3, 16, 16)), dtype=np.float64)
        labels = rng.integers(0, 3, size=(2, 16, 16))
        y = Tensor(one_hot_masks(labels, 3, np.float64))
        params = model.named_parameters()
        passed, detail = finite_difference_check(
            params, lambda: model.loss(x, y)[0],
            np.random.default_rng(base_seed + 10 + s), samples_per_tensor=2,
        )
        if not passed:
            ok = False
            detail = f"seed {s}: {detail}"
            break
    return CheckResult("grad/full_model", ok, detail)


# ---------------------------------------------------------------------------
# explicit-loop oracles
# ---------------------------------------------------------------------------


def conv2d_loop(x, w, b, stride=1, padding=0):
    """Direct-definition cross-correlation in 64-bit."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    bs, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((bs, cout, ho, wo))
    for n in range(bs):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ci, i * stride + u, j * stride + v] * w[co, ci, u, v]
                    out[n, co, i, j] = acc + b[co]
    return out


def linear_loop(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lead = x.shape[:-1]
    x2 = x.reshape(-1, x.shape[-1])
    out = np.zeros((x2.shape[0], w.shape[0]))
    for r in range(x2.shape[0]):
        for o in range(w.shape[0]):
            acc = 0.0
            for i in range(x.shape[-1]):
                acc += x2[r, i] * w[o, i]
            out[r, o] = acc + b[o]
    return out.reshape(lead + (w.shape[0],))


def softmax_loop(row):
    row = np.asarray(row, dtype=np.float64)
    m = max(float(v) for v in row)
    exps = [math.exp(float(v) - m) for v in row]
    s = sum(exps)
    return np.array([e / s for e in exps])


def dft2d_loop(x):
    """Textbook quadruple-loop 2-D DFT; returns (re, im)."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    re = np.zeros((h, w))
    im = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for a in range(h):
                for b in range(w):
                    acc += x[a, b] * np.exp(-2j * np.pi * (u * a / h + v * b / w))
            re[u, v] = acc.real
            im[u, v] = acc.imag
    return re, im


def idft2d_loop(re, im):
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    h, w = re.shape
    out = np.zeros((h, w))
    for a in range(h):
        for b in range(w):
            acc = 0.0 + 0.0j
            for u in range(h):
                for v in range(w):
                    acc += (re[u, v] + 1j * im[u, v]) * np.exp(2j * np.pi * (u * a / h + v * b / w))
            out[a, b] = acc.real / (h * w)
    return out


def attention_stage_loop(qt, kt, weights, heads):
    """Per-head loop oracle for one cross-attention stage (with residual)."""
    qt = np.asarray(qt, dtype=np.float64)
    kt = np.asarray(kt, dtype=np.float64)
    wq, bq = weights["g_q.weight"], weights["g_q.bias"]
    wk, bk = weights["g_k.weight"], weights["g_k.bias"]
    wv, bv = weights["g_v.weight"], weights["g_v.bias"]
    wo, bo = weights["out.weight"], weights["out.bias"]
    bs, tq, dm = qt.shape
    tk = kt.shape[1]
    dk = dm // heads
    out = np.zeros((bs, tq, dm))
    for n in range(bs):
        q = qt[n] @ wq.T + bq
        k = kt[n] @ wk.T + bk
        v = kt[n] @ wv.T + bv
        ctx = np.zeros((tq, dm))
        for h in range(heads):
            sl = slice(h * dk, (h + 1) * dk)
            for i in range(tq):
                scores = np.array([float(q[i, sl] @ k[j, sl]) for j in range(tk)])
                weights_row = softmax_loop(scores / math.sqrt(dk))
                for j in range(tk):
                    ctx[i, sl] += weights_row[j] * v[j, sl]
        out[n] = ctx @ wo.T + bo + qt[n]
    return out


def bce_loop(y, p, eps=PROB_EPS):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    total = 0.0
    for yi, pi in zip(y, p):
        pc = min(max(float(pi), eps), 1.0 - eps)
        total += float(yi) * math.log(pc) + (1.0 - float(yi)) * math.log(1.0 - pc)
    return -total / y.size


def pairwise_sq_dist_loop(points):
    points = np.asarray(points, dtype=np.float64)
    p = points.shape[0]
    out = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            acc = 0.0
            for c in range(points.shape[1]):
                acc += (points[i, c] - points[j, c]) ** 2
            out[i, j] = acc
    return out


def knn_select_loop(dist, k, dilation):
    dist = np.asarray(dist, dtype=np.float64)
    p = dist.shape[0]
    out = np.zeros((p, k), dtype=np.int64)
    for i in range(p):
        others = sorted((float(dist[i, j]), j) for j in range(p) if j != i)
        ranks = [others[r][1] for r in range(dilation - 1, k * dilation, dilation)]
        out[i] = ranks
    return out


def metrics_loop(pred, gt, num_classes):
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    m = [[0] * num_classes for _ in range(num_classes)]
    for p, g in zip(pred, gt):
        m[int(g)][int(p)] += 1
    total = sum(sum(row) for row in m)
    diag = [m[i][i] for i in range(num_classes)]
    rows = [sum(m[i]) for i in range(num_classes)]
    cols = [sum(m[i][j] for i in range(num_classes)) for j in range(num_classes)]

    def div(a, b):
        return a / b if b else 0.0

    iou = [div(diag[i], rows[i] + cols[i] - diag[i]) for i in range(num_classes)]
    precision = [div(diag[i], cols[i]) for i in range(num_classes)]
    recall = [div(diag[i], rows[i]) for i in range(num_classes)]
    f1 = [div(2 * precision[i] * recall[i], precision[i] + recall[i]) for i in range(num_classes)]
    return {
        "confusion": np.array(m, dtype=np.int64),
        "pa": div(sum(diag), total),
        "iou": np.array(iou),
        "precision": np.array(precision),
        "recall": np.array(recall),
        "f1": np.array(f1),
        "fwiou": sum(div(rows[i], total) * iou[i] for i in range(num_classes)),
    }


# ---------------------------------------------------------------------------
# oracle suite runner
# ---------------------------------------------------------------------------


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.asarray(a).size else 0.0


def run_oracle_suite(instances: int = 100, base_seed: int = 4321,
                     tol: float = 1e-5) -> list[CheckResult]:
    results = []

    def runner(name, fn):
        worst = 0.0
        try:
            for i in range(instances):
                rng = np.random.default_rng(base_seed + i)
                worst = max(worst, fn(rng))
            results.append(CheckResult(f"oracle/{name}", worst <= tol, f"max abs diff {worst:.2e}"))
        except AssertionError as exc:
            results.append(CheckResult(f"oracle/{name}", False, str(exc)))

    def check_pairwise(rng):
        pts = Tensor(rng.standard_normal((8, 4)), dtype=np.float64)
        return _max_abs(T.pairwise_sq_dist(pts).data, pairwise_sq_dist_loop(pts.data))

    def check_knn(rng):
        # integer coordinates force ties, exercising the tie rule
        pts = rng.integers(0, 4, size=(9, 2)).astype(np.float64)
        dist = pairwise_sq_dist_loop(pts)
        k = int(rng.integers(1, 4))
        dilation = int(rng.integers(1, 3))
        got = T.knn_select(dist, k, dilation)
        want = knn_select_loop(dist, k, dilation)
        assert np.array_equal(got, want), f"knn index sets differ for k={k} d={dilation}"
        return 0.0

    def check_dft(rng):
        h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        x = rng.standard_normal((h, w))
        re, im = T.dft2d(Tensor(x, dtype=np.float64))
        re_o, im_o = dft2d_loop(x)
        diff = max(_max_abs(re.data, re_o), _max_abs(im.data, im_o))
        back = T.idft2d(Tensor(re_o, dtype=np.float64), Tensor(im_o, dtype=np.float64))
        return max(diff, _max_abs(back.data, idft2d_loop(re_o, im_o)), _max_abs(back.data, x))

    def check_attention(rng):
        stage = AttentionStage(8, 2, rng, np.float64)
        _randomize_stage(stage, rng)
        q = rng.standard_normal((1, 3, 8))
        kv = rng.standard_normal((1, 5, 8))
        got = stage(TokenSeq(Tensor(q, dtype=np.float64), (1, 3)),
                    TokenSeq(Tensor(kv, dtype=np.float64), (1, 5)))
        weights = {k: p.data for k, p in stage.params().items()}
        want = attention_stage_loop(q, kv, weights, heads=2)
        return _max_abs(got.tokens.data, want)

    def check_bce(rng):
        y = (rng.uniform(size=(2, 3, 4, 4)) < 0.5).astype(np.float64)
        p = rng.uniform(size=(2, 3, 4, 4))
        got = bce_loss(Tensor(y, dtype=np.float64), Tensor(p, dtype=np.float64)).item()
        return abs(got - bce_loop(y, p))

    def check_conv(rng):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        stride = int(rng.integers(1, 3))
        got = T.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       Tensor(b, dtype=np.float64), stride=stride, padding=1)
        return _max_abs(got.data, conv2d_loop(x, w, b, stride=stride, padding=1))

    def check_linear(rng):
        x = rng.standard_normal((4, 7))
        w = rng.standard_normal((5, 7))
        b = rng.standard_normal(5)
        got = T.linear(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       Tensor(b, dtype=np.float64))
        return _max_abs(got.data, linear_loop(x, w, b))

    def check_softmax(rng):
        x = rng.standard_normal(7) * rng.uniform(0.5, 4.0)
        got = T.softmax_lastaxis(Tensor(x, dtype=np.float64))
        return _max_abs(got.data, softmax_loop(x))

    def check_metrics(rng):
        from .metrics import compute_metrics

        n = int(rng.integers(2, 5))
        pred = rng.integers(0, n, size=(16, 16))
        gt = rng.integers(0, n, size=(16, 16))
        names = [f"c{i}" for i in range(n)]
        rep = compute_metrics(pred, gt, names)
        want = metrics_loop(pred, gt, n)
        assert np.array_equal(rep.confusion, want["confusion"]), "confusion counts differ"
        return max(
            abs(rep.pixel_accuracy - want["pa"]),
            abs(rep.fw_iou - want["fwiou"]),
            _max_abs(rep.iou, want["iou"]),
            _max_abs(rep.precision, want["precision"]),
            _max_abs(rep.recall, want["recall"]),
            _max_abs(rep.f1, want["f1"]),
        )

    runner("pairwise_sq_dist", check_pairwise)
    runner("knn_select", check_knn)
    runner("dft_idft", check_dft)
    runner("attention", check_attention)
    runner("bce", check_bce)
    runner("conv2d", check_conv)
    runner("linear", check_linear)
    runner("softmax", check_softmax)
    runner("metrics", check_metrics)
    results.extend(run_frequency_invariants())
    return results


def run_frequency_invariants(base_seed: int = 777) -> list[CheckResult]:
    """Constant-input residual identity, mask idempotence, Parseval, round trip."""
    results = []
    rng = np.random.default_rng(base_seed)
    cfg = HighPassConfig(cutoff_ratio=0.25)

    const = Tensor(np.full((1, 1, 8, 8), 3.5), dtype=np.float64)
    fh = high_pass_enhance(const, cfg)
    diff = float(np.max(np.abs(fh.data - const.data)))
    results.append(CheckResult("freq/constant_residual_identity", diff <= 1e-5,
                               f"max dev {diff:.2e}"))

    mask = high_pass_mask(8, 8, 0.25, np.float64)
    idem = np.array_equal(mask * mask, mask)
    results.append(CheckResult("freq/mask_idempotent", idem, "binary mask"))

    x = rng.standard_normal((6, 6))
    re, im = T.dft2d(Tensor(x, dtype=np.float64))
    energy_sig = float((x * x).sum())
    energy_spec = float((re.data ** 2 + im.data ** 2).sum()) / x.size
    rel = abs(energy_sig - energy_spec) / energy_sig
    results.append(CheckResult("freq/parseval", rel <= 1e-4, f"rel dev {rel:.2e}"))

    m = high_pass_mask(6, 6, 0.25, np.float64)
    hi_re, hi_im = re.data * m, im.data * m
    lo_re, lo_im = re.data * (1 - m), im.data * (1 - m)
    hi = T.idft2d(Tensor(hi_re, dtype=np.float64), Tensor(hi_im, dtype=np.float64)).data
    lo = T.idft2d(Tensor(lo_re, dtype=np.float64), Tensor(lo_im, dtype=np.float64)).data
    split = abs((hi * hi).sum() + (lo * lo).sum() - energy_sig) / energy_sig
    results.append(CheckResult("freq/energy_split", split <= 1e-4, f"rel dev {split:.2e}"))

    back = T.idft2d(re, im)
    rt = float(np.max(np.abs(back.data - x)))
    results.append(CheckResult("freq/roundtrip", rt <= 1e-5, f"max dev {rt:.2e}"))
    return results


def run_config_self_test() -> CheckResult:
    problems = defaults_self_test()
    return CheckResult("config/defaults", not problems, "; ".join(problems))
