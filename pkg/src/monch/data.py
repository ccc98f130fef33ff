"""Dataset handling: manifest-driven PNG pairs plus a synthetic generator.

A dataset directory holds a `manifest` JSON file (class name list and
image/mask path records), 8-bit RGB images, and 8-bit grayscale masks whose
pixel values are class indices. The synthetic generator fills patches with
textured ellipses, one deterministic color/stripe signature per foreground
class, with geometrically decaying class frequencies.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .encoders import DEFAULT_CLASS_NAMES
from .tensor import Tensor

MANIFEST_NAME = "manifest"

# (base RGB, stripe frequency, stripe orientation) per foreground class
CLASS_SIGNATURES = [
    ((0.85, 0.20, 0.20), 4.0, 0.3),   # neoplastic
    ((0.20, 0.80, 0.85), 6.0, 1.2),   # epithelial
    ((0.20, 0.80, 0.25), 8.0, 2.1),   # inflammatory
    ((0.25, 0.30, 0.90), 5.0, 0.8),   # connective
    ((0.90, 0.85, 0.20), 7.0, 1.7),   # dead
]


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    root: str
    class_names: list[str]
    images: list[str]
    masks: list[str]

    def __len__(self) -> int:
        return len(self.images)


def load_dataset(root: str) -> Dataset:
    manifest_path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DatasetError(f"no manifest found in {root}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"manifest is not valid JSON: {exc}") from exc
    classes = raw.get("classes")
    samples = raw.get("samples")
    if not isinstance(classes, list) or len(classes) < 2:
        raise DatasetError("manifest must list background plus foreground classes")
    if not isinstance(samples, list) or not samples:
        raise DatasetError("manifest lists no samples")
    images, masks = [], []
    for rec in samples:
        img = os.path.join(root, rec["image"])
        msk = os.path.join(root, rec["mask"])
        if not os.path.exists(img) or not os.path.exists(msk):
            raise DatasetError(f"missing sample file: {rec['image']} / {rec['mask']}")
        images.append(img)
        masks.append(msk)
    return Dataset(root=root, class_names=list(classes), images=images, masks=masks)


def load_image(path: str, dtype=np.float32) -> np.ndarray:
    """[3, S, S] float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=dtype) / dtype(255.0)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path: str, num_classes: int) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int64)
    if arr.max() >= num_classes:
        raise DatasetError(f"mask {path} has label {arr.max()} >= {num_classes}")
    return arr


def one_hot_masks(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """[B, N+1, S, S] binary masks; exactly one channel is 1 per pixel."""
    b, h, w = labels.shape
    out = np.zeros((b, num_classes, h, w), dtype=dtype)
    flat = out.reshape(b, num_classes, h * w)
    np.put_along_axis(flat, labels.reshape(b, 1, h * w), 1.0, axis=1)
    return out


@dataclass
class SegmentationBatch:
    images: Tensor      # [B, 3, S, S] in [0, 1]
    label_maps: np.ndarray  # [B, S, S] int
    masks: Tensor       # [B, N+1, S, S] one-hot


def load_batch(dataset: Dataset, indices, num_classes: int, dtype=np.float32) -> SegmentationBatch:
    imgs = np.stack([load_image(dataset.images[i], dtype) for i in indices])
    labels = np.stack([load_mask(dataset.masks[i], num_classes) for i in indices])
    return SegmentationBatch(
        images=Tensor(imgs),
        label_maps=labels,
        masks=Tensor(one_hot_masks(labels, num_classes, dtype)),
    )


def _quota_class_picker(weights: np.ndarray):
    """Deterministic largest-deficit scheduler so realized class shares track
    the target weights closely even over few draws."""
    assigned = np.zeros(len(weights))

    def pick() -> int:
        k = int(np.argmin(assigned / weights))
        assigned[k] += 1.0
        return k

    return pick


def gen_synthetic(out_dir: str, num_patches: int, size: int, num_foreground: int,
                  seed: int, decay: float = 0.7) -> Dataset:
    """Write a synthetic ellipse dataset; deterministic in all arguments."""
    if not 1 <= num_foreground <= len(CLASS_SIGNATURES):
        raise DatasetError(f"foreground class count must be in 1..{len(CLASS_SIGNATURES)}")
    if num_patches < 1 or size < 8:
        raise DatasetError("need at least one patch and size >= 8")
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

    weights = decay ** np.arange(num_foreground)
    pick_class = _quota_class_picker(weights)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    samples = []
    for p in range(num_patches):
        img = np.full((size, size, 3), 0.62, dtype=np.float64)
        img += rng.normal(0.0, 0.02, size=img.shape)
        label = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 5))):
            k = pick_class()
            base, freq, orient = CLASS_SIGNATURES[k]
            cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
            ra, rb = rng.uniform(0.18 * size, 0.30 * size, size=2)
            angle = rng.uniform(0.0, np.pi)
            phase = rng.uniform(0.0, 2 * np.pi)
            dy, dx = ys - cy, xs - cx
            u = dx * np.cos(angle) + dy * np.sin(angle)
            v = -dx * np.sin(angle) + dy * np.cos(angle)
            inside = (u / ra) ** 2 + (v / rb) ** 2 <= 1.0
            stripes = 0.08 * np.sin(
                2 * np.pi * freq * (xs * np.cos(orient) + ys * np.sin(orient)) / size + phase
            )
            for ch in range(3):
                img[..., ch][inside] = base[ch] + stripes[inside]
            label[inside] = k + 1
        img += rng.normal(0.0, 0.01, size=img.shape)
        img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        img_rel = f"images/patch_{p:05d}.png"
        msk_rel = f"masks/patch_{p:05d}.png"
        Image.fromarray(img8, mode="RGB").save(os.path.join(out_dir, img_rel))
        Image.fromarray(label, mode="L").save(os.path.join(out_dir, msk_rel))
        samples.append({"image": img_rel, "mask": msk_rel})

    class_names = DEFAULT_CLASS_NAMES[: num_foreground + 1]
    manifest = {"classes": class_names, "samples": samples, "decay": decay, "seed": seed}
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return load_dataset(out_dir)
