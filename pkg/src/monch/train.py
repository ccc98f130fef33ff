"""Training, evaluation, and inference drivers.

Training is deterministic given the config seed: parameter init, data
shuffling, and text embeddings draw from independent seed streams, so two
runs with the same seed produce identical loss trajectories and ablation
variants see identical batch orders.
"""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset, load_dataset, load_image, load_mask, one_hot_masks
from .encoders import PromptError, encode_text, load_prompt_file
from .metrics import MetricsReport, compute_metrics, confusion_matrix
from .model import Model, TEXT_EMBEDDINGS_KEY
from .optim import Adam, learning_rate_at
from .tensor import GradTape, NumericsError, Tensor


class TrainingError(NumericsError):
    """Non-finite loss or gradient; carries the failing step index."""

    def __init__(self, op: str, step: int):
        super().__init__(op)
        self.args = (f"{self.args[0]} at training step {step}",)
        self.step = step


def default_prompts() -> dict[str, list[str]]:
    with resources.files("monch").joinpath("prompts/default.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def build_prompt_embeddings(config: TrainConfig, prompts: dict[str, list[str]] | None = None):
    """PromptSet for the config's classes, in class-index order."""
    source = prompts if prompts is not None else default_prompts()
    missing = [n for n in config.class_names if n not in source]
    if missing:
        raise PromptError(f"no prompt sentences for class(es): {missing}")
    ordered = {n: source[n] for n in config.class_names}
    return encode_text(ordered, config.text_dim, config.seed, max_tokens=config.text_len)


def build_model(config: TrainConfig, prompts: dict[str, list[str]] | None = None,
                dtype=np.float32) -> Model:
    prompt_set = build_prompt_embeddings(config, prompts)
    return Model(config, prompt_set.embeddings, dtype=dtype)


@dataclass
class TrainResult:
    config: TrainConfig
    model: Model
    losses: list[float]
    log_lines: list[str]
    checkpoint_path: str | None


def _preload(dataset: Dataset, num_classes: int, dtype):
    images = np.stack([load_image(p, dtype) for p in dataset.images])
    labels = np.stack([load_mask(p, num_classes) for p in dataset.masks])
    return images, labels


def train(config: TrainConfig, data_dir: str, out_checkpoint: str | None = None,
          loss_log_path: str | None = None,
          prompts: dict[str, list[str]] | None = None) -> TrainResult:
    dataset = load_dataset(data_dir)
    config = config.with_overrides(class_names=list(dataset.class_names))
    model = build_model(config, prompts)
    params = model.named_parameters()
    names = list(params)
    optimizer = Adam(params)

    images, labels = _preload(dataset, config.num_classes, model.dtype)
    masks = one_hot_masks(labels, config.num_classes, model.dtype)
    n = len(dataset)
    data_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    steps_per_epoch = math.ceil(n / config.batch_size)
    budget = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        budget = min(budget, config.max_steps)

    losses: list[float] = []
    log_lines: list[str] = []
    step = 0
    for epoch in range(config.epochs):
        if step >= budget:
            break
        lr = learning_rate_at(epoch, config)
        order = data_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if step >= budget:
                break
            idx = order[start : start + config.batch_size]
            x = Tensor(np.ascontiguousarray(images[idx]))
            y = Tensor(np.ascontiguousarray(masks[idx]))
            try:
                with GradTape() as tape:
                    loss, _ = model.loss(x, y)
                    grads = tape.gradients(loss, [params[k] for k in names])
                optimizer.step(dict(zip(names, grads)), lr)
            except NumericsError as exc:
                raise TrainingError(exc.op, step) from exc
            losses.append(loss.item())
            log_lines.append(f"{step}\t{lr:.8g}\t{loss.item():.8g}")
            step += 1

    if loss_log_path:
        with open(loss_log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    if out_checkpoint:
        save_model(out_checkpoint, model)
    return TrainResult(config=config, model=model, losses=losses,
                       log_lines=log_lines, checkpoint_path=out_checkpoint)


def save_model(path: str, model: Model) -> None:
    table = OrderedDict(sorted(model.state_tensors().items()))
    save_checkpoint(path, model.config.to_json(), table)


def model_from_checkpoint(path: str, dtype=np.float32) -> Model:
    config_json, tensors = load_checkpoint(path)
    config = TrainConfig.from_json(config_json)
    if TEXT_EMBEDDINGS_KEY not in tensors:
        raise ValueError(f"checkpoint lacks the '{TEXT_EMBEDDINGS_KEY}' tensor")
    model = Model(config, Tensor(tensors[TEXT_EMBEDDINGS_KEY]), dtype=dtype)
    model.load_state(tensors)
    return model


def evaluate_model(model: Model, data_dir: str, batch_size: int | None = None) -> MetricsReport:
    dataset = load_dataset(data_dir)
    config = model.config
    if len(dataset.class_names) != config.num_classes:
        raise ValueError(
            f"class-count mismatch: checkpoint has {config.num_classes}, "
            f"dataset has {len(dataset.class_names)}"
        )
    bs = batch_size or config.batch_size
    total = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
    for start in range(0, len(dataset), bs):
        idx = range(start, min(start + bs, len(dataset)))
        images = np.stack([load_image(dataset.images[i], model.dtype) for i in idx])
        gts = np.stack([load_mask(dataset.masks[i], config.num_classes) for i in idx])
        pred = model.predict(Tensor(images))
        total += confusion_matrix(pred, gts, config.num_classes)
    return MetricsReport(class_names=list(dataset.class_names), confusion=total)


def evaluate(checkpoint_path: str, data_dir: str) -> MetricsReport:
    return evaluate_model(model_from_checkpoint(checkpoint_path), data_dir)


def infer(checkpoint_path: str, image_path: str) -> tuple[np.ndarray, Model]:
    model = model_from_checkpoint(checkpoint_path)
    image = load_image(image_path, model.dtype)
    pred = model.predict(Tensor(image[None]))
    return pred[0], model


FEATURE_STAGES = ("hf", "conv", "topo", "blend", "a1", "a2", "a3", "a4")


def dump_feature(checkpoint_path: str, image_path: str, stage: str) -> np.ndarray:
    """Forward one image and return the requested intermediate feature."""
    if stage not in FEATURE_STAGES:
        raise ValueError(f"unknown feature stage '{stage}'")
    model = model_from_checkpoint(checkpoint_path)
    image = load_image(image_path, model.dtype)
    x = Tensor(image[None])
    bundle = model.features(x)
    if stage in ("hf", "conv", "topo", "blend"):
        tensor = {"hf": bundle.fh, "conv": bundle.fv, "topo": bundle.ft,
                  "blend": bundle.fblend}[stage]
        return tensor.data.copy()
    if model.decoder is None:
        raise ValueError("checkpoint was trained without the prompt decoder")
    captures: dict = {}
    model.decoder.decode(bundle, model.text_embeddings, captures=captures)
    from .decoder import STAGE_NAMES

    return captures[STAGE_NAMES[int(stage[1]) - 1]]
