"""Desk-scale training on the synthetic generator, and manifest evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .events import SensorGeometry, SyntheticSpec, generate_synthetic, read_stream
from .model import MTGAModel, ModelConfig, train_step

log = logging.getLogger(__name__)

TOY_GEOMETRY = SensorGeometry(32, 32)


def toy_config(classes: int = 2, **overrides) -> ModelConfig:
    base = dict(
        classes=classes, fusion_layers=2, bins=8, slices_per_bin=3, voxel_h=4, voxel_w=4,
        top_k=16, points=8, radius=2.0, stem_channels=8, stem_stride=2, frame_channels=8,
        frame_strides=(2, 1), graph_channels=8, graph_map_channels=4, gmm_kernels=2,
        pos_channels=4, gru_hidden=8, attention_dim=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_spec(class_id: int, duration_ms: float = 200.0) -> SyntheticSpec:
    return SyntheticSpec(
        class_id=class_id, duration_ms=duration_ms, geometry=TOY_GEOMETRY,
        pattern_rate=10_000.0, noise_rate=1_000.0,
    )


def toy_streams(classes: int, per_class: int, seed: int):
    """Deterministic labelled streams; seeds never overlap between (seed, class, i)."""
    out = []
    for i in range(per_class):
        for c in range(classes):
            s = (seed * 1_000_003 + c) * 10_007 + i
            out.append((generate_synthetic(toy_spec(c), s), c))
    return out


@dataclass
class TrainResult:
    model: MTGAModel
    losses: list
    train_accuracy: float


def accuracy(model: MTGAModel, samples) -> float:
    if not samples:
        return float("nan")
    hits = sum(int(np.argmax(model.predict(s)) == label) for s, label in samples)
    return hits / len(samples)


def train_toy(classes: int = 2, steps: int = 300, seed: int = 1, per_class: int = 24,
              batch_size: int = 8, lr: float = 0.05, momentum: float = 0.9,
              cfg: ModelConfig | None = None, eval_every: int = 25,
              target_accuracy: float | None = 1.0) -> TrainResult:
    """Train a tiny model on synthetic streams.

    Stops early once the training accuracy, checked every ``eval_every``
    steps, reaches ``target_accuracy``.
    """
    cfg = cfg or toy_config(classes)
    model = MTGAModel(cfg, seed=seed)
    data = [(model.prepare(s), c) for s, c in toy_streams(classes, per_class, seed)]
    opt = ad.SGD(model.parameters(), lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    losses, acc = [], 0.0
    order = rng.permutation(len(data))
    cursor = 0
    for step in range(1, steps + 1):
        if cursor + batch_size > len(order):
            order, cursor = rng.permutation(len(data)), 0
        batch = [data[i] for i in order[cursor:cursor + batch_size]]
        cursor += batch_size
        losses.append(train_step(batch, model, opt))
        if step % eval_every == 0 or step == steps:
            acc = accuracy(model, data)
            log.info("step %d loss %.4f train acc %.3f", step, losses[-1], acc)
            if target_accuracy is not None and acc >= target_accuracy:
                break
    return TrainResult(model, losses, acc)


# --------------------------------------------------------------------------
# manifests

def read_manifest(path) -> list[tuple[str, int, int]]:
    """Rows of (path_evs, label, subset); relative paths resolve against the manifest."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#") or rec[0] == "path_evs":
                continue
            evs, label, subset = rec[0].strip(), int(rec[1]), int(rec[2])
            if subset not in (1, 2):
                raise ValueError(f"subset must be 1 or 2, got {subset}")
            p = Path(evs)
            rows.append((str(p if p.is_absolute() else path.parent / p), label, subset))
    return rows


def score(predictions, labels, subsets) -> dict:
    """Overall and per-subset accuracy in percent; an empty subset reports None."""
    predictions, labels, subsets = map(np.asarray, (predictions, labels, subsets))

    def pct(mask):
        return 100.0 * float(np.mean(predictions[mask] == labels[mask])) if mask.any() else None

    everything = np.ones(len(labels), dtype=bool)
    return {"Acc": pct(everything), "Acc1": pct(subsets == 1), "Acc2": pct(subsets == 2)}


def evaluate_manifest(model: MTGAModel, rows, threads: int = 1) -> dict:
    preds, labels, subsets = [], [], []
    for path, label, subset in rows:
        if label >= model.cfg.classes:
            raise ValueError(f"label {label} out of range for {model.cfg.classes} classes")
        probs = model.predict(model.prepare(read_stream(path), threads=threads))
        preds.append(int(np.argmax(probs)))
        labels.append(label)
        subsets.append(subset)
    return score(preds, labels, subsets)


def format_accuracy(value) -> str:
    return "n/a" if value is None else f"{value:.2f}"

