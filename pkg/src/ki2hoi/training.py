"""Optimization loop, batching and inference over datasets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .data import HOIDataset, filter_training_annotations, subsample_fraction
from .evaluation import Detection, assemble_detections, final_scores
from .geometry import xyxy_to_cxcywh
from .label_space import SplitSpec
from .matching import LossWeights, compute_losses, match_batch

LOSS_KEYS = ("L_b", "L_u", "L_o", "L_i", "L_re", "L_total")


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss term is NaN or infinite; ``terms`` holds every component."""

    def __init__(self, step: int, terms: dict[str, float]):
        bad = [k for k, v in terms.items() if not math.isfinite(v)]
        super().__init__(f"non-finite loss at step {step}: {', '.join(bad)} ({json.dumps(terms)})")
        self.step = step
        self.terms = terms
        self.offending = bad


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 30
    lr_drop: int = 20
    batch_size: int = 4
    train_fraction: float = 1.0
    grad_clip: float = 0.1
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.lr_drop < self.epochs:
            raise ValueError("lr_drop must satisfy 0 <= lr_drop < epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        doc = dict(doc)
        if isinstance(doc.get("loss"), dict):
            lw_known = {f.name for f in fields(LossWeights)}
            bad = set(doc["loss"]) - lw_known
            if bad:
                raise ValueError(f"unknown loss keys: {sorted(bad)}")
        return cls(**doc)


def build_targets(dataset: HOIDataset, image_ids, num_verbs: int) -> list[dict]:
    """Per-image matching targets with center-form boxes and multi-hot verbs."""
    per_image = dataset.by_image()
    out = []
    for image_id in image_ids:
        anns = per_image.get(image_id, [])
        verbs = torch.zeros((len(anns), num_verbs))
        for i, a in enumerate(anns):
            verbs[i, list(a.verb_ids)] = 1.0
        h = torch.tensor([a.h_box for a in anns], dtype=torch.float32).reshape(-1, 4)
        o = torch.tensor([a.o_box for a in anns], dtype=torch.float32).reshape(-1, 4)
        out.append(
            {
                "human_boxes": xyxy_to_cxcywh(h),
                "object_boxes": xyxy_to_cxcywh(o),
                "objects": torch.tensor([a.object_id for a in anns], dtype=torch.long),
                "verbs": verbs,
            }
        )
    return out


def load_images(dataset: HOIDataset, image_ids) -> torch.Tensor:
    return torch.stack([torch.from_numpy(np.asarray(dataset.image_array(i), dtype=np.float32)) for i in image_ids])


def train_step(model, images: torch.Tensor, targets: list[dict], optimizer, weights: LossWeights,
               grad_clip: float = 0.0, step: int = 0) -> dict[str, float]:
    """One forward/match/backward/update cycle; returns every loss term as a float."""
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    model.train()
    outputs = model(images)
    targets = [{k: v.to(outputs["human_boxes"].dtype) if v.is_floating_point() else v for k, v in t.items()}
               for t in targets]
    assignments = match_batch(outputs, targets, weights)
    losses = compute_losses(outputs, targets, assignments, weights)
    terms = {k: float(v.detach()) for k, v in losses.items()}
    if not all(math.isfinite(v) for v in terms.values()):
        raise NonFiniteLossError(step, terms)
    optimizer.zero_grad(set_to_none=True)
    losses["L_total"].backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return terms


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.AdamW:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


class MetricsLog:
    """Line-delimited ``{"step", "key", "value"}`` records, optionally mirrored to a file."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("")

    def log(self, step: int, key: str, value: float) -> None:
        rec = {"step": int(step), "key": key, "value": float(value)}
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    def series(self, key: str) -> list[float]:
        return [r["value"] for r in self.records if r["key"] == key]


@dataclass
class FitResult:
    log: MetricsLog
    epoch_lrs: list[float]
    train_images: list[int]
    steps: int


def fit(model, dataset: HOIDataset, cfg: TrainConfig, split: SplitSpec | None = None, *,
        log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
        resume: str | Path | None = None,
        on_epoch: Callable[[int, dict], None] | None = None) -> FitResult:
    """Train ``model`` on ``dataset`` under ``split``.

    The learning rate drops by 10x once ``lr_drop`` epochs have completed.
    ``train_fraction`` keeps a seeded subset of the images.  With
    ``resume`` the checkpoint must come from the same model, train config
    and split; training continues from its recorded epoch.
    """
    from .checkpoint import load_checkpoint, save_checkpoint

    space = model.space
    if split is not None:
        if split.num_hois != space.num_hois:
            raise ValueError("split and label space disagree on the number of HOIs")
        dataset = filter_training_annotations(dataset, split, space)
    dataset = subsample_fraction(dataset, cfg.train_fraction, cfg.seed)
    image_ids = [r.id for r in dataset.images]
    if not image_ids:
        raise ValueError("no training images")
    targets = dict(zip(image_ids, build_targets(dataset, image_ids, space.num_verbs)))
    images = dict(zip(image_ids, load_images(dataset, image_ids)))

    optimizer = make_optimizer(model, cfg)
    start_epoch = 0
    if resume is not None:
        start_epoch = load_checkpoint(resume, model, optimizer, expect_train=cfg, expect_split=split)

    log = MetricsLog(log_path)
    rng = np.random.default_rng(cfg.seed)
    epoch_lrs = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(image_ids))
        if epoch < start_epoch:
            step += -(-len(order) // cfg.batch_size)
            continue
        lr = cfg.lr * (0.1 if epoch >= cfg.lr_drop else 1.0)
        for group in optimizer.param_groups:
            group["lr"] = lr
        epoch_lrs.append(lr)
        log.log(step, "lr", lr)
        sums = {k: 0.0 for k in LOSS_KEYS}
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            ids = [image_ids[i] for i in order[start : start + cfg.batch_size]]
            batch = torch.stack([images[i] for i in ids])
            terms = train_step(model, batch, [targets[i] for i in ids], optimizer, cfg.loss, cfg.grad_clip, step)
            for k in LOSS_KEYS:
                log.log(step, k, terms[k])
                sums[k] += terms[k]
            batches += 1
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, {k: v / batches for k, v in sums.items()})
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizer, cfg, split, epoch=cfg.epochs)
    return FitResult(log, epoch_lrs, image_ids, step)


@torch.no_grad()
def predict(model, dataset: HOIDataset, top_k: int = 100, batch_size: int = 8) -> list[Detection]:
    """Top-k HOI detections for every image of ``dataset``."""
    model.eval()
    space = model.space
    dets: list[Detection] = []
    ids = [r.id for r in dataset.images]
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        out = model(load_images(dataset, chunk))
        inst = model.instance_predictions(out)
        scores = final_scores(inst.human_scores, inst.object_probs, out["verb_logits"], space,
                              model.config.score_fusion)
        for b, image_id in enumerate(chunk):
            dets.extend(
                assemble_detections(scores[b], out["human_boxes"][b], out["object_boxes"][b], space, image_id, top_k)
            )
    return dets
