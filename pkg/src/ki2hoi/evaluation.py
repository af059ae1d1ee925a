"""Inference-time scoring, detection assembly and HICO-DET-style mAP."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import _kernels
from .data import HOIDataset
from .geometry import cxcywh_to_xyxy
from .label_space import LabelSpace, SplitSpec

PROTOCOLS = ("default", "known_object")
SUBSETS = ("full", "rare", "non_rare", "seen", "unseen")


@dataclass(frozen=True)
class Detection:
    image_id: int
    h_box: tuple[float, float, float, float]
    o_box: tuple[float, float, float, float]
    object_id: int
    hoi_id: int
    score: float

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "h_box": list(self.h_box),
            "o_box": list(self.o_box),
            "object_id": self.object_id,
            "hoi_id": self.hoi_id,
            "score": self.score,
        }

    @classmethod
    def from_record(cls, rec: dict, space: LabelSpace | None = None) -> "Detection":
        hoi = int(rec["hoi_id"])
        obj = rec.get("object_id")
        if obj is None:
            if space is None:
                raise ValueError("detection record lacks object_id and no label space was given")
            obj = space.hois[hoi][1]
        return cls(int(rec["image_id"]), tuple(map(float, rec["h_box"])), tuple(map(float, rec["o_box"])),
                   int(obj), hoi, float(rec["score"]))


def final_scores(human_scores, object_probs, verb_logits, space: LabelSpace, fusion: str = "sum"):
    """Per-query, per-HOI scores: S_h[n] + C_o[n, o] + sigmoid(S_verb[n, v]) for HOI (v, o).

    ``object_probs`` may include the trailing background column; only the
    first C_obj columns are read.  ``fusion="product"`` multiplies instead.
    """
    s_h = torch.as_tensor(human_scores)
    c_o = torch.as_tensor(object_probs)
    verb_prob = torch.as_tensor(verb_logits).sigmoid()
    verbs = torch.as_tensor(space.hoi_verb_array())
    objects = torch.as_tensor(space.hoi_object_array())
    if fusion == "sum":
        return s_h[..., None] + c_o[..., objects] + verb_prob[..., verbs]
    if fusion == "product":
        return s_h[..., None] * c_o[..., objects] * verb_prob[..., verbs]
    raise ValueError(f"unknown fusion {fusion!r}")


def assemble_detections(scores, human_boxes, object_boxes, space: LabelSpace, image_id: int,
                        top_k: int = 100) -> list[Detection]:
    """Top-k (query, HOI) candidates of one image, descending by score.

    Ties are broken by query index, then HOI id.  Boxes come in normalized
    center form and leave as corner boxes.
    """
    scores = torch.as_tensor(scores).detach().double().cpu().numpy()
    hb = cxcywh_to_xyxy(torch.as_tensor(human_boxes).detach().double().cpu()).numpy()
    ob = cxcywh_to_xyxy(torch.as_tensor(object_boxes).detach().double().cpu()).numpy()
    N, H = scores.shape
    q_idx, h_idx = np.meshgrid(np.arange(N), np.arange(H), indexing="ij")
    flat = scores.reshape(-1)
    order = np.lexsort((h_idx.reshape(-1), q_idx.reshape(-1), -flat))[:top_k]
    objects = space.hoi_object_array()
    out = []
    for k in order:
        q, h = divmod(int(k), H)
        out.append(Detection(int(image_id), tuple(hb[q].tolist()), tuple(ob[q].tolist()), int(objects[h]), h,
                             float(flat[k])))
    return out


def match_detections(dets: Sequence[Detection], gts: Sequence[tuple], threshold: float = 0.5) -> np.ndarray:
    """TP flags for detections of a single HOI class sorted by descending score.

    ``gts`` holds (image_id, h_box, o_box) of that class.  A detection is a
    true positive when an unmatched ground truth in its image overlaps both
    boxes with IoU >= ``threshold``; each ground truth is matched once.
    """
    if not dets:
        return np.zeros(0, dtype=bool)
    det_img = np.array([d.image_id for d in dets], dtype=np.int64)
    det_h = np.array([d.h_box for d in dets], dtype=np.float64).reshape(-1, 4)
    det_o = np.array([d.o_box for d in dets], dtype=np.float64).reshape(-1, 4)
    gt_img = np.array([g[0] for g in gts], dtype=np.int64)
    gt_h = np.array([g[1] for g in gts], dtype=np.float64).reshape(-1, 4)
    gt_o = np.array([g[2] for g in gts], dtype=np.float64).reshape(-1, 4)
    return _kernels.greedy_pair_match(det_img, det_h, det_o, gt_img, gt_h, gt_o, threshold)


def average_precision(flags, scores, n_gt: int) -> float:
    """All-point interpolated AP; NaN when there is no ground truth."""
    if n_gt <= 0:
        return math.nan
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


@dataclass
class EvalReport:
    maps: dict[str, dict[str, float]]
    per_hoi_ap: dict[str, list[float]]
    setting: str = "FULL"
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "setting": self.setting,
            "mAP": {p: {k: clean(v) for k, v in d.items()} for p, d in self.maps.items()},
            "per_hoi_ap": {p: [clean(v) for v in aps] for p, aps in self.per_hoi_ap.items()},
            "counts": dict(self.counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_table(self) -> str:
        lines = [f"setting: {self.setting}"]
        cols = ("full", "rare", "non_rare", "seen", "unseen")
        header = f"{'protocol':<14}" + "".join(f"{c:>10}" for c in cols)
        lines += [header, "-" * len(header)]
        for p in PROTOCOLS:
            row = self.maps[p]
            cells = "".join(f"{'-':>10}" if math.isnan(row[c]) else f"{100 * row[c]:>10.2f}" for c in cols)
            lines.append(f"{p:<14}" + cells)
        return "\n".join(lines)


def _class_ap(dets: list[Detection], gts: list[tuple], threshold: float) -> float:
    dets = sorted(dets, key=lambda d: (-d.score, d.image_id, d.h_box, d.o_box))
    flags = match_detections(dets, gts, threshold)
    return average_precision(flags, [d.score for d in dets], len(gts))


def evaluate(detections: Iterable[Detection], gt: HOIDataset, space: LabelSpace,
             split: SplitSpec | None = None, threshold: float = 0.5) -> EvalReport:
    """mAP under both the Default and Known-Object protocols.

    Known-Object restricts each HOI class to the images holding at least one
    annotated pair with that class's object category.
    """
    H = space.num_hois
    dets_by_hoi: dict[int, list[Detection]] = {h: [] for h in range(H)}
    for d in detections:
        if not 0 <= d.hoi_id < H:
            raise ValueError(f"detection hoi_id {d.hoi_id} outside the label space")
        dets_by_hoi[d.hoi_id].append(d)
    gts_by_hoi: dict[int, list[tuple]] = {h: [] for h in range(H)}
    for image_id, h_box, o_box, hoi in gt.hoi_instances(space):
        gts_by_hoi[hoi].append((image_id, h_box, o_box))
    images_with_object: dict[int, set[int]] = {}
    for ann in gt.annotations:
        images_with_object.setdefault(ann.object_id, set()).add(ann.image_id)

    per_hoi = {"default": [], "known_object": []}
    for h in range(H):
        dets, gts = dets_by_hoi[h], gts_by_hoi[h]
        per_hoi["default"].append(_class_ap(dets, gts, threshold))
        known = images_with_object.get(space.hois[h][1], set())
        per_hoi["known_object"].append(_class_ap([d for d in dets if d.image_id in known], gts, threshold))

    subsets = {
        "full": range(H),
        "rare": sorted(space.rare),
        "non_rare": sorted(space.non_rare),
    }
    if split is not None and split.unseen:
        subsets["seen"] = sorted(split.seen)
        subsets["unseen"] = sorted(split.unseen)
    maps = {}
    for p, aps in per_hoi.items():
        maps[p] = {name: _nanmean(aps[h] for h in subsets.get(name, ())) for name in SUBSETS}
    counts = {
        "evaluated_classes": int(sum(1 for v in per_hoi["default"] if not math.isnan(v))),
        "ground_truth": int(sum(len(v) for v in gts_by_hoi.values())),
        "detections": int(sum(len(v) for v in dets_by_hoi.values())),
    }
    return EvalReport(maps, per_hoi, split.setting.value if split is not None else "FULL", counts)


def shuffled_label_chance(detections: Sequence[Detection], gt: HOIDataset, space: LabelSpace,
                          split: SplitSpec | None = None, permutations: int = 5, seed: int = 0,
                          protocol: str = "default") -> dict[str, float]:
    """Mean mAP of the same detections after permuting GT labels across pairs.

    Boxes stay in place; each pair receives the (object, verbs) label of another
    pair, so class frequencies are unchanged while box-label agreement is destroyed.
    """
    detections = list(detections)
    rng = np.random.default_rng(seed)
    labels = [(a.object_id, a.verb_ids) for a in gt.annotations]
    runs = []
    for _ in range(permutations):
        order = rng.permutation(len(labels))
        anns = [replace(a, object_id=labels[j][0], verb_ids=labels[j][1]) for a, j in zip(gt.annotations, order)]
        shuffled = HOIDataset(list(gt.images), anns, gt.root, gt.pixels)
        runs.append(evaluate(detections, shuffled, space, split).maps[protocol])
    return {k: _nanmean(r[k] for r in runs) for k in runs[0]}


def write_detections(dets: Iterable[Detection], path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in dets:
            fh.write(json.dumps(d.to_record()) + "\n")


def read_detections(path: str | Path, space: LabelSpace | None = None) -> list[Detection]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Detection.from_record(json.loads(line), space))
    return out
