"""Annotation records in the HICO-DET-like schema and split filtering.

On disk a dataset is a directory holding ``annotations.json``::

    {"images": [{"id", "width", "height", "file"}],
     "annotations": [{"image_id", "h_bbox", "o_bbox", "object_id", "verb_ids"}]}

with boxes as pixel corner boxes, plus the image files it names.  In memory
boxes are normalized corner boxes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import normalize_pixel_box
from .label_space import LabelSpace, SplitSpec


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file: str


@dataclass(frozen=True)
class PairAnnotation:
    image_id: int
    h_box: tuple[float, float, float, float]
    o_box: tuple[float, float, float, float]
    object_id: int
    verb_ids: tuple[int, ...]


@dataclass
class HOIDataset:
    images: list[ImageRecord]
    annotations: list[PairAnnotation]
    root: Path | None = None
    pixels: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.images)

    def by_image(self) -> dict[int, list[PairAnnotation]]:
        out: dict[int, list[PairAnnotation]] = {rec.id: [] for rec in self.images}
        for ann in self.annotations:
            out.setdefault(ann.image_id, []).append(ann)
        return out

    def image_array(self, image_id: int) -> np.ndarray:
        """Float image in [0, 1], shape 3 x H x W."""
        if image_id in self.pixels:
            return self.pixels[image_id]
        rec = next(r for r in self.images if r.id == image_id)
        if self.root is None:
            raise FileNotFoundError(f"no pixels held for image {image_id} and no dataset root")
        from PIL import Image

        with Image.open(self.root / rec.file) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))

    def subset(self, image_ids: Iterable[int]) -> "HOIDataset":
        keep = set(int(i) for i in image_ids)
        return HOIDataset(
            [r for r in self.images if r.id in keep],
            [a for a in self.annotations if a.image_id in keep],
            self.root,
            {k: v for k, v in self.pixels.items() if k in keep},
        )

    def hoi_instances(self, space: LabelSpace) -> list[tuple[int, tuple, tuple, int]]:
        """Flatten to (image_id, h_box, o_box, hoi_id) ground-truth triplets."""
        out = []
        for ann in self.annotations:
            for v in ann.verb_ids:
                h = space.hoi_id(v, ann.object_id)
                if h is None:
                    raise ValueError(f"({v}, {ann.object_id}) is not an HOI of the label space")
                out.append((ann.image_id, ann.h_box, ann.o_box, h))
        return out

    def hoi_counts(self, space: LabelSpace) -> list[int]:
        counts = [0] * space.num_hois
        for _, _, _, h in self.hoi_instances(space):
            counts[h] += 1
        return counts

    def to_document(self) -> dict:
        sizes = {r.id: (r.width, r.height) for r in self.images}
        anns = []
        for a in self.annotations:
            w, h = sizes[a.image_id]
            anns.append(
                {
                    "image_id": a.image_id,
                    "h_bbox": [a.h_box[0] * w, a.h_box[1] * h, a.h_box[2] * w, a.h_box[3] * h],
                    "o_bbox": [a.o_box[0] * w, a.o_box[1] * h, a.o_box[2] * w, a.o_box[3] * h],
                    "object_id": a.object_id,
                    "verb_ids": list(a.verb_ids),
                }
            )
        return {
            "images": [{"id": r.id, "width": r.width, "height": r.height, "file": r.file} for r in self.images],
            "annotations": anns,
        }


def load_annotations(path: str | Path) -> HOIDataset:
    path = Path(path)
    if path.is_dir():
        path = path / "annotations.json"
    doc = json.loads(path.read_text())
    return dataset_from_document(doc, root=path.parent)


def dataset_from_document(doc: dict, root: Path | None = None) -> HOIDataset:
    try:
        images = [ImageRecord(int(r["id"]), int(r["width"]), int(r["height"]), str(r["file"])) for r in doc["images"]]
        sizes = {r.id: (r.width, r.height) for r in images}
        anns = []
        for a in doc["annotations"]:
            w, h = sizes[int(a["image_id"])]
            anns.append(
                PairAnnotation(
                    int(a["image_id"]),
                    normalize_pixel_box(a["h_bbox"], w, h),
                    normalize_pixel_box(a["o_bbox"], w, h),
                    int(a["object_id"]),
                    tuple(int(v) for v in a["verb_ids"]),
                )
            )
    except KeyError as exc:
        raise ValueError(f"annotation document lacks field {exc.args[0]!r}") from None
    return HOIDataset(images, anns, root)


def save_dataset(dataset: HOIDataset, root: str | Path) -> Path:
    from PIL import Image

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for rec in dataset.images:
        arr = dataset.image_array(rec.id)
        img = np.clip(np.rint(arr.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(root / rec.file)
    out = root / "annotations.json"
    out.write_text(json.dumps(dataset.to_document()))
    return out


def filter_training_annotations(dataset: HOIDataset, split: SplitSpec, space: LabelSpace) -> HOIDataset:
    """Drop unseen-HOI labels; pairs left with no verb are removed, images kept."""
    unseen = split.unseen
    if not unseen:
        return dataset
    kept = []
    for ann in dataset.annotations:
        verbs = tuple(v for v in ann.verb_ids if space.hoi_id(v, ann.object_id) not in unseen)
        if verbs:
            kept.append(ann if verbs == ann.verb_ids else replace(ann, verb_ids=verbs))
    return HOIDataset(list(dataset.images), kept, dataset.root, dict(dataset.pixels))


def subsample_fraction(dataset: HOIDataset, fraction: float, seed: int) -> HOIDataset:
    if not 0 < fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    if fraction == 1:
        return dataset
    n = int(np.floor(fraction * len(dataset.images)))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(dataset.images), size=n, replace=False).tolist())
    return dataset.subset(dataset.images[i].id for i in chosen)
