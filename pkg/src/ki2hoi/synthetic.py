"""Procedural scenes in which verbs are spatial relations between a person and an object.

Each image holds one person (a pale figure) and one or two coloured objects,
every object standing in exactly one relation to the person.  Because the
relation is a deterministic function of the two boxes, every emitted label
can be re-checked from geometry alone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import HOIDataset, ImageRecord, PairAnnotation
from .label_space import LabelSpace, build_label_space

RELATIONS = ("above", "below", "left_of", "right_of", "holding")

PALETTE = (
    ("red_square", (0.9, 0.1, 0.1), "square"),
    ("green_disk", (0.1, 0.8, 0.2), "disk"),
    ("blue_square", (0.15, 0.3, 0.95), "square"),
    ("yellow_disk", (0.95, 0.9, 0.1), "disk"),
    ("magenta_square", (0.9, 0.1, 0.85), "square"),
    ("cyan_disk", (0.1, 0.9, 0.9), "disk"),
    ("orange_square", (1.0, 0.55, 0.05), "square"),
    ("purple_disk", (0.5, 0.1, 0.7), "disk"),
)


class PlacementError(RuntimeError):
    """Raised when a relation cannot be realized within the retry budget."""


@dataclass
class SyntheticSceneConfig:
    image_size: int = 64
    relations: tuple[str, ...] = RELATIONS
    num_objects: int = 8
    human_width: tuple[int, int] = (12, 16)
    human_height: tuple[int, int] = (22, 28)
    object_size: tuple[int, int] = (10, 15)
    gap: tuple[int, int] = (1, 4)
    max_pairs: int = 2
    two_pair_prob: float = 0.5
    noise: float = 0.03
    long_tail: float = 0.0
    max_retries: int = 200

    def __post_init__(self):
        self.relations = tuple(self.relations)
        unknown = set(self.relations) - set(RELATIONS)
        if unknown:
            raise ValueError(f"unsupported relations {sorted(unknown)}")
        if not 1 <= self.num_objects <= len(PALETTE):
            raise ValueError(f"num_objects must lie in [1, {len(PALETTE)}]")
        if self.image_size < 48:
            raise ValueError("image_size below 48 cannot host every relation")
        if self.noise > 0.1:
            raise ValueError("noise above 0.1 blurs the colour margins between objects")
        self.human_width = tuple(self.human_width)
        self.human_height = tuple(self.human_height)
        self.object_size = tuple(self.object_size)
        self.gap = tuple(self.gap)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**doc)


def synthetic_label_space(cfg: SyntheticSceneConfig, train_counts=None, rare_threshold: int = 10) -> LabelSpace:
    objects = [PALETTE[i][0] for i in range(cfg.num_objects)]
    pairs = [(v, o) for v in range(len(cfg.relations)) for o in range(cfg.num_objects)]
    counts = train_counts if train_counts is not None else [0] * len(pairs)
    return build_label_space(cfg.relations, objects, pairs, counts, rare_threshold)


def relation_holds(relation: str, h_box, o_box) -> bool:
    hx1, hy1, hx2, hy2 = h_box
    ox1, oy1, ox2, oy2 = o_box
    ocx, ocy = (ox1 + ox2) / 2, (oy1 + oy2) / 2
    hcx = (hx1 + hx2) / 2
    half_w = (hx2 - hx1) / 2
    if relation == "above":
        return oy2 <= hy1 and abs(ocx - hcx) <= half_w
    if relation == "below":
        return oy1 >= hy2 and abs(ocx - hcx) <= half_w
    if relation == "left_of":
        return ox2 <= hx1 and hy1 <= ocy <= hy2
    if relation == "right_of":
        return ox1 >= hx2 and hy1 <= ocy <= hy2
    if relation == "holding":
        return hx1 < ocx < hx2 and hy1 < ocy < hy2
    raise ValueError(f"unknown relation {relation!r}")


def _candidate(relation: str, h, ow, oh, gap, rng):
    hx1, hy1, hx2, hy2 = h
    if relation == "above":
        cx = rng.uniform((hx1 + hx2) / 2 - (hx2 - hx1) / 2 + 1, (hx1 + hx2) / 2 + (hx2 - hx1) / 2 - 1)
        x1 = int(round(cx - ow / 2))
        return x1, hy1 - gap - oh, x1 + ow, hy1 - gap
    if relation == "below":
        cx = rng.uniform(hx1 + 1, hx2 - 1)
        x1 = int(round(cx - ow / 2))
        return x1, hy2 + gap, x1 + ow, hy2 + gap + oh
    if relation in ("left_of", "right_of"):
        cy = rng.uniform(hy1 + 1, hy2 - 1)
        y1 = int(round(cy - oh / 2))
        if relation == "left_of":
            return hx1 - gap - ow, y1, hx1 - gap, y1 + oh
        return hx2 + gap, y1, hx2 + gap + ow, y1 + oh
    cx = rng.uniform(hx1 + 2, hx2 - 2)
    cy = rng.uniform(hy1 + 3, hy2 - 3)
    x1, y1 = int(round(cx - ow / 2)), int(round(cy - oh / 2))
    return x1, y1, x1 + ow, y1 + oh


def _inside(box, size):
    return box[0] >= 0 and box[1] >= 0 and box[2] <= size and box[3] <= size


def _disjoint(a, b, margin=1):
    return a[2] + margin <= b[0] or b[2] + margin <= a[0] or a[3] + margin <= b[1] or b[3] + margin <= a[1]


def _draw_human(img, box):
    x1, y1, x2, y2 = box
    head = max(4, (x2 - x1) // 2)
    hx = (x1 + x2) // 2
    img[:, y1 : y1 + head, hx - head // 2 : hx - head // 2 + head] = 0.92
    img[:, y1 + head : y2, x1 + 2 : x2 - 2] = 0.85
    img[:, y1 + head + 1 : y1 + head + 4, x1:x2] = 0.85  # arms


def _draw_object(img, box, color, shape):
    x1, y1, x2, y2 = box
    if shape == "square":
        for c in range(3):
            img[c, y1:y2, x1:x2] = color[c]
        return
    yy, xx = np.mgrid[y1:y2, x1:x2]
    cy, cx = (y1 + y2 - 1) / 2, (x1 + x2 - 1) / 2
    mask = ((yy - cy) / ((y2 - y1) / 2)) ** 2 + ((xx - cx) / ((x2 - x1) / 2)) ** 2 <= 1.0
    for c in range(3):
        img[c, y1:y2, x1:x2][mask] = color[c]


def _hoi_probabilities(space: LabelSpace, cfg: SyntheticSceneConfig, rng) -> np.ndarray:
    if cfg.long_tail <= 0:
        return np.full(space.num_hois, 1.0 / space.num_hois)
    ranks = rng.permutation(space.num_hois) + 1
    p = ranks.astype(float) ** (-cfg.long_tail)
    return p / p.sum()


def _sample_scene(cfg: SyntheticSceneConfig, space: LabelSpace, hoi_probs, rng):
    S = cfg.image_size
    n_pairs = 2 if (cfg.max_pairs >= 2 and rng.random() < cfg.two_pair_prob) else 1
    for _ in range(cfg.max_retries):
        hw = int(rng.integers(cfg.human_width[0], cfg.human_width[1] + 1))
        hh = int(rng.integers(cfg.human_height[0], cfg.human_height[1] + 1))
        hx1 = int(rng.integers(0, S - hw + 1))
        hy1 = int(rng.integers(0, S - hh + 1))
        h_box = (hx1, hy1, hx1 + hw, hy1 + hh)
        hois = rng.choice(space.num_hois, size=n_pairs, replace=True, p=hoi_probs)
        pairs = []
        used_relations = set()
        ok = True
        for hoi in hois:
            v, o = space.hois[int(hoi)]
            rel = space.verbs[v]
            if rel in used_relations:
                ok = False
                break
            ow = int(rng.integers(cfg.object_size[0], cfg.object_size[1] + 1))
            oh = int(rng.integers(cfg.object_size[0], cfg.object_size[1] + 1))
            gap = int(rng.integers(cfg.gap[0], cfg.gap[1] + 1))
            o_box = _candidate(rel, h_box, ow, oh, gap, rng)
            if not _inside(o_box, S) or any(not _disjoint(o_box, p[1]) for p in pairs):
                ok = False
                break
            if [r for r in RELATIONS if relation_holds(r, h_box, o_box)] != [rel]:
                ok = False
                break
            used_relations.add(rel)
            pairs.append((v, o_box, o))
        if ok:
            return h_box, pairs
    raise PlacementError(f"could not place {n_pairs} relations after {cfg.max_retries} attempts")


def render_scene(cfg: SyntheticSceneConfig, h_box, pairs, rng) -> np.ndarray:
    S = cfg.image_size
    img = np.full((3, S, S), 0.15, dtype=np.float64)
    _draw_human(img, h_box)
    for _, o_box, o in pairs:
        _, color, shape = PALETTE[o]
        _draw_object(img, o_box, color, shape)
    if cfg.noise > 0:
        img += rng.normal(0.0, cfg.noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_dataset(cfg: SyntheticSceneConfig, space: LabelSpace, n_images: int, seed: int = 0,
                               first_id: int = 0):
    """Returns (dataset, train_counts); ``train_counts[h]`` counts HOI ``h`` labels."""
    missing = set(space.verbs) - set(cfg.relations)
    if missing:
        raise ValueError(f"verbs {sorted(missing)} have no configured relation")
    if space.num_objects > len(PALETTE):
        raise ValueError("label space has more objects than the palette")
    rng = np.random.default_rng(seed)
    hoi_probs = _hoi_probabilities(space, cfg, np.random.default_rng([seed, 1]))
    S = cfg.image_size
    images, anns, pixels = [], [], {}
    for k in range(n_images):
        image_id = first_id + k
        h_box, pairs = _sample_scene(cfg, space, hoi_probs, rng)
        for v, o_box, o in pairs:
            assert relation_holds(space.verbs[v], h_box, o_box)
        pixels[image_id] = render_scene(cfg, h_box, pairs, rng)
        images.append(ImageRecord(image_id, S, S, f"img_{image_id:06d}.png"))
        for v, o_box, o in pairs:
            anns.append(
                PairAnnotation(image_id, tuple(c / S for c in h_box), tuple(c / S for c in o_box), o, (v,))
            )
    dataset = HOIDataset(images, anns, None, pixels)
    return dataset, dataset.hoi_counts(space)
