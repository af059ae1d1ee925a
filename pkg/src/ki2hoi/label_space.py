"""HOI taxonomy, prompt templates and zero-shot split protocols."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class LabelSpaceError(ValueError):
    """Raised when a label space or split document is malformed."""


class InfeasibleSplitError(ValueError):
    """Raised when a split cannot satisfy its coverage constraint."""


class Setting(str, enum.Enum):
    FULL = "FULL"
    UC = "UC"
    RF_UC = "RF_UC"
    NF_UC = "NF_UC"
    UO = "UO"
    UV = "UV"

    @classmethod
    def parse(cls, value: "str | Setting") -> "Setting":
        if isinstance(value, Setting):
            return value
        key = str(value).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise LabelSpaceError(f"unknown zero-shot setting {value!r}") from None


@dataclass(frozen=True)
class LabelSpace:
    verbs: tuple[str, ...]
    objects: tuple[str, ...]
    hois: tuple[tuple[int, int], ...]
    train_counts: tuple[int, ...]
    rare_threshold: int = 10
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {pair: i for i, pair in enumerate(self.hois)})

    @property
    def num_verbs(self) -> int:
        return len(self.verbs)

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def num_hois(self) -> int:
        return len(self.hois)

    @property
    def rare(self) -> frozenset[int]:
        return frozenset(h for h, c in enumerate(self.train_counts) if c < self.rare_threshold)

    @property
    def non_rare(self) -> frozenset[int]:
        return frozenset(range(self.num_hois)) - self.rare

    def hoi_id(self, verb_id: int, object_id: int) -> int | None:
        return self._index.get((verb_id, object_id))

    def hoi_verb_array(self) -> np.ndarray:
        return np.array([v for v, _ in self.hois], dtype=np.int64)

    def hoi_object_array(self) -> np.ndarray:
        return np.array([o for _, o in self.hois], dtype=np.int64)

    def with_counts(self, counts: Sequence[int]) -> "LabelSpace":
        return build_label_space(self.verbs, self.objects, self.hois, counts, self.rare_threshold)

    def to_dict(self) -> dict:
        return {
            "verbs": list(self.verbs),
            "objects": list(self.objects),
            "hois": [list(p) for p in self.hois],
            "train_counts": list(self.train_counts),
            "rare_threshold": self.rare_threshold,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "LabelSpace":
        missing = {"verbs", "objects", "hois"} - set(doc)
        if missing:
            raise LabelSpaceError(f"label-space document lacks {sorted(missing)}")
        counts = doc.get("train_counts")
        if counts is None:
            counts = [0] * len(doc["hois"])
        return build_label_space(
            doc["verbs"], doc["objects"], doc["hois"], counts, int(doc.get("rare_threshold", 10))
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "LabelSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_label_space(
    verbs: Iterable[str],
    objects: Iterable[str],
    hoi_pairs: Iterable[Sequence[int]],
    train_counts: Iterable[int],
    rare_threshold: int = 10,
) -> LabelSpace:
    verbs = tuple(str(v) for v in verbs)
    objects = tuple(str(o) for o in objects)
    pairs = tuple((int(p[0]), int(p[1])) for p in hoi_pairs)
    counts = tuple(int(c) for c in train_counts)
    for kind, names in (("verb", verbs), ("object", objects)):
        if len(set(names)) != len(names):
            raise LabelSpaceError(f"duplicate {kind} names")
        if any(not n for n in names):
            raise LabelSpaceError(f"empty {kind} name")
    if len(counts) != len(pairs):
        raise LabelSpaceError(f"{len(counts)} train counts for {len(pairs)} HOIs")
    if any(c < 0 for c in counts):
        raise LabelSpaceError("train counts must be non-negative")
    if len(set(pairs)) != len(pairs):
        raise LabelSpaceError("duplicate (verb, object) pairs")
    for v, o in pairs:
        if not (0 <= v < len(verbs)) or not (0 <= o < len(objects)):
            raise LabelSpaceError(f"HOI ({v}, {o}) references an unknown verb or object")
    return LabelSpace(verbs, objects, pairs, counts, int(rare_threshold))


def _readable(name: str) -> str:
    return name.replace("_", " ").strip()


def _article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def hoi_prompt(verb_name: str, object_name: str) -> str:
    if not verb_name or not object_name:
        raise ValueError("prompt names must be non-empty")
    obj = _readable(object_name)
    return f"A photo of a person {_readable(verb_name)} {_article(obj)} {obj}"


def object_prompt(object_name: str) -> str:
    if not object_name:
        raise ValueError("prompt names must be non-empty")
    obj = _readable(object_name)
    return f"A photo of {_article(obj)} {obj}"


@dataclass(frozen=True)
class SplitSpec:
    setting: Setting
    unseen_hoi_ids: tuple[int, ...]
    seed: int
    num_hois: int

    @property
    def unseen(self) -> frozenset[int]:
        return frozenset(self.unseen_hoi_ids)

    @property
    def seen(self) -> frozenset[int]:
        return frozenset(range(self.num_hois)) - self.unseen

    def to_dict(self) -> dict:
        return {
            "setting": self.setting.value,
            "seed": self.seed,
            "num_hois": self.num_hois,
            "unseen_hoi_ids": list(self.unseen_hoi_ids),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], num_hois: int | None = None) -> "SplitSpec":
        try:
            setting = Setting.parse(doc["setting"])
            unseen = tuple(sorted(int(h) for h in doc["unseen_hoi_ids"]))
        except KeyError as exc:
            raise LabelSpaceError(f"split document lacks {exc.args[0]!r}") from None
        n = int(doc.get("num_hois", num_hois if num_hois is not None else -1))
        if n < 0:
            raise LabelSpaceError("split document needs num_hois")
        if any(not 0 <= h < n for h in unseen):
            raise LabelSpaceError("unseen id outside [0, H)")
        return cls(setting, unseen, int(doc.get("seed", 0)), n)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "SplitSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def full_split(space: LabelSpace, seed: int = 0) -> SplitSpec:
    return SplitSpec(Setting.FULL, (), seed, space.num_hois)


def _resolve_names(requested, names: Sequence[str], kind: str) -> list[int]:
    ids = []
    for item in requested:
        if isinstance(item, (int, np.integer)):
            idx = int(item)
        elif item in names:
            idx = names.index(item)
        else:
            raise LabelSpaceError(f"unknown {kind} {item!r}")
        if not 0 <= idx < len(names):
            raise LabelSpaceError(f"{kind} id {idx} out of range")
        ids.append(idx)
    return sorted(set(ids))


def _pick_combinations(space: LabelSpace, order: Sequence[int], n: int, setting: Setting) -> list[int]:
    # keep every verb and every object present in at least one seen HOI
    verb_left = np.bincount(space.hoi_verb_array(), minlength=space.num_verbs)
    obj_left = np.bincount(space.hoi_object_array(), minlength=space.num_objects)
    picked = []
    for h in order:
        if len(picked) == n:
            break
        v, o = space.hois[h]
        if verb_left[v] <= 1 or obj_left[o] <= 1:
            continue
        verb_left[v] -= 1
        obj_left[o] -= 1
        picked.append(int(h))
    if len(picked) < n:
        raise InfeasibleSplitError(
            f"{setting.value}: only {len(picked)} of {n} combinations can be held out "
            "while every verb and object stays seen"
        )
    return picked


def make_split(
    space: LabelSpace,
    setting: "Setting | str",
    params: Mapping[str, Any] | None = None,
    seed: int = 0,
) -> SplitSpec:
    """Partition the HOI ids of ``space`` into seen and unseen sets.

    ``params`` carries the hold-out size for the setting (``n_unseen_hoi``,
    ``n_unseen_obj`` or ``n_unseen_verb``) or an explicit ``verbs`` /
    ``objects`` list for UV / UO.
    """
    setting = Setting.parse(setting)
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    H = space.num_hois
    if setting is Setting.FULL:
        unseen: list[int] = []
    elif setting in (Setting.UC, Setting.RF_UC, Setting.NF_UC):
        n = int(params.get("n_unseen_hoi", 120))
        if not 0 <= n <= H:
            raise LabelSpaceError(f"n_unseen_hoi={n} outside [0, {H}]")
        counts = space.train_counts
        if setting is Setting.RF_UC:
            order = sorted(range(H), key=lambda h: (counts[h], h))
        elif setting is Setting.NF_UC:
            order = sorted(range(H), key=lambda h: (-counts[h], h))
        else:
            order = [int(h) for h in rng.permutation(H)]
        unseen = _pick_combinations(space, order, n, setting)
    elif setting is Setting.UO:
        if "objects" in params:
            chosen = _resolve_names(params["objects"], space.objects, "object")
        else:
            n = int(params.get("n_unseen_obj", 12))
            if not 0 <= n <= space.num_objects:
                raise LabelSpaceError(f"n_unseen_obj={n} outside [0, {space.num_objects}]")
            chosen = sorted(int(o) for o in rng.choice(space.num_objects, size=n, replace=False))
        chosen_set = set(chosen)
        unseen = [h for h, (_, o) in enumerate(space.hois) if o in chosen_set]
    else:
        if "verbs" in params:
            chosen = _resolve_names(params["verbs"], space.verbs, "verb")
        else:
            n = int(params.get("n_unseen_verb", 20))
            if not 0 <= n <= space.num_verbs:
                raise LabelSpaceError(f"n_unseen_verb={n} outside [0, {space.num_verbs}]")
            chosen = sorted(int(v) for v in rng.choice(space.num_verbs, size=n, replace=False))
        chosen_set = set(chosen)
        unseen = [h for h, (v, _) in enumerate(space.hois) if v in chosen_set]
    return SplitSpec(setting, tuple(sorted(unseen)), int(seed), H)
