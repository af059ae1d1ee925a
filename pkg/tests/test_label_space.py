import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ki2hoi.data import HOIDataset, ImageRecord, PairAnnotation, filter_training_annotations
from ki2hoi.label_space import (
    InfeasibleSplitError,
    LabelSpace,
    LabelSpaceError,
    Setting,
    SplitSpec,
    build_label_space,
    full_split,
    hoi_prompt,
    make_split,
    object_prompt,
)
from ki2hoi.synthetic import SyntheticSceneConfig, synthetic_label_space


def synthetic_space(counts=None):
    return synthetic_label_space(SyntheticSceneConfig(), counts)


def hico_scale_space(seed=0):
    """117 verbs, 80 objects, 600 HOIs with a long-tailed count profile."""
    rng = np.random.default_rng(seed)
    verbs = [f"verb_{i}" for i in range(117)]
    objects = [f"object_{i}" for i in range(80)]
    pairs = {(v, v % 80) for v in range(117)} | {(v % 117, o) for o in range(80) for v in [o]}
    while len(pairs) < 600:
        pairs.add((int(rng.integers(117)), int(rng.integers(80))))
    pairs = sorted(pairs)
    counts = np.floor(np.exp(rng.uniform(0, 8, len(pairs)))).astype(int) - 1
    return build_label_space(verbs, objects, pairs, counts.tolist(), 10)


# ---- LabelSpace

def test_synthetic_space_ids_follow_nested_loop():
    space = synthetic_space()
    expected = [(v, o) for v in range(5) for o in range(8)]
    assert space.num_hois == 40 and list(space.hois) == expected
    for h, (v, o) in enumerate(expected):
        assert space.hoi_id(v, o) == h


def test_degenerate_space():
    space = build_label_space(["hold"], ["cup"], [(0, 0)], [0], 10)
    assert space.num_hois == 1 and space.rare == {0}


def test_rare_set_definition(toy_space):
    assert toy_space.rare == {0, 2, 5}
    assert toy_space.non_rare == {1, 3, 4}


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(verbs=["a", "a"], objects=["x"], hoi_pairs=[(0, 0)], train_counts=[0]),
        dict(verbs=["a"], objects=["x"], hoi_pairs=[(1, 0)], train_counts=[0]),
        dict(verbs=["a"], objects=["x"], hoi_pairs=[(0, 0), (0, 0)], train_counts=[0, 0]),
        dict(verbs=["a"], objects=["x"], hoi_pairs=[(0, 0)], train_counts=[0, 1]),
        dict(verbs=["a"], objects=["x"], hoi_pairs=[(0, 0)], train_counts=[-1]),
    ],
)
def test_invalid_spaces_rejected(kwargs):
    with pytest.raises(LabelSpaceError):
        build_label_space(**kwargs)


def test_space_json_round_trip(tmp_path, toy_space):
    path = tmp_path / "space.json"
    toy_space.save(path)
    assert LabelSpace.load(path) == toy_space


# ---- prompts

def test_prompts():
    assert hoi_prompt("ride", "horse") == "A photo of a person ride a horse"
    assert object_prompt("umbrella") == "A photo of an umbrella"
    assert hoi_prompt("no_interaction", "dining_table") == "A photo of a person no interaction a dining table"
    assert object_prompt("apple") == "A photo of an apple"
    with pytest.raises(ValueError):
        hoi_prompt("", "cup")


# ---- splits

@pytest.mark.parametrize("setting", list(Setting))
def test_split_partitions_and_is_deterministic(setting):
    space = synthetic_space(list(range(40)))
    params = {"n_unseen_hoi": 8, "n_unseen_obj": 2, "n_unseen_verb": 1}
    a = make_split(space, setting, params, seed=4)
    b = make_split(space, setting, params, seed=4)
    assert a == b and json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.seen | a.unseen == set(range(40)) and not a.seen & a.unseen


def test_rf_uc_picks_lowest_counts():
    rng = np.random.default_rng(1)
    counts = rng.permutation(40).tolist()
    space = synthetic_space(counts)
    split = make_split(space, Setting.RF_UC, {"n_unseen_hoi": 8})
    oracle = sorted(range(40), key=lambda h: (counts[h], h))[:8]
    assert sorted(split.unseen) == sorted(oracle)


def test_nf_uc_picks_highest_counts_with_id_ties():
    counts = [5] * 40
    space = synthetic_space(counts)
    split = make_split(space, Setting.NF_UC, {"n_unseen_hoi": 3})
    assert split.unseen_hoi_ids == (0, 1, 2)


def test_rf_uc_skips_candidates_that_would_hide_a_verb():
    space = build_label_space(["a", "b"], ["x", "y"], [(0, 0), (1, 0), (1, 1)], [0, 1, 2], 10)
    split = make_split(space, Setting.RF_UC, {"n_unseen_hoi": 1})
    # HOI 0 is the only one for verb a, so the next lowest is taken
    assert split.unseen_hoi_ids == (1,)


def test_infeasible_uc_raises():
    space = build_label_space(["a"], ["x"], [(0, 0)], [3], 10)
    with pytest.raises(InfeasibleSplitError):
        make_split(space, Setting.UC, {"n_unseen_hoi": 1})


@pytest.mark.parametrize("setting", [Setting.UC, Setting.RF_UC, Setting.NF_UC])
def test_combination_splits_keep_every_part_seen(setting):
    space = hico_scale_space()
    split = make_split(space, setting, {"n_unseen_hoi": 120}, seed=2)
    assert len(split.unseen) == 120
    seen_verbs = {space.hois[h][0] for h in split.seen}
    seen_objects = {space.hois[h][1] for h in split.seen}
    assert seen_verbs == set(range(117)) and seen_objects == set(range(80))


def test_uo_membership_equals_census():
    space = hico_scale_space()
    split = make_split(space, Setting.UO, {"n_unseen_obj": 12}, seed=9)
    chosen = {space.hois[h][1] for h in split.unseen}
    assert len(chosen) == 12
    census = {h for h, (_, o) in enumerate(space.hois) if o in chosen}
    assert split.unseen == census


def test_uv_membership_equals_census():
    space = hico_scale_space()
    split = make_split(space, Setting.UV, {"n_unseen_verb": 20}, seed=7)
    chosen = {space.hois[h][0] for h in split.unseen}
    assert len(chosen) <= 20
    assert split.unseen == {h for h, (v, _) in enumerate(space.hois) if v in chosen}


def test_uv_explicit_verbs():
    space = synthetic_space()
    split = make_split(space, "UV", {"verbs": ["holding"]})
    assert split.unseen == set(range(32, 40))
    with pytest.raises(LabelSpaceError):
        make_split(space, "UV", {"verbs": ["juggling"]})


def test_split_file_round_trip(tmp_path):
    space = synthetic_space(list(range(40)))
    split = make_split(space, Setting.UC, {"n_unseen_hoi": 8}, seed=3)
    split.save(tmp_path / "s.json")
    assert SplitSpec.load(tmp_path / "s.json") == split


def test_setting_parse_accepts_aliases():
    assert Setting.parse("rf-uc") is Setting.RF_UC
    with pytest.raises(LabelSpaceError):
        Setting.parse("XX")


# ---- filtering

def _toy_dataset():
    box = (0.1, 0.1, 0.3, 0.5)
    images = [ImageRecord(i, 64, 64, f"{i}.png") for i in range(3)]
    anns = [
        PairAnnotation(0, box, box, 0, (0, 1)),  # ride horse, hold horse
        PairAnnotation(1, box, box, 1, (1,)),  # hold umbrella
        PairAnnotation(2, box, box, 2, (1, 2)),  # hold / no_interaction dining table
    ]
    return HOIDataset(images, anns)


def test_filter_full_is_identity(toy_space):
    ds = _toy_dataset()
    out = filter_training_annotations(ds, full_split(toy_space), toy_space)
    assert out.annotations == ds.annotations


def test_filter_keeps_seen_verbs_only(toy_space):
    ds = _toy_dataset()
    split = SplitSpec(Setting.UC, (1, 2), 0, toy_space.num_hois)  # hold horse, hold umbrella
    out = filter_training_annotations(ds, split, toy_space)
    assert [a.verb_ids for a in out.annotations] == [(0,), (1, 2)]
    assert len(out.images) == 3


def test_filter_uv_leaves_no_unseen_labels():
    space = synthetic_space()
    from ki2hoi.synthetic import generate_synthetic_dataset

    ds, _ = generate_synthetic_dataset(SyntheticSceneConfig(), space, 40, seed=1)
    split = make_split(space, Setting.UV, {"verbs": ["above"]})
    out = filter_training_annotations(ds, split, space)
    census = sum(1 for a in out.annotations for v in a.verb_ids if space.hoi_id(v, a.object_id) in split.unseen)
    assert census == 0
    expected = sum(1 for a in ds.annotations if a.verb_ids != (0,))
    assert len(out.annotations) == expected


@given(st.lists(st.integers(0, 5), max_size=6, unique=True))
def test_filter_is_idempotent(unseen):
    from ki2hoi.label_space import build_label_space

    space = build_label_space(
        ["ride", "hold", "no_interaction"], ["horse", "umbrella", "dining_table"],
        [(0, 0), (1, 0), (1, 1), (2, 1), (1, 2), (2, 2)], [0] * 6,
    )
    split = SplitSpec(Setting.UC, tuple(sorted(unseen)), 0, 6)
    once = filter_training_annotations(_toy_dataset(), split, space)
    twice = filter_training_annotations(once, split, space)
    assert once.annotations == twice.annotations
