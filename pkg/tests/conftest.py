import os

import numpy as np
import pytest
import torch
from hypothesis import settings

from ki2hoi.label_space import build_label_space
from ki2hoi.model import ModelConfig
from ki2hoi.synthetic import SyntheticSceneConfig, generate_synthetic_dataset, synthetic_label_space

torch.set_num_threads(1)
settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY = dict(dim=32, heads=4, ffn_dim=64, clip_dim=32, clip_patch=8, num_queries=8, backbone_channels=16,
            text_mode="compositional_stub")


@pytest.fixture
def scene():
    return SyntheticSceneConfig()


@pytest.fixture
def syn_space(scene):
    return synthetic_label_space(scene)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture
def small_dataset(scene, syn_space):
    ds, counts = generate_synthetic_dataset(scene, syn_space, 8, seed=0)
    return ds, syn_space.with_counts(counts)


@pytest.fixture
def toy_space():
    # 3 verbs x 3 objects, 6 HOIs
    return build_label_space(
        ["ride", "hold", "no_interaction"],
        ["horse", "umbrella", "dining_table"],
        [(0, 0), (1, 0), (1, 1), (2, 1), (1, 2), (2, 2)],
        [0, 12, 3, 40, 10, 9],
        10,
    )


def random_boxes(rng, n, lo=0.0, hi=1.0, min_size=0.02):
    xy = rng.uniform(lo, hi - 0.2, (n, 2))
    wh = rng.uniform(min_size, 0.2, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)
