import json
import math

import pytest
import torch

from ki2hoi.checkpoint import CheckpointError
from ki2hoi.label_space import Setting, make_split
from ki2hoi.matching import LossWeights
from ki2hoi.model import KI2HOI, ModelConfig
from ki2hoi.training import (
    NonFiniteLossError,
    TrainConfig,
    build_targets,
    fit,
    load_images,
    make_optimizer,
    predict,
    train_step,
)

from conftest import TINY


def batch_of(ds, space):
    ids = [r.id for r in ds.images]
    return load_images(ds, ids), build_targets(ds, ids, space.num_verbs)


def test_zero_learning_rate_leaves_parameters(small_dataset, tiny_config):
    ds, space = small_dataset
    model = KI2HOI(tiny_config, space)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    opt = make_optimizer(model, TrainConfig(lr=0.0, epochs=2, lr_drop=1))
    images, targets = batch_of(ds, space)
    train_step(model, images, targets, opt, LossWeights())
    after = model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before if "running" not in k and "num_batches" not in k)


def test_identical_seeds_give_identical_trajectories(small_dataset, tiny_config):
    ds, space = small_dataset
    cfg = TrainConfig(lr=1e-3, epochs=2, lr_drop=1, batch_size=4)
    runs = [fit(KI2HOI(tiny_config, space), ds, cfg).log.records for _ in range(2)]
    assert runs[0] == runs[1]


def test_overfit_fixed_batch_halves_loss(small_dataset):
    ds, space = small_dataset
    cfg = ModelConfig(**{**TINY, "dim": 64, "ffn_dim": 128, "num_queries": 16})
    model = KI2HOI(cfg, space)
    opt = make_optimizer(model, TrainConfig(lr=1e-3))
    images, targets = batch_of(ds, space)
    losses = [train_step(model, images, targets, opt, LossWeights(), 0.1, s)["L_total"] for s in range(200)]
    assert losses[-1] <= 0.5 * losses[4]


def test_lr_drops_tenfold_after_drop_epoch(small_dataset, tiny_config):
    ds, space = small_dataset
    cfg = TrainConfig(lr=2e-3, epochs=4, lr_drop=2, batch_size=8)
    result = fit(KI2HOI(tiny_config, space), ds, cfg)
    assert result.epoch_lrs[:2] == [2e-3, 2e-3]
    assert result.epoch_lrs[2] == pytest.approx(2e-4, rel=1e-12)
    assert result.log.series("lr")[2] == pytest.approx(2e-4, rel=1e-12)


def test_train_fraction_is_deterministic(small_dataset, tiny_config):
    ds, space = small_dataset
    cfg = TrainConfig(epochs=1, lr_drop=0, train_fraction=0.25, seed=3)
    a = fit(KI2HOI(tiny_config, space), ds, cfg)
    b = fit(KI2HOI(tiny_config, space), ds, cfg)
    assert len(a.train_images) == 2 and a.train_images == b.train_images
    full = fit(KI2HOI(tiny_config, space), ds, TrainConfig(epochs=1, lr_drop=0))
    assert len(full.train_images) == 8


def test_gradient_reaches_every_parameter_group(small_dataset, tiny_config):
    ds, space = small_dataset
    model = KI2HOI(tiny_config, space)
    images, targets = batch_of(ds, space)
    opt = make_optimizer(model, TrainConfig(lr=0.0))
    train_step(model, images, targets, opt, LossWeights())
    groups = {}
    for name, p in model.named_parameters():
        if p.requires_grad:
            g = 0.0 if p.grad is None else p.grad.abs().sum().item()
            groups[name.split(".")[0]] = groups.get(name.split(".")[0], 0.0) + g
    assert groups and all(v > 0 for v in groups.values()), groups


def test_nonfinite_loss_aborts_with_diagnostic(small_dataset, tiny_config):
    ds, space = small_dataset
    model = KI2HOI(tiny_config, space)
    with torch.no_grad():
        model.instance_heads.human_box.layers[-1].bias.fill_(float("nan"))
    images, targets = batch_of(ds, space)
    with pytest.raises((NonFiniteLossError, ValueError)) as info:
        train_step(model, images, targets, make_optimizer(model, TrainConfig()), LossWeights(), step=7)
    if isinstance(info.value, NonFiniteLossError):
        assert info.value.step == 7 and info.value.offending


def test_nonfinite_error_names_terms():
    err = NonFiniteLossError(3, {"L_b": 1.0, "L_i": math.inf, "L_total": math.inf})
    assert err.offending == ["L_i", "L_total"] and "L_i" in str(err)


def test_empty_batch_rejected(small_dataset, tiny_config):
    ds, space = small_dataset
    model = KI2HOI(tiny_config, space)
    with pytest.raises(ValueError):
        train_step(model, torch.zeros(0, 3, 64, 64), [], make_optimizer(model, TrainConfig()), LossWeights())


@pytest.mark.parametrize(
    "kwargs", [dict(epochs=5, lr_drop=5), dict(train_fraction=0.0), dict(train_fraction=1.5), dict(lr=-1.0),
               dict(batch_size=0)]
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_train_config_round_trip():
    cfg = TrainConfig(lr=3e-4, loss=LossWeights(reconstruction_type="l2"))
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1.0})


def test_split_filtering_applied_in_fit(small_dataset, tiny_config):
    ds, space = small_dataset
    split = make_split(space, Setting.UV, {"verbs": ["above"]})
    result = fit(KI2HOI(tiny_config, space), ds, TrainConfig(epochs=1, lr_drop=0), split)
    assert result.steps == 2


def test_resume_with_mismatched_config_raises(tmp_path, small_dataset, tiny_config):
    ds, space = small_dataset
    cfg = TrainConfig(epochs=2, lr_drop=1, batch_size=8)
    fit(KI2HOI(tiny_config, space), ds, cfg, checkpoint_path=tmp_path / "a.ckpt")
    with pytest.raises(CheckpointError):
        fit(KI2HOI(tiny_config, space), ds, TrainConfig(epochs=3, lr_drop=1, batch_size=8),
            resume=tmp_path / "a.ckpt")
    other = ModelConfig(**{**TINY, "seed": 1})
    with pytest.raises(CheckpointError):
        fit(KI2HOI(other, space), ds, cfg, resume=tmp_path / "a.ckpt")


def test_resume_from_finished_run_restores_state(tmp_path, small_dataset, tiny_config):
    ds, space = small_dataset
    cfg = TrainConfig(lr=1e-3, epochs=2, lr_drop=1, batch_size=4)
    straight = KI2HOI(tiny_config, space)
    fit(straight, ds, cfg, checkpoint_path=tmp_path / "c.ckpt")
    again = KI2HOI(tiny_config, space)
    result = fit(again, ds, cfg, resume=tmp_path / "c.ckpt")
    assert result.epoch_lrs == []
    assert all(torch.equal(a, b) for a, b in zip(again.state_dict().values(), straight.state_dict().values()))


def test_predict_yields_top_k_per_image(small_dataset, tiny_config):
    ds, space = small_dataset
    dets = predict(KI2HOI(tiny_config, space), ds, top_k=7)
    assert len(dets) == 7 * len(ds.images)
    assert all(math.isfinite(d.score) for d in dets)
