import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from ki2hoi.geometry import giou
from ki2hoi.matching import (
    LossWeights,
    compute_losses,
    hungarian_solve,
    match_batch,
    match_cost,
    reconstruction_loss,
    sigmoid_focal_loss,
)

A, C = 3, 4


def cxcywh_np(b):
    return np.array([b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2])


def make_outputs(seed, B=2, N=5):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64)
    return {
        "human_boxes": torch.cat([r(B, N, 2) * 0.6 + 0.2, r(B, N, 2) * 0.3 + 0.05], -1),
        "object_boxes": torch.cat([r(B, N, 2) * 0.6 + 0.2, r(B, N, 2) * 0.3 + 0.05], -1),
        "object_logits": torch.randn(B, N, C + 1, generator=g, dtype=torch.float64),
        "human_logits": torch.randn(B, N, generator=g, dtype=torch.float64),
        "verb_logits": torch.randn(B, N, A, generator=g, dtype=torch.float64),
        "projected_queries": torch.randn(B, N, 6, generator=g, dtype=torch.float64),
        "v_sp": torch.randn(B, 4, 6, generator=g, dtype=torch.float64),
    }


def make_target(seed, M):
    g = torch.Generator().manual_seed(seed + 100)
    r = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64)
    verbs = (r(M, A) > 0.5).double()
    verbs[:, 0] = 1.0
    return {
        "human_boxes": torch.cat([r(M, 2) * 0.6 + 0.2, r(M, 2) * 0.3 + 0.05], -1),
        "object_boxes": torch.cat([r(M, 2) * 0.6 + 0.2, r(M, 2) * 0.3 + 0.05], -1),
        "objects": torch.randint(0, C, (M,), generator=g),
        "verbs": verbs,
    }


def cost_oracle(pred, tgt, w):
    n, m = pred["human_boxes"].shape[0], tgt["human_boxes"].shape[0]
    out = np.zeros((n, m))
    probs = pred["object_probs"].numpy()
    vp = torch.sigmoid(pred["verb_logits"]).numpy()
    for i in range(n):
        for j in range(m):
            ph, po = pred["human_boxes"][i].numpy(), pred["object_boxes"][i].numpy()
            gh, go = tgt["human_boxes"][j].numpy(), tgt["object_boxes"][j].numpy()
            l1 = np.abs(ph - gh).sum() + np.abs(po - go).sum()
            gi = 2 - giou(cxcywh_np(ph), cxcywh_np(gh)) - giou(cxcywh_np(po), cxcywh_np(go))
            cls = 1 - probs[i, int(tgt["objects"][j])]
            verb = 0.0
            for a in range(A):
                p = min(max(vp[i, a], 1e-8), 1 - 1e-8)
                if tgt["verbs"][j, a] > 0:
                    verb += w.focal_alpha * (1 - p) ** w.focal_gamma * -math.log(p)
                else:
                    verb += (1 - w.focal_alpha) * p**w.focal_gamma * -math.log(1 - p)
            out[i, j] = w.box * l1 + w.giou * gi + w.object_class * cls + w.interaction * verb / A
    return out


@pytest.mark.parametrize("seed", range(5))
def test_match_cost_against_loop_oracle(seed):
    outs = make_outputs(seed, B=1)
    tgt = make_target(seed, 3)
    w = LossWeights()
    pred = {
        "human_boxes": outs["human_boxes"][0],
        "object_boxes": outs["object_boxes"][0],
        "object_probs": outs["object_logits"][0].softmax(-1),
        "verb_logits": outs["verb_logits"][0],
    }
    np.testing.assert_allclose(match_cost(pred, tgt, w).numpy(), cost_oracle(pred, tgt, w), atol=1e-10)


def test_match_batch_assigns_each_target_once():
    outs = make_outputs(0)
    targets = [make_target(0, 3), make_target(1, 0)]
    assignments = match_batch(outs, targets, LossWeights())
    assert len(assignments[0]) == 3 and assignments[1] == []
    assert len({q for q, _ in assignments[0]}) == 3
    assert sorted(t for _, t in assignments[0]) == [0, 1, 2]


def test_focal_loss_formula():
    x = torch.tensor([2.0, -1.0, 0.0], dtype=torch.float64)
    t = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    got = sigmoid_focal_loss(x, t, 0.25, 2.0)
    p = torch.sigmoid(x)
    want = torch.stack([
        0.25 * (1 - p[0]) ** 2 * -torch.log(p[0]),
        0.75 * p[1] ** 2 * -torch.log(1 - p[1]),
        0.25 * (1 - p[2]) ** 2 * -torch.log(p[2]),
    ])
    assert torch.allclose(got, want, atol=1e-14)


def test_reconstruction_variants():
    proj = torch.tensor([[[1.0, 3.0], [0.0, -1.0]]], dtype=torch.float64)
    v_sp = torch.tensor([[[0.0, 0.0], [2.0, 2.0]]], dtype=torch.float64)  # mean (1, 1)
    l1 = (0 + 2 + 1 + 2) / 4
    l2 = (0 + 4 + 1 + 4) / 4
    assert reconstruction_loss(proj, v_sp, "l1").item() == pytest.approx(l1)
    assert reconstruction_loss(proj, v_sp, "l2").item() == pytest.approx(l2)
    assert reconstruction_loss(proj, v_sp, "l1+l2").item() == pytest.approx((l1 + l2) / 2)
    assert reconstruction_loss(proj, v_sp, "none").item() == 0.0


def test_losses_against_hand_computation():
    outs = make_outputs(3, B=1, N=4)
    tgt = make_target(3, 2)
    w = LossWeights(reconstruction_type="l1")
    assign = [[(2, 0), (0, 1)]]
    got = compute_losses(outs, [tgt], assign, w)
    hb, ob = outs["human_boxes"][0], outs["object_boxes"][0]
    l1 = [(hb[q] - tgt["human_boxes"][t]).abs().sum() + (ob[q] - tgt["object_boxes"][t]).abs().sum() for q, t in assign[0]]
    assert got["L_b"].item() == pytest.approx(float(sum(l1)) / 2, rel=1e-12)
    gi = [2 - giou(cxcywh_np(hb[q].numpy()), cxcywh_np(tgt["human_boxes"][t].numpy()))
          - giou(cxcywh_np(ob[q].numpy()), cxcywh_np(tgt["object_boxes"][t].numpy())) for q, t in assign[0]]
    assert got["L_u"].item() == pytest.approx(sum(gi) / 2, rel=1e-12)
    labels = torch.full((4,), C)
    labels[2], labels[0] = tgt["objects"][0], tgt["objects"][1]
    weight = torch.ones(C + 1, dtype=torch.float64)
    weight[C] = 0.1
    ce = torch.nn.functional.cross_entropy(outs["object_logits"][0], labels, weight=weight)
    h_t = torch.tensor([1.0, 0, 1.0, 0], dtype=torch.float64)
    bce = torch.nn.functional.binary_cross_entropy_with_logits(outs["human_logits"][0], h_t)
    assert got["L_o"].item() == pytest.approx((ce + bce).item(), rel=1e-12)
    vt = torch.zeros(4, A, dtype=torch.float64)
    vt[2], vt[0] = tgt["verbs"][0], tgt["verbs"][1]
    assert got["L_i"].item() == pytest.approx(sigmoid_focal_loss(outs["verb_logits"][0], vt).sum().item() / 2, rel=1e-12)
    total = 2.5 * got["L_b"] + got["L_u"] + got["L_o"] + got["L_i"] + got["L_re"]
    assert got["L_total"].item() == pytest.approx(total.item(), rel=1e-12)


def test_no_targets_gives_zero_box_losses():
    outs = make_outputs(0, B=1)
    got = compute_losses(outs, [make_target(0, 0)], [[]], LossWeights())
    assert got["L_b"].item() == 0.0 and got["L_u"].item() == 0.0
    assert all(math.isfinite(v.item()) for v in got.values())


def test_perfect_prediction_has_zero_box_losses():
    outs = make_outputs(0, B=1, N=3)
    tgt = make_target(0, 2)
    outs["human_boxes"][0, :2] = tgt["human_boxes"]
    outs["object_boxes"][0, :2] = tgt["object_boxes"]
    got = compute_losses(outs, [tgt], [[(0, 0), (1, 1)]], LossWeights())
    assert got["L_b"].item() == 0.0 and got["L_u"].item() == pytest.approx(0.0, abs=1e-12)


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(box=-1)
    with pytest.raises(ValueError):
        LossWeights(reconstruction_type="huber")


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_hungarian_cost_is_minimal_over_random_assignments(n, m, seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((n, m))
    pairs = hungarian_solve(cost)
    best = sum(cost[i, j] for i, j in pairs)
    assert len(pairs) == min(n, m)
    for _ in range(20):
        rows = rng.permutation(n)[: min(n, m)]
        cols = rng.permutation(m)[: min(n, m)]
        assert best <= cost[rows, cols].sum() + 1e-12
