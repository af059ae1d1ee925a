"""Set matching between query predictions and annotated pairs, and the training loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import _kernels
from .geometry import cxcywh_to_xyxy, giou_paired, giou_pairwise

RECONSTRUCTION_TYPES = ("l1", "l2", "l1+l2", "none")


@dataclass
class LossWeights:
    box: float = 2.5  # lambda_alpha
    giou: float = 1.0  # lambda_beta
    interaction: float = 1.0  # lambda_delta
    reconstruction: float = 1.0  # lambda_re
    object_class: float = 1.0  # lambda_cls
    background: float = 0.1  # relative CE weight of the no-object class
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    reconstruction_type: str = "l1"

    def __post_init__(self):
        for name in ("box", "giou", "interaction", "reconstruction", "object_class", "background"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")
        if self.reconstruction_type not in RECONSTRUCTION_TYPES:
            raise ValueError(f"reconstruction_type must be one of {RECONSTRUCTION_TYPES}")

    def to_dict(self) -> dict:
        return asdict(self)


def hungarian_solve(cost) -> list[tuple[int, int]]:
    """Minimum-cost injective assignment; ties go to the lexicographically smallest pair list."""
    if isinstance(cost, torch.Tensor):
        cost = cost.detach().cpu().double().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    rows, cols = _kernels.solve_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def _focal_terms(prob: torch.Tensor, alpha: float, gamma: float):
    prob = prob.clamp(1e-8, 1 - 1e-8)
    pos = alpha * (1 - prob) ** gamma * -torch.log(prob)
    neg = (1 - alpha) * prob**gamma * -torch.log(1 - prob)
    return pos, neg


@torch.no_grad()
def match_cost(pred: dict, target: dict, weights: LossWeights) -> torch.Tensor:
    """N x M matching cost for one image.

    ``pred`` holds per-query tensors ``human_boxes``, ``object_boxes`` (N, 4,
    center form), ``object_probs`` (N, C+1) and ``verb_logits`` (N, A);
    ``target`` holds ``human_boxes``, ``object_boxes`` (M, 4), ``objects`` (M,)
    and multi-hot ``verbs`` (M, A).
    """
    n = pred["human_boxes"].shape[0]
    m = target["human_boxes"].shape[0]
    if m == 0:
        return pred["human_boxes"].new_zeros((n, 0))
    cost_l1 = torch.cdist(pred["human_boxes"], target["human_boxes"], p=1) + torch.cdist(
        pred["object_boxes"], target["object_boxes"], p=1
    )
    cost_giou = 2 - giou_pairwise(cxcywh_to_xyxy(pred["human_boxes"]), cxcywh_to_xyxy(target["human_boxes"])) - (
        giou_pairwise(cxcywh_to_xyxy(pred["object_boxes"]), cxcywh_to_xyxy(target["object_boxes"]))
    )
    cost_cls = 1 - pred["object_probs"][:, target["objects"]]
    pos, neg = _focal_terms(pred["verb_logits"].sigmoid(), weights.focal_alpha, weights.focal_gamma)
    verbs = target["verbs"].to(pos.dtype)
    cost_verb = (pos @ verbs.T + neg @ (1 - verbs).T) / verbs.shape[1]
    return (
        weights.box * cost_l1
        + weights.giou * cost_giou
        + weights.object_class * cost_cls
        + weights.interaction * cost_verb
    )


def sigmoid_focal_loss(logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0):
    """Elementwise focal binary loss."""
    prob = logits.sigmoid()
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = prob * targets + (1 - prob) * (1 - targets)
    loss = ce * (1 - p_t) ** gamma
    if alpha >= 0:
        loss = (alpha * targets + (1 - alpha) * (1 - targets)) * loss
    return loss


def reconstruction_loss(projected: torch.Tensor, v_sp: torch.Tensor, kind: str = "l1") -> torch.Tensor:
    """Distance of every projected interaction query to the mean spatial token."""
    target = v_sp.mean(dim=-2, keepdim=True).expand_as(projected)
    if kind == "none":
        return projected.new_zeros(())
    l1 = F.l1_loss(projected, target)
    if kind == "l1":
        return l1
    l2 = F.mse_loss(projected, target)
    return l2 if kind == "l2" else (l1 + l2) / 2


def compute_losses(outputs: dict, targets: list[dict], assignments: list[list[tuple[int, int]]],
                   weights: LossWeights) -> dict[str, torch.Tensor]:
    """All loss terms for a batch.

    ``outputs`` holds batched (B, N, ...) tensors ``human_boxes``,
    ``object_boxes``, ``object_logits``, ``human_logits``, ``verb_logits``,
    ``projected_queries`` and ``v_sp``.
    """
    hb, ob = outputs["human_boxes"], outputs["object_boxes"]
    B, N = hb.shape[:2]
    C = outputs["object_logits"].shape[-1] - 1
    bi, qi, ti = [], [], []
    for b, pairs in enumerate(assignments):
        for q, t in pairs:
            bi.append(b)
            qi.append(q)
            ti.append(t)
    bi_t = torch.as_tensor(bi, dtype=torch.long)
    qi_t = torch.as_tensor(qi, dtype=torch.long)
    n_pairs = len(bi)

    def gather(key):
        rows = [targets[b][key][t] for b, t in zip(bi, ti)]
        if rows:
            return torch.stack(rows)
        return targets[0][key][:0] if targets else torch.zeros(0)

    zero = hb.sum() * 0
    if n_pairs:
        p_h, p_o = hb[bi_t, qi_t], ob[bi_t, qi_t]
        g_h, g_o = gather("human_boxes").to(hb.dtype), gather("object_boxes").to(hb.dtype)
        loss_box = ((p_h - g_h).abs().sum(-1) + (p_o - g_o).abs().sum(-1)).mean()
        giou_h = giou_paired(cxcywh_to_xyxy(p_h), cxcywh_to_xyxy(g_h))
        giou_o = giou_paired(cxcywh_to_xyxy(p_o), cxcywh_to_xyxy(g_o))
        loss_giou = ((1 - giou_h) + (1 - giou_o)).mean()
    else:
        loss_box = loss_giou = zero

    obj_target = torch.full((B, N), C, dtype=torch.long)
    human_target = torch.zeros((B, N), dtype=hb.dtype)
    verb_target = torch.zeros_like(outputs["verb_logits"])
    if n_pairs:
        obj_target[bi_t, qi_t] = gather("objects").long()
        human_target[bi_t, qi_t] = 1.0
        verb_target[bi_t, qi_t] = gather("verbs").to(verb_target.dtype)
    class_weight = torch.ones(C + 1, dtype=hb.dtype)
    class_weight[C] = weights.background
    loss_obj = F.cross_entropy(outputs["object_logits"].reshape(B * N, C + 1), obj_target.reshape(-1), weight=class_weight)
    loss_obj = loss_obj + F.binary_cross_entropy_with_logits(outputs["human_logits"], human_target)
    loss_verb = sigmoid_focal_loss(
        outputs["verb_logits"], verb_target, weights.focal_alpha, weights.focal_gamma
    ).sum() / max(1, n_pairs)
    loss_re = reconstruction_loss(outputs["projected_queries"], outputs["v_sp"], weights.reconstruction_type)

    total = (
        weights.box * loss_box
        + weights.giou * loss_giou
        + weights.object_class * loss_obj
        + weights.interaction * loss_verb
        + weights.reconstruction * loss_re
    )
    return {"L_b": loss_box, "L_u": loss_giou, "L_o": loss_obj, "L_i": loss_verb, "L_re": loss_re, "L_total": total}


def match_batch(outputs: dict, targets: list[dict], weights: LossWeights) -> list[list[tuple[int, int]]]:
    probs = outputs["object_logits"].softmax(-1)
    out = []
    for b, target in enumerate(targets):
        pred = {
            "human_boxes": outputs["human_boxes"][b],
            "object_boxes": outputs["object_boxes"][b],
            "object_probs": probs[b],
            "verb_logits": outputs["verb_logits"][b],
        }
        out.append(hungarian_solve(match_cost(pred, target, weights)))
    return out
