"""Box conversions and overlap measures.

The numpy functions broadcast over leading dimensions and are used by the
evaluator; the ``*_pairwise`` torch variants build N x M matrices for the
matching cost and losses.
"""
from __future__ import annotations

import numpy as np
import torch

CENTER_TO_CORNER = "center->corner"
CORNER_TO_CENTER = "corner->center"


def convert(box, direction: str = CENTER_TO_CORNER):
    box = np.asarray(box, dtype=np.float64)
    a, b, c, d = np.moveaxis(box, -1, 0)
    if direction == CENTER_TO_CORNER:
        out = (a - c / 2, b - d / 2, a + c / 2, b + d / 2)
    elif direction == CORNER_TO_CENTER:
        out = ((a + c) / 2, (b + d) / 2, c - a, d - b)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return np.stack(out, axis=-1)


def area(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    return np.clip(box[..., 2] - box[..., 0], 0, None) * np.clip(box[..., 3] - box[..., 1], 0, None)


def _inter_union(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    return inter, area(a) + area(b) - inter, a, b


def iou(a, b):
    """IoU of corner boxes; 0 whenever either box has zero area."""
    inter, union, a, b = _inter_union(a, b)
    valid = (area(a) > 0) & (area(b) > 0)
    out = np.where(valid, inter / np.where(union > 0, union, 1.0), 0.0)
    return out if out.ndim else float(out)


def giou(a, b):
    inter, union, a, b = _inter_union(a, b)
    hull = (np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])) * (
        np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    )
    valid = (area(a) > 0) & (area(b) > 0)
    safe_union = np.where(union > 0, union, 1.0)
    safe_hull = np.where(hull > 0, hull, 1.0)
    out = np.where(valid, inter / safe_union - (hull - union) / safe_hull, 0.0)
    return out if out.ndim else float(out)


def pair_match(pred_h, pred_o, gt_h, gt_o, threshold: float = 0.5):
    return (np.asarray(iou(pred_h, gt_h)) >= threshold) & (np.asarray(iou(pred_o, gt_o)) >= threshold)


def normalize_pixel_box(box, width: float, height: float) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    return (
        min(max(x1 / width, 0.0), 1.0),
        min(max(y1 / height, 0.0), 1.0),
        min(max(x2 / width, 0.0), 1.0),
        min(max(y2 / height, 0.0), 1.0),
    )


def cxcywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), dim=-1)


def xyxy_to_cxcywh(boxes: torch.Tensor) -> torch.Tensor:
    x1, y1, x2, y2 = boxes.unbind(-1)
    return torch.stack(((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1), dim=-1)


def giou_pairwise(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU between every row of ``a`` (N, 4) and ``b`` (M, 4), corner form."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    lt = torch.max(a[:, None, :2], b[None, :, :2])
    rb = torch.min(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    hull_wh = (torch.max(a[:, None, 2:], b[None, :, 2:]) - torch.min(a[:, None, :2], b[None, :, :2])).clamp(min=0)
    hull = hull_wh[..., 0] * hull_wh[..., 1]
    eps = torch.finfo(a.dtype).eps
    return inter / union.clamp(min=eps) - (hull - union) / hull.clamp(min=eps)


def giou_paired(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise generalized IoU of two (K, 4) corner-box tensors."""
    if a.shape[0] == 0:
        return a.new_zeros(0)
    return torch.diagonal(giou_pairwise(a, b))
