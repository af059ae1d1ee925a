"""Human/object query decoding, instance heads and interaction-query formation."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import MLP, Attention, FeedForward


class InstanceDecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.cross_attn = Attention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim)

    def forward(self, q, memory, query_pos, memory_pos):
        q = q + self.self_attn(q, query_pos=query_pos)
        q = q + self.cross_attn(q, memory, query_pos, memory_pos)
        return q + self.ffn(q)


class InstanceDecoder(nn.Module):
    """Decodes the concatenated 2N human and object queries against [V_G ; V_sp]."""

    def __init__(self, dim: int, heads: int, layers: int = 3, ffn_dim: int | None = None):
        super().__init__()
        self.layers = nn.ModuleList(InstanceDecoderLayer(dim, heads, ffn_dim or 4 * dim) for _ in range(layers))

    def forward(self, q_h, q_o, pos, memory, memory_pos):
        """q_h, q_o: (B, N, D); pos: (N, D) shared pairing embedding.

        Returns the final (Q_h, Q_o) and the per-layer list of both.
        """
        n = q_h.shape[1]
        q = torch.cat((q_h, q_o), dim=1)
        query_pos = torch.cat((pos, pos), dim=0).expand(q.shape[0], -1, -1)
        history = []
        for layer in self.layers:
            q = layer(q, memory, query_pos, memory_pos)
            history.append((q[:, :n], q[:, n:]))
        return q[:, :n], q[:, n:], history


@dataclass
class InstancePredictions:
    human_boxes: torch.Tensor  # (B, N, 4) normalized cx, cy, w, h
    object_boxes: torch.Tensor  # (B, N, 4)
    object_logits: torch.Tensor  # (B, N, C+1), last column is background
    human_logits: torch.Tensor  # (B, N)

    @property
    def object_probs(self) -> torch.Tensor:
        return self.object_logits.softmax(-1)

    @property
    def object_scores(self) -> torch.Tensor:
        return self.object_probs[..., :-1].max(-1).values

    @property
    def human_scores(self) -> torch.Tensor:
        return self.human_logits.sigmoid()


def cosine_logits(features: torch.Tensor, weights: torch.Tensor, scale: float) -> torch.Tensor:
    """scale * cos(features_i, weights_j); zero-norm rows give cosine 0."""
    f = F.normalize(features, dim=-1, eps=1e-12)
    w = F.normalize(weights, dim=-1, eps=1e-12)
    return scale * f @ w.transpose(-1, -2)


class InstanceHeads(nn.Module):
    def __init__(self, dim: int, clip_dim: int, logit_scale: float = 20.0):
        super().__init__()
        self.logit_scale = logit_scale
        self.human_box = MLP(dim, dim, 4, 3)
        self.object_box = MLP(dim, dim, 4, 3)
        self.object_proj = nn.Linear(dim, clip_dim)
        self.background = nn.Linear(dim, 1)
        self.human_conf = nn.Linear(dim, 1)

    def forward(self, q_h, q_o, object_text_weights) -> InstancePredictions:
        fg = cosine_logits(self.object_proj(q_o), object_text_weights, self.logit_scale)
        logits = torch.cat((fg, self.background(q_o)), dim=-1)
        return InstancePredictions(
            self.human_box(q_h).sigmoid(),
            self.object_box(q_o).sigmoid(),
            logits,
            self.human_conf(q_h).squeeze(-1),
        )


def predict_instances(heads: InstanceHeads, q_h, q_o, object_text_weights) -> InstancePredictions:
    return heads(q_h, q_o, object_text_weights)


def form_interaction_queries(q_h: torch.Tensor, q_o: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    """Position-aligned pair fusion: mean of (Q_h + P) and (Q_o + P), row by row."""
    if q_h.shape != q_o.shape or q_h.shape[-2:] != pos.shape[-2:]:
        raise ValueError(f"shape mismatch: {tuple(q_h.shape)}, {tuple(q_o.shape)}, {tuple(pos.shape)}")
    return ((q_h + pos) + (q_o + pos)) / 2
