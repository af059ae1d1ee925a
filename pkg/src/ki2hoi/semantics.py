"""Interaction representation decoder and the text-weight verb predictor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .frontend import TextEmbedder
from .instance import cosine_logits
from .label_space import LabelSpace, hoi_prompt, object_prompt
from .layers import MLP, Attention, FeedForward


class InteractionDecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.spatial_attn = Attention(dim, heads)
        self.global_attn = Attention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim)

    def forward(self, q, v_sp, sp_pos, v_g, g_pos):
        q = q + self.self_attn(q)
        q = q + self.spatial_attn(q, v_sp, None, sp_pos) + self.global_attn(q, v_g, None, g_pos)
        return q + self.ffn(q)


class InteractionDecoder(nn.Module):
    def __init__(self, dim: int, heads: int, layers: int = 3, ffn_dim: int | None = None):
        super().__init__()
        self.layers = nn.ModuleList(InteractionDecoderLayer(dim, heads, ffn_dim or 4 * dim) for _ in range(layers))

    def forward(self, q_inter, v_sp, sp_pos, v_g, g_pos):
        for layer in self.layers:
            q_inter = layer(q_inter, v_sp, sp_pos, v_g, g_pos)
        return q_inter


def interaction_decode(decoder: InteractionDecoder, q_inter, v_sp, v_g, sp_pos=None, g_pos=None):
    squeeze = q_inter.dim() == 2
    if squeeze:
        q_inter, v_sp, v_g = q_inter[None], v_sp[None], v_g[None]
    sp_pos = torch.zeros_like(v_sp) if sp_pos is None else sp_pos
    g_pos = torch.zeros_like(v_g) if g_pos is None else g_pos
    out = decoder(q_inter, v_sp, sp_pos, v_g, g_pos)
    return out[0] if squeeze else out


@dataclass
class ClassifierWeights:
    verbs: np.ndarray  # (A, D_clip), unit rows
    objects: np.ndarray  # (C, D_clip), unit rows
    logit_scale: float = 20.0


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def build_classifier_weights(space: LabelSpace, embedder: TextEmbedder, logit_scale: float = 20.0) -> ClassifierWeights:
    """Object rows embed the object prompt; verb rows average the HOI prompts of that verb."""
    objects = np.stack([embedder.embed(object_prompt(o)) for o in space.objects])
    verbs = np.zeros((space.num_verbs, embedder.embed_dim))
    members = np.zeros(space.num_verbs, dtype=int)
    for v, o in space.hois:
        verbs[v] += embedder.embed(hoi_prompt(space.verbs[v], space.objects[o]))
        members[v] += 1
    if np.any(members == 0):
        missing = [space.verbs[i] for i in np.flatnonzero(members == 0)]
        raise ValueError(f"verbs without any HOI: {missing}")
    verbs /= members[:, None]
    return ClassifierWeights(_unit_rows(verbs), _unit_rows(objects), logit_scale)


class VerbPredictor(nn.Module):
    """Scores each query against every verb's text weight.

    pair term   P[n, a] = s * cos(MLP_d(Proj(Q_inter[n])), W_v[a])
    image prior G[a]    = s * cos(MLP_c(Proj(V_verb[a])), W_v[a])
    logits      = P + G
    """

    def __init__(self, dim: int, clip_dim: int, logit_scale: float = 20.0):
        super().__init__()
        self.logit_scale = logit_scale
        self.proj = nn.Linear(dim, clip_dim)
        self.pair_mlp = MLP(clip_dim, clip_dim, clip_dim, 2)
        self.verb_mlp = MLP(clip_dim, clip_dim, clip_dim, 2)

    def forward(self, q_inter, v_verb, verb_weights):
        projected = self.proj(q_inter)
        pair = cosine_logits(self.pair_mlp(projected), verb_weights, self.logit_scale)
        c_verb = self.verb_mlp(self.proj(v_verb))
        prior = self.logit_scale * (
            torch.nn.functional.normalize(c_verb, dim=-1, eps=1e-12)
            * torch.nn.functional.normalize(verb_weights, dim=-1, eps=1e-12)
        ).sum(-1)
        return pair + prior.unsqueeze(-2), projected


def verb_scores(q_inter, v_verb, weights: torch.Tensor, predictor: VerbPredictor) -> torch.Tensor:
    return predictor(q_inter, v_verb, weights)[0]
