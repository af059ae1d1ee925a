"""Verb extraction decoder: one learnable query per verb category."""
from __future__ import annotations

import torch
from torch import nn

from .layers import Attention, FeedForward


class VerbDecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, query_self_attention: bool = False):
        super().__init__()
        self.memory_attn = Attention(dim, heads)
        self.query_attn = Attention(dim, heads) if query_self_attention else None
        self.cross_attn = Attention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim)

    def forward(self, q, memory, memory_pos):
        # self-attention refines the memory, not the verb queries
        memory = memory + self.memory_attn(memory, query_pos=memory_pos)
        if self.query_attn is not None:
            q = q + self.query_attn(q)
        q = q + self.cross_attn(q, memory, None, memory_pos)
        return q + self.ffn(q), memory


class VerbExtractionDecoder(nn.Module):
    def __init__(self, num_verbs: int, dim: int, heads: int, layers: int = 1,
                 ffn_dim: int | None = None, query_self_attention: bool = False):
        super().__init__()
        if layers < 1:
            raise ValueError("verb decoder needs at least one layer")
        self.queries = nn.Parameter(torch.randn(num_verbs, dim) * 0.02)
        self.layers = nn.ModuleList(
            VerbDecoderLayer(dim, heads, ffn_dim or 4 * dim, query_self_attention) for _ in range(layers)
        )

    def forward(self, memory: torch.Tensor, memory_pos: torch.Tensor, queries: torch.Tensor | None = None):
        """memory: (B, L, D) projected V_G -> V_verb (B, A, D)."""
        q = self.queries if queries is None else queries
        q = q.expand(memory.shape[0], -1, -1)
        for layer in self.layers:
            q, memory = layer(q, memory, memory_pos)
        return q


def verb_extraction_decode(decoder: VerbExtractionDecoder, q_v: torch.Tensor, v_g: torch.Tensor,
                           memory_pos: torch.Tensor | None = None) -> torch.Tensor:
    squeeze = v_g.dim() == 2
    if squeeze:
        v_g = v_g[None]
    if memory_pos is None:
        memory_pos = torch.zeros_like(v_g)
    out = decoder(v_g, memory_pos, q_v)
    return out[0] if squeeze else out
