"""Pre-norm transformer building blocks shared by the three decoders."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class Attention(nn.Module):
    """Multi-head attention on pre-normalized queries; returns the residual update only.

    Positional embeddings are added to queries and keys, never to values.
    The head-averaged attention map of the latest call is kept in
    ``last_weights`` when ``record`` is set.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.record = False
        self.last_weights: torch.Tensor | None = None

    def forward(self, x, memory=None, query_pos=None, memory_pos=None):
        h = self.norm(x)
        q = h if query_pos is None else h + query_pos
        if memory is None:
            k, v = q, h
        else:
            v = memory
            k = memory if memory_pos is None else memory + memory_pos
        out, weights = self.attn(q, k, v, need_weights=self.record, average_attn_weights=True)
        if self.record:
            self.last_weights = weights.detach()
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(self.norm(x))))


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int):
        super().__init__()
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


def zero_residual_branches(module: nn.Module) -> None:
    """Zero every attention output projection and FFN output layer in ``module``."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.MultiheadAttention):
                m.out_proj.weight.zero_()
                m.out_proj.bias.zero_()
            elif isinstance(m, FeedForward):
                m.fc2.weight.zero_()
                m.fc2.bias.zero_()
