"""Pair encoder: local convolutional blocks plus a global context former.

    V_F' = V_F + Conv1(GELU(Conv1(DWConv3(BN(V_F)))))      (applied twice)
    V_G  = LinearBlock(AdditiveAttention(FrontEnd(V_F')))

The additive attention pools one global query from learned per-token scores,
so its cost is linear in the number of tokens.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .frontend import roi_align


class LocalEncoderBlock(nn.Module):
    def __init__(self, dim: int, expansion: int = 2):
        super().__init__()
        self.dim = dim
        self.norm = nn.BatchNorm2d(dim)
        self.dwconv = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.expand = nn.Conv2d(dim, dim * expansion, 1)
        self.reduce = nn.Conv2d(dim * expansion, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {x.shape[1]}")
        return x + self.reduce(F.gelu(self.expand(self.dwconv(self.norm(x)))))


class EfficientAdditiveAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.to_query = nn.Linear(dim, dim, bias=False)
        self.to_key = nn.Linear(dim, dim, bias=False)
        self.w_a = nn.Parameter(torch.randn(dim) / math.sqrt(dim))
        self.out = nn.Linear(dim, dim)
        self.scale = dim**-0.5
        self.last_weights: torch.Tensor | None = None

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """tokens: (..., L, d) -> (..., L, d)."""
        q = self.to_query(tokens)
        k = self.to_key(tokens)
        scores = (q @ self.w_a) * self.scale
        e = torch.exp(scores - scores.max(dim=-1, keepdim=True).values)
        alpha = e / _sorted_sum(e, -1)
        self.last_weights = alpha.detach()
        global_q = _sorted_sum(alpha.unsqueeze(-1) * q, -2)
        return self.out(global_q * k) + tokens


def _sorted_sum(x: torch.Tensor, dim: int) -> torch.Tensor:
    # summing in sorted order makes the result independent of token order, bit for bit
    return torch.sort(x, dim=dim).values.sum(dim=dim, keepdim=True)


class GlobalContextFormer(nn.Module):
    def __init__(self, dim: int, expansion: int = 2):
        super().__init__()
        self.front_dw = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.front_pw = nn.Conv2d(dim, dim, 1)
        self.attention = EfficientAdditiveAttention(dim)
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim * expansion)
        self.fc2 = nn.Linear(dim * expansion, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, d, h, w) grid -> (B, h*w, d) tokens."""
        x = x + self.front_pw(self.front_dw(x))
        tokens = x.flatten(2).transpose(1, 2)
        tokens = self.attention(tokens)
        return tokens + self.fc2(F.gelu(self.fc1(self.norm(tokens))))


class HoPairEncoder(nn.Module):
    def __init__(self, dim: int, roi_size: int = 7, sampling: int = 1):
        super().__init__()
        self.roi_size = roi_size
        self.sampling = sampling
        self.local1 = LocalEncoderBlock(dim)
        self.local2 = LocalEncoderBlock(dim)
        self.context = GlobalContextFormer(dim)

    def crop(self, grid: torch.Tensor, boxes=None) -> torch.Tensor:
        """(B, d, H, W) -> (B, d, 7, 7) whole-image, or (K, d, 7, 7) per box of image 0."""
        if boxes is None:
            full = (0.0, 0.0, 1.0, 1.0)
            return torch.stack([roi_align(g, full, self.roi_size, self.sampling) for g in grid])
        return torch.stack([roi_align(grid[0], b, self.roi_size, self.sampling) for b in boxes])

    def encode_grid(self, x: torch.Tensor) -> torch.Tensor:
        return self.context(self.local2(self.local1(x)))

    def forward(self, grid: torch.Tensor, boxes=None) -> torch.Tensor:
        return self.encode_grid(self.crop(grid, boxes))


def ho_pair_encode(encoder: HoPairEncoder, backbone_grid: torch.Tensor, boxes=None) -> torch.Tensor:
    squeeze = backbone_grid.dim() == 3
    out = encoder(backbone_grid[None] if squeeze else backbone_grid, boxes)
    return out[0] if squeeze and boxes is None else out
