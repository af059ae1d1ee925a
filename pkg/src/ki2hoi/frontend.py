"""Stand-ins for the pretrained backbone and CLIP encoders, plus ROI-Align.

Everything the detector borrows from pretrained weights sits behind the
interfaces here.  The stubs are deterministic per seed; ``ExternalEmbedder``
reads precomputed vectors so real encoders can be injected offline.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .label_space import LabelSpace, _readable


@dataclass
class FeatureGrid:
    values: torch.Tensor  # (C, H, W) or (B, C, H, W)
    stride: int


def seeded_normal(seed: int, shape, tag: str = "") -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{tag}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(shape)


class StubBackbone(nn.Module):
    """Patchify conv at stride 8 followed by a 1x1 mixing conv."""

    stride = 8

    def __init__(self, channels: int = 64, in_channels: int = 3, seed: int = 0, zero_init: bool = False):
        super().__init__()
        self.patch = nn.Conv2d(in_channels, channels, kernel_size=self.stride, stride=self.stride)
        self.mix = nn.Conv2d(channels, channels, kernel_size=1)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if zero_init or name.endswith("bias"):
                    p.zero_()
                else:
                    fan_in = p[0].numel()
                    p.copy_(torch.from_numpy(seeded_normal(seed, tuple(p.shape), name) / np.sqrt(fan_in)))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-1] < 16 or images.shape[-2] < 16:
            raise ValueError(f"image of size {tuple(images.shape[-2:])} is below the 16x16 minimum")
        return self.mix(F.gelu(self.patch(images)))


def extract_backbone_features(backbone: StubBackbone, image: torch.Tensor) -> FeatureGrid:
    squeeze = image.dim() == 3
    out = backbone(image[None] if squeeze else image)
    return FeatureGrid(out[0] if squeeze else out, backbone.stride)


def roi_align(grid: torch.Tensor, box, out_size: int = 7, sampling: int = 1) -> torch.Tensor:
    """Bilinear ROI pooling of a (C, H, W) grid over a normalized corner box.

    Each output cell averages ``sampling**2`` bilinear samples placed at the
    centres of a regular sub-grid; with ``sampling=1`` that is the cell centre.
    """
    box = torch.as_tensor(box, dtype=grid.dtype)
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise ValueError(f"degenerate ROI {tuple(box.tolist())}")
    steps = out_size * sampling
    ys = y1 + (torch.arange(steps, dtype=grid.dtype) + 0.5) * (y2 - y1) / steps
    xs = x1 + (torch.arange(steps, dtype=grid.dtype) + 0.5) * (x2 - x1) / steps
    gy, gx = torch.meshgrid(ys * 2 - 1, xs * 2 - 1, indexing="ij")
    sample_grid = torch.stack((gx, gy), dim=-1)[None]
    out = F.grid_sample(grid[None], sample_grid, mode="bilinear", padding_mode="border", align_corners=False)[0]
    if sampling > 1:
        out = F.avg_pool2d(out[None], sampling)[0]
    return out


class ClipVisualStub(nn.Module):
    """Spatial tokens: every patch pooled to ``cells x cells`` means, then projected.

    The projection is a fixed seeded Gaussian matrix; nothing here trains.
    """

    def __init__(self, embed_dim: int = 512, patch: int = 32, cells: int = 4, seed: int = 0):
        super().__init__()
        self.embed_dim = embed_dim
        self.patch = patch
        self.cells = cells
        fan_in = 3 * cells * cells
        proj = seeded_normal(seed, (fan_in, embed_dim), "clip-visual") / np.sqrt(fan_in)
        self.register_buffer("projection", torch.from_numpy(proj).float())
        self.last_padding = (0, 0)

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        return -(-height // self.patch), -(-width // self.patch)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        squeeze = images.dim() == 3
        if squeeze:
            images = images[None]
        H, W = images.shape[-2:]
        ph = (-H) % self.patch
        pw = (-W) % self.patch
        self.last_padding = (ph, pw)
        if ph or pw:
            images = F.pad(images, (0, pw, 0, ph))
        pooled = F.avg_pool2d(images, self.patch // self.cells)  # B, 3, gh*cells, gw*cells
        B = images.shape[0]
        gh, gw = images.shape[-2] // self.patch, images.shape[-1] // self.patch
        c = self.cells
        pooled = pooled.reshape(B, 3, gh, c, gw, c).permute(0, 2, 4, 1, 3, 5).reshape(B, gh * gw, 3 * c * c)
        tokens = pooled @ self.projection.to(pooled.dtype)
        return tokens[0] if squeeze else tokens


def clip_visual_spatial(encoder: ClipVisualStub, image: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return encoder(image)


class TextEmbedder:
    """Maps prompts to unit vectors of length ``embed_dim``.

    Modes:
      ``hash_stub``           seeded Gaussian keyed by a SHA-256 of (seed, prompt);
      ``compositional_stub``  [verb one-hot | object one-hot | seeded noise], so a
                              prompt's vector is built from its verb and object parts;
      ``external``            precomputed vectors read from ``directory``.
    """

    def __init__(
        self,
        mode: str = "hash_stub",
        embed_dim: int = 512,
        seed: int = 0,
        space: LabelSpace | None = None,
        noise_scale: float = 0.1,
        directory: str | Path | None = None,
    ):
        if mode not in ("hash_stub", "compositional_stub", "external"):
            raise ValueError(f"unknown embedder mode {mode!r}")
        self.mode = mode
        self.embed_dim = embed_dim
        self.seed = seed
        self.noise_scale = noise_scale
        self.space = space
        self.directory = Path(directory) if directory is not None else None
        self._cache: dict[str, np.ndarray] = {}
        if mode == "compositional_stub":
            if space is None:
                raise ValueError("compositional_stub needs the label space")
            if embed_dim <= space.num_verbs + space.num_objects:
                raise ValueError(
                    f"embed_dim={embed_dim} leaves no noise block after "
                    f"{space.num_verbs} verb and {space.num_objects} object dims"
                )
            self._verb_lookup = {_readable(v): i for i, v in enumerate(space.verbs)}
            self._object_lookup = {_readable(o): i for i, o in enumerate(space.objects)}
            verbs = "|".join(sorted(map(re.escape, self._verb_lookup), key=len, reverse=True))
            objs = "|".join(sorted(map(re.escape, self._object_lookup), key=len, reverse=True))
            self._hoi_re = re.compile(rf"^A photo of a person ({verbs}) an? ({objs})$")
            self._obj_re = re.compile(rf"^A photo of an? ({objs})$")
        if mode == "external":
            if self.directory is None:
                raise ValueError("external embedder needs a directory")
            index = self.directory / "index.json"
            self._index = json.loads(index.read_text()) if index.exists() else {}

    @staticmethod
    def prompt_key(prompt: str) -> str:
        return hashlib.sha1(prompt.encode()).hexdigest()

    def _parse(self, prompt: str) -> tuple[int | None, int]:
        m = self._hoi_re.match(prompt)
        if m:
            return self._verb_lookup[m.group(1)], self._object_lookup[m.group(2)]
        m = self._obj_re.match(prompt)
        if m:
            return None, self._object_lookup[m.group(1)]
        raise ValueError(f"prompt names no known verb/object: {prompt!r}")

    def _raw(self, prompt: str) -> np.ndarray:
        if self.mode == "hash_stub":
            return seeded_normal(self.seed, (self.embed_dim,), prompt)
        if self.mode == "external":
            name = self._index.get(prompt, self.prompt_key(prompt) + ".npy")
            vec = np.load(self.directory / name).astype(np.float64).reshape(-1)
            if vec.shape[0] != self.embed_dim:
                raise ValueError(f"{name}: expected {self.embed_dim} dims, found {vec.shape[0]}")
            return vec
        verb, obj = self._parse(prompt)
        A, C = self.space.num_verbs, self.space.num_objects
        vec = np.zeros(self.embed_dim)
        if verb is not None:
            vec[verb] = 1.0
        vec[A + obj] = 1.0
        noise = seeded_normal(self.seed, (self.embed_dim - A - C,), prompt)
        vec[A + C :] = self.noise_scale * noise / np.linalg.norm(noise)
        return vec

    def embed(self, prompt: str) -> np.ndarray:
        if not prompt:
            raise ValueError("empty prompt")
        if prompt not in self._cache:
            vec = self._raw(prompt)
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise ValueError(f"zero embedding for {prompt!r}")
            self._cache[prompt] = vec / norm
        return self._cache[prompt].copy()


def embed_text(embedder: TextEmbedder, prompt: str) -> np.ndarray:
    return embedder.embed(prompt)


def sine_position_embedding(ys: torch.Tensor, xs: torch.Tensor, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """2-D sine/cosine embedding of normalized (y, x) positions, shape (len, dim)."""
    if dim % 4:
        raise ValueError("position embedding dim must be divisible by 4")
    quarter = dim // 4
    freqs = temperature ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ay = ys.double()[:, None] * 2 * np.pi / freqs
    ax = xs.double()[:, None] * 2 * np.pi / freqs
    return torch.cat((ay.sin(), ay.cos(), ax.sin(), ax.cos()), dim=1)


def grid_positions(height: int, width: int, dim: int) -> torch.Tensor:
    ys = (torch.arange(height, dtype=torch.float64) + 0.5) / height
    xs = (torch.arange(width, dtype=torch.float64) + 0.5) / width
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return sine_position_embedding(gy.reshape(-1), gx.reshape(-1), dim)
