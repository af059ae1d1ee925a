"""End-to-end detector assembly."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from .encoder import HoPairEncoder
from .frontend import ClipVisualStub, StubBackbone, TextEmbedder, grid_positions
from .instance import InstanceDecoder, InstanceHeads, InstancePredictions, form_interaction_queries
from .label_space import LabelSpace
from .layers import Attention
from .semantics import InteractionDecoder, VerbPredictor, build_classifier_weights
from .verb import VerbExtractionDecoder


@dataclass
class ModelConfig:
    dim: int = 256
    num_queries: int = 64
    backbone_channels: int = 64
    decoder_layers: int = 3
    verb_layers: int = 1
    heads: int = 8
    ffn_dim: int = 1024
    clip_dim: int = 512
    clip_patch: int = 32
    roi_size: int = 7
    logit_scale: float = 20.0
    text_mode: str = "hash_stub"
    text_noise: float = 0.1
    text_dir: str | None = None
    train_text_weights: bool = False
    verb_query_self_attention: bool = False
    score_fusion: str = "sum"
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "num_queries", "backbone_channels", "heads", "ffn_dim", "clip_dim", "clip_patch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.decoder_layers < 1 or self.verb_layers < 1:
            raise ValueError("layer counts must be at least 1")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.dim % 4:
            raise ValueError("dim must be divisible by 4 for position embeddings")
        if self.score_fusion not in ("sum", "product"):
            raise ValueError("score_fusion must be 'sum' or 'product'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)


class KI2HOI(nn.Module):
    def __init__(self, config: ModelConfig, space: LabelSpace):
        super().__init__()
        self.config = config
        self.space = space
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self._build(config, space)

    def _build(self, config: ModelConfig, space: LabelSpace) -> None:
        D = config.dim
        self.backbone = StubBackbone(config.backbone_channels, seed=config.seed)
        self.encoder = HoPairEncoder(config.backbone_channels, config.roi_size)
        self.clip_visual = ClipVisualStub(config.clip_dim, config.clip_patch, seed=config.seed)
        self.global_proj = nn.Linear(config.backbone_channels, D)
        self.spatial_proj = nn.Linear(config.clip_dim, D)

        self.human_queries = nn.Parameter(torch.randn(config.num_queries, D))
        self.object_queries = nn.Parameter(torch.randn(config.num_queries, D))
        self.pair_embedding = nn.Parameter(torch.randn(config.num_queries, D))
        self.instance_decoder = InstanceDecoder(D, config.heads, config.decoder_layers, config.ffn_dim)
        self.instance_heads = InstanceHeads(D, config.clip_dim, config.logit_scale)
        self.verb_decoder = VerbExtractionDecoder(
            space.num_verbs, D, config.heads, config.verb_layers, config.ffn_dim, config.verb_query_self_attention
        )
        self.interaction_decoder = InteractionDecoder(D, config.heads, config.decoder_layers, config.ffn_dim)
        self.verb_predictor = VerbPredictor(D, config.clip_dim, config.logit_scale)

        embedder = TextEmbedder(
            config.text_mode, config.clip_dim, config.seed, space, config.text_noise, config.text_dir
        )
        weights = build_classifier_weights(space, embedder, config.logit_scale)
        verb_w = torch.from_numpy(weights.verbs).float()
        obj_w = torch.from_numpy(weights.objects).float()
        if config.train_text_weights:
            self.verb_weights = nn.Parameter(verb_w)
            self.object_weights = nn.Parameter(obj_w)
        else:
            self.register_buffer("verb_weights", verb_w)
            self.register_buffer("object_weights", obj_w)

    def attention_modules(self) -> dict[str, list[Attention]]:
        return {
            "verb_extraction": [layer.cross_attn for layer in self.verb_decoder.layers],
            "interaction_spatial": [layer.spatial_attn for layer in self.interaction_decoder.layers],
            "interaction_global": [layer.global_attn for layer in self.interaction_decoder.layers],
        }

    def record_attention(self, flag: bool = True) -> None:
        for mods in self.attention_modules().values():
            for m in mods:
                m.record = flag

    def forward(self, images: torch.Tensor) -> dict:
        """images: (B, 3, H, W) floats in [0, 1]."""
        dtype = self.human_queries.dtype
        images = images.to(dtype)
        B, _, H, W = images.shape
        grid = self.backbone(images)
        v_g = self.encoder(grid)
        g_mem = self.global_proj(v_g)
        g_pos = grid_positions(self.config.roi_size, self.config.roi_size, self.config.dim).to(dtype)
        g_pos = g_pos.expand(B, -1, -1)

        with torch.no_grad():
            v_sp = self.clip_visual(images)
        gh, gw = self.clip_visual.grid_shape(H, W)
        sp_mem = self.spatial_proj(v_sp)
        sp_pos = grid_positions(gh, gw, self.config.dim).to(dtype).expand(B, -1, -1)

        memory = torch.cat((g_mem, sp_mem), dim=1)
        memory_pos = torch.cat((g_pos, sp_pos), dim=1)
        q_h = self.human_queries.expand(B, -1, -1)
        q_o = self.object_queries.expand(B, -1, -1)
        q_h, q_o, _ = self.instance_decoder(q_h, q_o, self.pair_embedding, memory, memory_pos)
        inst = self.instance_heads(q_h, q_o, self.object_weights)

        v_verb = self.verb_decoder(g_mem, g_pos)
        q_inter = form_interaction_queries(q_h, q_o, self.pair_embedding)
        q_inter = self.interaction_decoder(q_inter, sp_mem, sp_pos, g_mem, g_pos)
        verb_logits, projected = self.verb_predictor(q_inter, v_verb, self.verb_weights)
        return {
            "human_boxes": inst.human_boxes,
            "object_boxes": inst.object_boxes,
            "object_logits": inst.object_logits,
            "human_logits": inst.human_logits,
            "verb_logits": verb_logits,
            "projected_queries": projected,
            "v_sp": v_sp,
        }

    @staticmethod
    def instance_predictions(outputs: dict) -> InstancePredictions:
        return InstancePredictions(
            outputs["human_boxes"], outputs["object_boxes"], outputs["object_logits"], outputs["human_logits"]
        )
