"""Shared oracles: central finite differences and module cases for gradient checks."""
import numpy as np
import torch

from ki2hoi.encoder import EfficientAdditiveAttention, GlobalContextFormer, HoPairEncoder, LocalEncoderBlock
from ki2hoi.frontend import grid_positions
from ki2hoi.instance import InstanceDecoder, InstanceHeads, form_interaction_queries
from ki2hoi.matching import LossWeights, compute_losses
from ki2hoi.semantics import InteractionDecoder, VerbPredictor
from ki2hoi.verb import VerbExtractionDecoder

D, HEADS, N, A, C, CLIP = 8, 2, 3, 4, 5, 6


def fd_relative_error(fn, tensors, seed, coords=4, eps=1e-6):
    """Compare autograd against central differences of a random projection of ``fn``.

    Samples up to ``coords`` entries per tensor; returns the norm-wise relative
    error ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probe_out = fn()
    proj = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in _as_list(probe_out)]

    def scalar():
        return sum((o * p).sum() for o, p in zip(_as_list(fn()), proj))

    for t in tensors:
        t.grad = None
    scalar().backward()
    auto, numeric = [], []
    rng = np.random.default_rng(seed)
    for t in tensors:
        flat = t.data.view(-1)
        grad = t.grad.view(-1) if t.grad is not None else torch.zeros_like(flat)
        for idx in rng.choice(flat.numel(), size=min(coords, flat.numel()), replace=False):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = scalar().item()
                flat[idx] = orig - eps
                down = scalar().item()
                flat[idx] = orig
            numeric.append((up - down) / (2 * eps))
            auto.append(grad[idx].item())
    auto, numeric = np.array(auto), np.array(numeric)
    denom = max(np.linalg.norm(auto), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(auto - numeric) / denom)


def _as_list(out):
    if isinstance(out, torch.Tensor):
        return [out]
    if isinstance(out, dict):
        return [v for v in out.values() if isinstance(v, torch.Tensor)]
    return [o for o in out if isinstance(o, torch.Tensor)]


def _leaf(*shape, gen):
    return torch.randn(*shape, generator=gen, dtype=torch.float64).requires_grad_()


def module_cases(seed):
    """(name, fn, tensors) triples covering every differentiable stage, in float64."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    cases = []

    def add(name, module, make_inputs, call):
        module = module.double()
        inputs = make_inputs()
        params = [p for p in module.parameters() if p.requires_grad]
        cases.append((name, lambda: call(module, *inputs), list(inputs) + params))

    add("local_encoder_block", LocalEncoderBlock(D).eval(), lambda: (_leaf(2, D, 4, 4, gen=gen),), lambda m, x: m(x))
    add("additive_attention", EfficientAdditiveAttention(D), lambda: (_leaf(2, 5, D, gen=gen),), lambda m, x: m(x))
    add("global_context_former", GlobalContextFormer(D), lambda: (_leaf(2, D, 3, 3, gen=gen),), lambda m, x: m(x))
    add("ho_pair_encoder", HoPairEncoder(D, roi_size=3).eval(), lambda: (_leaf(2, D, 4, 5, gen=gen),),
        lambda m, x: m(x))

    pos_mem = grid_positions(2, 3, D)
    add(
        "instance_decoder",
        InstanceDecoder(D, HEADS, layers=2, ffn_dim=2 * D),
        lambda: (_leaf(1, N, D, gen=gen), _leaf(1, N, D, gen=gen), _leaf(N, D, gen=gen), _leaf(1, 6, D, gen=gen)),
        lambda m, qh, qo, p, mem: m(qh, qo, p, mem, pos_mem[None])[:2],
    )
    add(
        "instance_heads",
        InstanceHeads(D, CLIP, logit_scale=5.0),
        lambda: (_leaf(1, N, D, gen=gen), _leaf(1, N, D, gen=gen), _leaf(C, CLIP, gen=gen)),
        lambda m, qh, qo, w: [m(qh, qo, w).human_boxes, m(qh, qo, w).object_boxes, m(qh, qo, w).object_logits,
                              m(qh, qo, w).human_logits],
    )
    add(
        "interaction_queries",
        torch.nn.Identity(),
        lambda: (_leaf(N, D, gen=gen), _leaf(N, D, gen=gen), _leaf(N, D, gen=gen)),
        lambda m, qh, qo, p: form_interaction_queries(qh, qo, p),
    )
    add(
        "verb_extraction_decoder",
        VerbExtractionDecoder(A, D, HEADS, layers=1, ffn_dim=2 * D),
        lambda: (_leaf(1, 6, D, gen=gen),),
        lambda m, mem: m(mem, pos_mem[None]),
    )
    add(
        "interaction_decoder",
        InteractionDecoder(D, HEADS, layers=2, ffn_dim=2 * D),
        lambda: (_leaf(1, N, D, gen=gen), _leaf(1, 6, D, gen=gen), _leaf(1, 6, D, gen=gen)),
        lambda m, q, sp, g: m(q, sp, pos_mem[None], g, pos_mem[None]),
    )
    add(
        "verb_predictor",
        VerbPredictor(D, CLIP, logit_scale=5.0),
        lambda: (_leaf(1, N, D, gen=gen), _leaf(1, A, D, gen=gen), _leaf(A, CLIP, gen=gen)),
        lambda m, q, v, w: m(q, v, w),
    )

    # set-prediction loss with a fixed assignment
    boxes_h = torch.rand(1, N, 2, generator=gen, dtype=torch.float64)
    outs = {
        "human_boxes": torch.cat([boxes_h * 0.5 + 0.25, torch.rand(1, N, 2, generator=gen, dtype=torch.float64) * 0.3 + 0.1], -1),
        "object_boxes": torch.cat([boxes_h * 0.4 + 0.3, torch.rand(1, N, 2, generator=gen, dtype=torch.float64) * 0.3 + 0.1], -1),
        "object_logits": torch.randn(1, N, C + 1, generator=gen, dtype=torch.float64),
        "human_logits": torch.randn(1, N, generator=gen, dtype=torch.float64),
        "verb_logits": torch.randn(1, N, A, generator=gen, dtype=torch.float64),
        "projected_queries": torch.randn(1, N, CLIP, generator=gen, dtype=torch.float64),
        "v_sp": torch.randn(1, 4, CLIP, generator=gen, dtype=torch.float64),
    }
    for k in outs:
        if k != "v_sp":
            outs[k].requires_grad_()
    target = [{
        "human_boxes": torch.tensor([[0.5, 0.5, 0.2, 0.3], [0.3, 0.4, 0.1, 0.2]], dtype=torch.float64),
        "object_boxes": torch.tensor([[0.6, 0.4, 0.1, 0.1], [0.2, 0.7, 0.2, 0.1]], dtype=torch.float64),
        "objects": torch.tensor([1, 3]),
        "verbs": torch.tensor([[1, 0, 1, 0], [0, 1, 0, 0]], dtype=torch.float64),
    }]
    weights = LossWeights(reconstruction_type="l2")
    cases.append(("set_prediction_loss",
                  lambda: compute_losses(outs, target, [[(0, 1), (2, 0)]], weights)["L_total"],
                  [outs[k] for k in outs if k != "v_sp"]))
    return cases
