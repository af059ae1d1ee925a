"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
On failure a single JSON line ``{"error": ..., "message": ..., "exit_code": ...}``
is written to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .label_space import LabelSpace, LabelSpaceError, Setting, SplitSpec, full_split, make_split

HICO_METADATA_ENV = "KI2HOI_HICO_METADATA"
VALIDATION_ERRORS = (ConfigError, LabelSpaceError, CheckpointError, ValueError, FileNotFoundError, KeyError)


class UsageError(ValueError):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _seed_everything(seed: int) -> None:
    import torch

    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _labels_path(args) -> Path:
    path = args.labels or os.environ.get(HICO_METADATA_ENV)
    if not path:
        raise UsageError(f"--labels is required (or set {HICO_METADATA_ENV})")
    return Path(path)


def _load_split(path, space: LabelSpace) -> SplitSpec:
    if path is None:
        return full_split(space)
    split = SplitSpec.load(path)
    if split.num_hois != space.num_hois:
        raise UsageError("split and label space disagree on the number of HOIs")
    return split


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.model.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from .data import save_dataset
    from .synthetic import generate_synthetic_dataset, synthetic_label_space

    cfg = _run_config(args)
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    seed = args.seed if args.seed is not None else 0
    space = synthetic_label_space(cfg.scene)
    if args.dry_run:
        _emit({"dry_run": True, "command": "synth", "n_images": args.n, "num_hois": space.num_hois})
        return 0
    dataset, counts = generate_synthetic_dataset(cfg.scene, space, args.n, seed, args.first_id)
    out = Path(args.out)
    save_dataset(dataset, out)
    labels = out / "label_space.json"
    if args.counts_from is not None:
        counts = LabelSpace.load(args.counts_from).train_counts
    space.with_counts(counts).save(labels)
    _emit({"images": len(dataset.images), "pairs": len(dataset.annotations), "out": str(out),
           "labels": str(labels)})
    return 0


# ---------------------------------------------------------------- split

def cmd_split(args) -> int:
    if args.inspect:
        split = SplitSpec.load(args.inspect)
        _emit({"setting": split.setting.value, "seed": split.seed, "unseen": len(split.unseen),
               "seen": len(split.seen)})
        return 0
    space = LabelSpace.load(_labels_path(args))
    setting = Setting.parse(args.setting)
    params = {}
    if args.names:
        key = {Setting.UV: "verbs", Setting.UO: "objects"}.get(setting)
        if key is None:
            raise UsageError("--names applies to UV and UO only")
        params[key] = [n.strip() for n in args.names.split(",") if n.strip()]
    elif args.n is not None:
        key = {Setting.UV: "n_unseen_verb", Setting.UO: "n_unseen_obj"}.get(setting, "n_unseen_hoi")
        params[key] = args.n
    split = make_split(space, setting, params, args.seed if args.seed is not None else 0)
    summary = {"setting": split.setting.value, "seed": split.seed, "unseen": len(split.unseen),
               "seen": len(split.seen)}
    if args.dry_run:
        summary["dry_run"] = True
    elif args.out:
        split.save(args.out)
        summary["out"] = args.out
    _emit(summary)
    return 0


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    from .data import load_annotations
    from .model import KI2HOI
    from .training import fit

    cfg = _run_config(args)
    space = LabelSpace.load(_labels_path(args))
    split = _load_split(args.split or cfg.split, space)
    if args.epochs is not None:
        cfg.train = type(cfg.train).from_dict({**cfg.train.to_dict(), "epochs": args.epochs,
                                               "lr_drop": min(cfg.train.lr_drop, args.epochs - 1)})
    dataset = load_annotations(args.data)
    if args.dry_run:
        _emit({"dry_run": True, "command": "train", "images": len(dataset.images), "config": cfg.to_dict()})
        return 0
    _seed_everything(cfg.train.seed)
    model = KI2HOI(cfg.model, space)
    result = fit(model, dataset, cfg.train, split, log_path=args.log, checkpoint_path=args.out, resume=args.resume)
    final = {k: result.log.series(k)[-1] for k in ("L_total", "L_b", "L_u", "L_o", "L_i", "L_re")}
    _emit({"checkpoint": args.out, "steps": result.steps, "images": len(result.train_images), "final": final})
    return 0


# ---------------------------------------------------------------- eval / infer

def cmd_eval(args) -> int:
    from .data import load_annotations
    from .evaluation import evaluate, read_detections, write_detections
    from .training import predict

    if (args.checkpoint is None) == (args.detections is None):
        raise UsageError("give exactly one of --checkpoint or --detections")
    dataset = load_annotations(args.data)
    if args.checkpoint is not None:
        model, meta = load_model(args.checkpoint)
        space = model.space
        split = _load_split(args.split, space) if args.split else (
            SplitSpec.from_dict(meta["split"]) if meta.get("split") else full_split(space))
    else:
        model = None
        space = LabelSpace.load(_labels_path(args))
        split = _load_split(args.split, space)
        if args.labels_counts:
            space = space.with_counts(LabelSpace.load(args.labels_counts).train_counts)
    if args.dry_run:
        _emit({"dry_run": True, "command": "eval", "images": len(dataset.images)})
        return 0
    if model is not None:
        dets = predict(model, dataset, args.top_k)
        if args.save_detections:
            write_detections(dets, args.save_detections)
    else:
        dets = read_detections(args.detections, space)
    report = evaluate(dets, dataset, space, split)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.to_table())
    return 0


def _read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def cmd_infer(args) -> int:
    import torch

    from .evaluation import assemble_detections, final_scores

    model, _ = load_model(args.checkpoint)
    image = _read_image(args.image)
    if args.dry_run:
        _emit({"dry_run": True, "command": "infer", "shape": list(image.shape)})
        return 0
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(image)[None])
        inst = model.instance_predictions(out)
        scores = final_scores(inst.human_scores, inst.object_probs, out["verb_logits"], model.space,
                              model.config.score_fusion)
    dets = assemble_detections(scores[0], out["human_boxes"][0], out["object_boxes"][0], model.space,
                               args.image_id, args.top_k)
    lines = [json.dumps(d.to_record()) for d in dets]
    if args.out:
        Path(args.out).write_text("".join(line + "\n" for line in lines))
    else:
        for line in lines:
            print(line)
    return 0


# ---------------------------------------------------------------- attention export

def check_row_stochastic(weights: np.ndarray, tol: float = 1e-6) -> None:
    sums = weights.sum(-1)
    if not np.all(np.abs(sums - 1.0) <= tol):
        raise RuntimeError(f"attention rows do not sum to 1 (max deviation {np.abs(sums - 1).max():.3g})")


def collect_attention(model, image: np.ndarray) -> dict[str, np.ndarray]:
    """Head-averaged attention maps of the verb and interaction decoders for one image."""
    import torch

    model.eval()
    model.record_attention(True)
    try:
        with torch.no_grad():
            model(torch.from_numpy(image)[None])
        maps = {}
        for name, mods in model.attention_modules().items():
            for i, m in enumerate(mods):
                maps[f"{name}_layer{i}"] = m.last_weights[0].double().numpy()
    finally:
        model.record_attention(False)
    return maps


def cmd_export_attention(args) -> int:
    from PIL import Image

    model, _ = load_model(args.checkpoint)
    image = _read_image(args.image)
    if args.dry_run:
        _emit({"dry_run": True, "command": "export-attention", "shape": list(image.shape)})
        return 0
    maps = collect_attention(model, image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, w in sorted(maps.items()):
        check_row_stochastic(w)
        np.save(out / f"{name}.npy", w)
        peak = w.max(axis=-1, keepdims=True)
        gray = np.rint(255.0 * w / np.where(peak > 0, peak, 1.0)).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(out / f"{name}.png")
        written.append({"name": name, "shape": list(w.shape)})
    _emit({"out": str(out), "maps": written})
    return 0


# ---------------------------------------------------------------- ablate

AXES = {
    "reconstruction": ("l1", "l2", "l1+l2", "none"),
    "verb-layers": (1, 2, 3),
}


def run_ablation(axis: str, cfg: RunConfig, train_set, test_set, space, split) -> list[dict]:
    from dataclasses import replace

    from .evaluation import evaluate
    from .model import KI2HOI
    from .training import fit, predict

    rows = []
    for value in AXES[axis]:
        if axis == "reconstruction":
            train_cfg = replace(cfg.train, loss=replace(cfg.train.loss, reconstruction_type=value))
            model_cfg = cfg.model
        else:
            train_cfg = cfg.train
            model_cfg = replace(cfg.model, verb_layers=value)
        model = KI2HOI(model_cfg, space)
        result = fit(model, train_set, train_cfg, split)
        report = evaluate(predict(model, test_set), test_set, space, split)
        final = result.log.series("L_total")[-1]
        rows.append({"setting": value, "final_loss": final, "finite": math.isfinite(final),
                     "full": report.maps["default"]["full"], "seen": report.maps["default"]["seen"],
                     "unseen": report.maps["default"]["unseen"]})
    return rows


def format_ablation(axis: str, rows: list[dict]) -> str:
    def cell(x):
        return f"{'-':>10}" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:>10.2f}"

    header = f"{axis:<16}{'loss':>10}{'full':>10}{'seen':>10}{'unseen':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{str(r['setting']):<16}{r['final_loss']:>10.4f}" + cell(r["full"]) + cell(r["seen"])
                     + cell(r["unseen"]))
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    from .data import load_annotations

    cfg = _run_config(args)
    space = LabelSpace.load(_labels_path(args))
    split = _load_split(args.split or cfg.split, space)
    train_set = load_annotations(args.data)
    test_set = load_annotations(args.test_data) if args.test_data else train_set
    if args.epochs is not None:
        cfg.train = type(cfg.train).from_dict({**cfg.train.to_dict(), "epochs": args.epochs,
                                               "lr_drop": min(cfg.train.lr_drop, args.epochs - 1)})
    if args.dry_run:
        _emit({"dry_run": True, "command": "ablate", "axis": args.axis, "rows": list(AXES[args.axis])})
        return 0
    _seed_everything(cfg.train.seed)
    rows = run_ablation(args.axis, cfg, train_set, test_set, space, split)
    if args.out:
        Path(args.out).write_text(json.dumps({"axis": args.axis, "rows": rows}, indent=1))
    print(format_ablation(args.axis, rows))
    if not all(r["finite"] for r in rows):
        raise RuntimeError("an ablation run ended with a non-finite loss")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    common.add_argument("--dry-run", action="store_true", help="validate inputs and exit without side effects")
    common.add_argument("--config", default=None, help="JSON run config")

    parser = argparse.ArgumentParser(prog="ki2hoi", description="Zero-shot HOI detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--first-id", type=int, default=0)
    p.add_argument("--counts-from", default=None, help="label space whose train counts to keep")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="make or inspect a zero-shot split")
    p.add_argument("--labels", default=None)
    p.add_argument("--setting", default="FULL")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--names", default=None, help="comma-separated verbs (UV) or objects (UO)")
    p.add_argument("--out", default=None)
    p.add_argument("--inspect", default=None, help="print a summary of an existing split file")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="metrics log (JSON lines)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate detections or a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--labels-counts", default=None, help="label space providing train counts for rare/non-rare")
    p.add_argument("--split", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--detections", default=None)
    p.add_argument("--save-detections", default=None)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="detections for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-attention", parents=[common], help="dump decoder attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("ablate", parents=[common], help="reconstruction-loss or verb-layer sweep")
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    line = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(UsageError("invalid command line"), 1)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        return _fail(exc, 1)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
