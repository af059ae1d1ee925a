"""Single-file checkpoint container.

Layout::

    b"KI2HOICK" | uint32 version | uint64 header length | JSON header | array bytes

The header echoes the model, train and split configs, the seed and the
epoch, and lists every array by name with dtype, shape and byte offset.
Keys are sorted and no timestamps are written, so identical states give
identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .label_space import LabelSpace, SplitSpec

MAGIC = b"KI2HOICK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Malformed file, unsupported version or mismatched resume."""


def write_container(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    body = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = body + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise CheckpointError(f"array {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(data[lo : lo + e["nbytes"]], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def _optimizer_arrays(optimizer) -> tuple[dict, dict[str, np.ndarray]]:
    state = optimizer.state_dict()
    arrays, slots = {}, {}
    for pid, st in state["state"].items():
        for key, val in st.items():
            name = f"optim/{pid}/{key}"
            arrays[name] = torch.as_tensor(val).detach().cpu().numpy()
            slots.setdefault(str(pid), []).append(key)
    groups = [{k: v for k, v in g.items()} for g in state["param_groups"]]
    return {"param_groups": groups, "slots": slots}, arrays


def save_checkpoint(path, model, optimizer=None, train_cfg=None, split: SplitSpec | None = None,
                    epoch: int = 0) -> Path:
    meta = {
        "model_config": model.config.to_dict(),
        "label_space": model.space.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "split": split.to_dict() if split is not None else None,
        "seed": model.config.seed if train_cfg is None else train_cfg.seed,
        "epoch": int(epoch),
        "optimizer": None,
    }
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if optimizer is not None:
        meta["optimizer"], opt_arrays = _optimizer_arrays(optimizer)
        arrays.update(opt_arrays)
    write_container(path, meta, arrays)
    return Path(path)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    from .model import KI2HOI, ModelConfig

    meta, arrays = read_container(path)
    model = KI2HOI(ModelConfig.from_dict(meta["model_config"]), LabelSpace.from_dict(meta["label_space"]))
    _load_state(model, arrays)
    return model, meta


def _load_state(model, arrays) -> None:
    state = {k[len("model/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model/")}
    missing = set(model.state_dict()) - set(state)
    extra = set(state) - set(model.state_dict())
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    model.load_state_dict(state)


def load_checkpoint(path, model, optimizer=None, *, expect_train=None, expect_split=None) -> int:
    """Load weights (and optimizer state) into existing objects; returns the stored epoch.

    Raises CheckpointError when the stored model, train config or split
    differs from the expected ones.
    """
    meta, arrays = read_container(path)
    if meta["model_config"] != model.config.to_dict():
        raise CheckpointError("checkpoint model config differs from the model being resumed")
    if meta["label_space"] != model.space.to_dict():
        raise CheckpointError("checkpoint label space differs")
    if expect_train is not None and meta["train_config"] != expect_train.to_dict():
        raise CheckpointError("checkpoint train config differs from the requested one")
    if expect_split is not None and meta["split"] != expect_split.to_dict():
        raise CheckpointError("checkpoint split differs from the requested one")
    _load_state(model, arrays)
    if optimizer is not None and meta.get("optimizer") is not None:
        opt = meta["optimizer"]
        state = {}
        for pid, keys in opt["slots"].items():
            state[int(pid)] = {k: torch.from_numpy(arrays[f"optim/{pid}/{k}"]) for k in keys}
        optimizer.load_state_dict({"state": state, "param_groups": opt["param_groups"]})
    return int(meta["epoch"])
