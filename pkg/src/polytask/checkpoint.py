"""Checkpoint container: JSON manifest plus raw little-endian f32 payload.

Layout: 8-byte magic, uint64 manifest length, UTF-8 JSON manifest, then
the tensor payloads concatenated in manifest order. The manifest lists
(name, shape, dtype, offset) per tensor and echoes the model config so a
checkpoint is self-describing. Activation-bank rows are stored as
individual vectors named ``act.<position>.<strategy>.<index>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, TransducerModel

MAGIC = b"PTCKPT01"
_BANK_POSITIONS = {"bank_feature": "feature", "bank_encoder": "encoder"}
_BANK_PARAMS = {module + ".vectors": pos for module, pos in _BANK_POSITIONS.items()}


def _entries(model: TransducerModel) -> list[tuple[str, torch.Tensor]]:
    out: list[tuple[str, torch.Tensor]] = []
    strategy = model.cfg.strategy.value
    for name, param in model.named_parameters():
        pos = _BANK_PARAMS.get(name)
        if pos is None:
            out.append((name, param.detach()))
        else:
            for i in range(param.shape[0]):
                out.append((f"act.{pos}.{strategy}.{i}", param.detach()[i]))
    return out


def save_checkpoint(path: Path | str, model: TransducerModel) -> None:
    tensors = []
    payload = bytearray()
    for name, tensor in _entries(model):
        raw = np.ascontiguousarray(tensor.to(torch.float32).numpy(), dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "dtype": "f32",
                        "offset": len(payload)})
        payload.extend(raw)
    manifest = {"format": "polytask-checkpoint", "version": 1,
                "model_config": model.cfg.to_dict(), "tensors": tensors}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def read_manifest(path: Path | str) -> dict:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path: Path | str) -> TransducerModel:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(n).decode("utf-8"))
        payload = f.read()
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = TransducerModel(cfg)
    strategy = cfg.strategy.value
    named = dict(model.named_parameters())
    with torch.no_grad():
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f4", count=count,
                                offset=entry["offset"]).reshape(shape)
            name = entry["name"]
            if name.startswith("act."):
                _, pos, strat, idx = name.split(".")
                if strat != strategy:
                    raise ValueError(f"bank entry {name} does not match strategy {strategy}")
                module = {v: k for k, v in _BANK_POSITIONS.items()}[pos]
                named[f"{module}.vectors"][int(idx)] = torch.from_numpy(arr.copy())
            else:
                if name not in named:
                    raise ValueError(f"unknown tensor {name} in checkpoint")
                named[name].copy_(torch.from_numpy(arr.copy()))
    return model
