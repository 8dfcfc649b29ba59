"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"INCOPT01"          magic
    u32                  format version
    u64                  header length in bytes
    header               UTF-8 JSON: configs, transform, tensor table, payload sha256
    payload              float64 little-endian tensors, concatenated

The header is written with sorted keys and no timestamps, so identical training
runs produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, VersionMismatchError
from .model import ModelConfig
from .trainer import AdamState, Checkpoint, LabelTransform, TrainConfig

MAGIC = b"INCOPT01"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    blob = json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {}
    for k, v in ckpt.params.items():
        out[f"params/{k}"] = v
    for k, v in ckpt.optimizer.m.items():
        out[f"adam_m/{k}"] = v
    for k, v in ckpt.optimizer.v.items():
        out[f"adam_v/{k}"] = v
    out["meta/validation_merchants"] = np.asarray(ckpt.validation_merchants, dtype=np.float64)
    return out


def dumps(ckpt: Checkpoint, version: int = FORMAT_VERSION) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, arr in _tensors(ckpt).items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "format_version": version,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "transform": ckpt.transform.to_dict(),
        "config_hash": config_hash(ckpt.model_config, ckpt.train_config),
        "seed": ckpt.seed,
        "adam_step": ckpt.optimizer.step,
        "best_epoch": ckpt.best_epoch,
        "tensors": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, version, len(head)) + head + payload


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def loads(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise CorruptFileError("checkpoint truncated before header")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptFileError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + head_len:
        raise CorruptFileError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[start:start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"unreadable checkpoint header: {exc}") from None
    payload = blob[start + head_len:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptFileError("checkpoint payload is truncated or corrupted")

    try:
        return _build(header, payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"malformed checkpoint header: {exc}") from None


def _build(header: dict, payload: bytes) -> Checkpoint:
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)

    def group(prefix):
        return {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith(prefix + "/")}

    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        train_config=TrainConfig.from_dict(header["train_config"]),
        params=group("params"),
        optimizer=AdamState(group("adam_m"), group("adam_v"), int(header["adam_step"])),
        transform=LabelTransform(**header["transform"]),
        validation_merchants=tensors["meta/validation_merchants"].astype(np.int64),
        best_epoch=int(header["best_epoch"]),
    )


def load(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptFileError(f"cannot read checkpoint: {exc}") from None
    return loads(blob)
