"""Checkpoint format: JSON header + tensor manifest + float64 blob + checksum.

Layout (all integers little-endian):
    8 bytes   magic b"KNEECKPT"
    u32       header length, then header JSON (utf-8)
    u32       manifest length, then manifest JSON
    u64       blob length, then the raw little-endian float64 parameters
    32 bytes  SHA-256 of everything above

The header carries the format version, architecture descriptor,
preprocessing config, target normalization stats, and stage provenance.
The manifest lists (name, group, shape, offset); offsets must tile the
blob exactly. Loading is refused on checksum or coverage failures, so a
truncated file never yields a partial model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError, UpgradeError
from .ioutil import write_bytes_atomic
from .models import ModelGraph, ModelHyper, _param_specs

MAGIC = b"KNEECKPT"
FORMAT_VERSION = 1


def save_checkpoint(model: ModelGraph, path) -> None:
    """Serialize a model; load_checkpoint reproduces every tensor bit-exactly."""
    header = {
        "format_version": FORMAT_VERSION,
        "scenario": model.scenario,
        "hyper": model.hyper.to_dict(),
        "trainable": model.trainable,
        "lr_scale": model.lr_scale,
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "meta": model.meta,
    }
    manifest = []
    blobs = []
    offset = 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        manifest.append({"name": name, "group": model.group_of[name],
                         "shape": list(p.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    manifest_bytes = json.dumps(manifest).encode("utf-8")
    blob = b"".join(blobs)
    body = (MAGIC
            + struct.pack("<I", len(header_bytes)) + header_bytes
            + struct.pack("<I", len(manifest_bytes)) + manifest_bytes
            + struct.pack("<Q", len(blob)) + blob)
    write_bytes_atomic(path, body + hashlib.sha256(body).digest())


def _read_exact(data: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(data):
        raise CheckpointError(f"corrupt checkpoint: truncated while reading {what}")
    return data[offset : offset + count], offset + count


def load_checkpoint(path) -> ModelGraph:
    """Load and verify a checkpoint written by save_checkpoint."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 32:
        raise CheckpointError(f"corrupt checkpoint: file too short ({len(data)} bytes)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")

    offset = 0
    magic, offset = _read_exact(body, offset, len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic {magic!r})")
    raw, offset = _read_exact(body, offset, 4, "header length")
    (hlen,) = struct.unpack("<I", raw)
    raw, offset = _read_exact(body, offset, hlen, "header")
    header = json.loads(raw.decode("utf-8"))
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UpgradeError(
            f"checkpoint format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})")
    raw, offset = _read_exact(body, offset, 4, "manifest length")
    (mlen,) = struct.unpack("<I", raw)
    raw, offset = _read_exact(body, offset, mlen, "manifest")
    manifest = json.loads(raw.decode("utf-8"))
    raw, offset = _read_exact(body, offset, 8, "blob length")
    (blen,) = struct.unpack("<Q", raw)
    blob, offset = _read_exact(body, offset, blen, "parameter blob")
    if offset != len(body):
        raise CheckpointError("corrupt checkpoint: trailing bytes after blob")

    # manifest coverage: offsets must tile [0, blob_len) without overlap
    expected_offset = 0
    for entry in manifest:
        if entry["offset"] != expected_offset:
            raise CheckpointError(
                f"corrupt checkpoint: manifest offset {entry['offset']} for "
                f"{entry['name']!r}, expected {expected_offset}")
        expected_offset += int(np.prod(entry["shape"], dtype=np.int64)) * 8
    if expected_offset != blen:
        raise CheckpointError(
            f"corrupt checkpoint: manifest covers {expected_offset} bytes, blob has {blen}")

    scenario = header["scenario"]
    hyper = ModelHyper.from_dict(header["hyper"])
    specs = {name: (group, tuple(shape))
             for name, group, shape, _ in _param_specs(scenario, hyper)}
    if [e["name"] for e in manifest] != list(specs):
        raise CheckpointError(
            "checkpoint manifest does not match the declared architecture")

    params = {}
    group_of = {}
    for entry in manifest:
        name = entry["name"]
        shape = tuple(entry["shape"])
        group, expected_shape = specs[name]
        if shape != expected_shape or entry["group"] != group:
            raise CheckpointError(
                f"checkpoint tensor {name!r} has shape {shape} / group "
                f"{entry['group']!r}, architecture expects {expected_shape} / {group!r}")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=entry["offset"]).reshape(shape)
        params[name] = Tensor(arr.astype(np.float64), requires_grad=True, op=name)
        group_of[name] = group

    model = ModelGraph(scenario, hyper, params, group_of,
                       target_mean=header["target_mean"],
                       target_std=header["target_std"],
                       meta=header.get("meta", {}))
    for group, flag in header["trainable"].items():
        model.trainable[group] = bool(flag)
    for group, scale in header["lr_scale"].items():
        model.lr_scale[group] = float(scale)
    return model
