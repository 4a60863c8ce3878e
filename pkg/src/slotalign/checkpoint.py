"""Checkpoint files: a JSON manifest followed by raw little-endian float64 arrays.

Layout::

    b"SLTCKPT\\0" | uint64 LE manifest length | manifest JSON | array bytes...

Each manifest array entry records its name, shape, byte offset (relative
to the end of the manifest), byte length and SHA-256 digest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .corpus import Ontology, Vocab

MAGIC = b"SLTCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def write_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
        blobs.append(raw)
        offset += len(raw)
    manifest = dict(meta, format_version=FORMAT_VERSION, arrays=entries)
    head = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file (bad header)")
    (n,) = struct.unpack("<Q", buf[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + n > len(buf):
        raise IntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(buf[start:start + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path}: corrupt manifest ({e})") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    body = start + n
    arrays = {}
    for e in manifest["arrays"]:
        lo = body + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(buf):
            raise IntegrityError(f"{path}: truncated array {e['name']}")
        raw = buf[lo:hi]
        if hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise IntegrityError(f"{path}: checksum mismatch for array {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
    expected_end = body + sum(e["nbytes"] for e in manifest["arrays"])
    if expected_end != len(buf):
        raise IntegrityError(f"{path}: file length {len(buf)} does not match manifest ({expected_end})")
    return manifest, arrays


def save_checkpoint(model, path, optimizer=None, global_step: int = 0, epoch: int = 0,
                    extra: dict | None = None) -> None:
    arrays = {f"param/{name}": p.data for name, p in model.named_parameters()}
    opt_meta = None
    if optimizer is not None and optimizer.state is not None:
        for name, m in optimizer.state.m.items():
            arrays[f"adam_m/{name}"] = m
        for name, v in optimizer.state.v.items():
            arrays[f"adam_v/{name}"] = v
        opt_meta = {"step": optimizer.state.step}
    meta = {
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.itos),
        "ontology": model.ontology.to_dict(),
        "global_step": global_step,
        "epoch": epoch,
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    write_checkpoint(path, arrays, meta)


def load_checkpoint(path):
    """Rebuild the model stored at ``path``.

    Returns ``(model, manifest, arrays)``; optimizer moments stay in
    ``arrays`` under ``adam_m/`` and ``adam_v/`` for the trainer to restore.
    """
    from .model import SlotTurnTracker

    manifest, arrays = read_checkpoint(path)
    config = TrainConfig.from_dict(manifest["config"])
    vocab = Vocab()
    for tok in manifest["vocab"][len(vocab):]:
        vocab.add(tok)
    ontology = Ontology.from_dict(manifest["ontology"])
    model = SlotTurnTracker(config, vocab, ontology)
    params = dict(model.named_parameters())
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise IntegrityError(f"{path}: missing parameter {name}")
        if arrays[key].shape != p.data.shape:
            raise IntegrityError(f"{path}: shape mismatch for {name}")
        p.data = arrays[key].copy()
    model.invalidate_schema()
    return model, manifest, arrays
