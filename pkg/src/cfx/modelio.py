"""Versioned binary model files.

Layout (little-endian): ``b"CFXM"``, format version (u32), manifest length
(u32), UTF-8 JSON manifest, then every array's raw float64 bytes in manifest
order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from cfx.nn import Classifier
from cfx.series import NormStats

MAGIC = b"CFXM"
VERSION = 1
_HEAD = struct.Struct("<4sII")


class ModelFormatError(ValueError):
    pass


def encode_model(model: Classifier, stats: NormStats | None = None) -> bytes:
    arrays = list(model.state())
    if stats is not None:
        arrays += [("norm.mean", stats.mean), ("norm.std", stats.std)]
    manifest = {
        "in_channels": model.in_channels,
        "n_classes": model.n_classes,
        "length": model.length,
        "labels": list(model.labels),
        "dropout": model.dropout,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return _HEAD.pack(MAGIC, VERSION, len(blob)) + blob + body


def decode_model(data: bytes) -> tuple[Classifier, NormStats | None]:
    if len(data) < _HEAD.size:
        raise ModelFormatError("truncated model file (header incomplete)")
    magic, version, mlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError(f"not a model file (magic {magic!r}, expected {MAGIC!r})")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version}; this build reads version {VERSION}")
    if len(data) < _HEAD.size + mlen:
        raise ModelFormatError("truncated model file (manifest incomplete)")
    try:
        manifest = json.loads(data[_HEAD.size:_HEAD.size + mlen].decode("utf-8"))
        entries = [(str(n), tuple(int(s) for s in shape)) for n, shape in manifest["arrays"]]
        in_ch, n_cls = int(manifest["in_channels"]), int(manifest["n_classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model manifest: {exc}") from None

    offset = _HEAD.size + mlen
    need = offset + 8 * sum(int(np.prod(s)) for _, s in entries)
    if len(data) < need:
        raise ModelFormatError(f"truncated model file ({len(data)} bytes, manifest requires {need})")
    if len(data) > need:
        raise ModelFormatError(f"trailing bytes after model data ({len(data) - need} extra)")

    arrays = {}
    for name, shape in entries:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n

    try:
        model = Classifier(in_ch, n_cls, dropout=float(manifest.get("dropout", 0.0)),
                           length=manifest.get("length"), labels=tuple(manifest["labels"]))
    except ValueError as exc:
        raise ModelFormatError(f"shape manifest inconsistent: {exc}") from None
    expected = {name: a.shape for name, a in model.state()}
    stored = {n: s for n, s in entries if not n.startswith("norm.")}
    if stored != expected:
        diff = sorted(set(stored.items()) ^ set(expected.items()))
        raise ModelFormatError(f"shape manifest inconsistent with architecture: {diff[:4]}")
    model.load_state({n: arrays[n] for n in stored})
    model.eval_mode()
    stats = None
    if "norm.mean" in arrays:
        stats = NormStats(arrays["norm.mean"], arrays["norm.std"])
    return model, stats


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model: Classifier, stats: NormStats | None = None):
    atomic_write(path, encode_model(model, stats))


def load_model(path) -> tuple[Classifier, NormStats | None]:
    with open(path, "rb") as fh:
        return decode_model(fh.read())
