"""Checkpoint serialization.

An encoder checkpoint is a text manifest (``<prefix>.manifest``) leading
with the magic string "TNCSE1", followed by format-version, config fields,
and a tensor directory (name, shape, byte offset), plus a binary blob
(``<prefix>.bin``) of little-endian float32 values, row-major, in manifest
order.  Ensemble manifests list member checkpoint prefixes.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from .encoder import Encoder, EncoderConfig
from .errors import CheckpointError

MAGIC = "TNCSE1"
FORMAT_VERSION = 1

_CONFIG_FIELDS = [
    ("vocab_size", int), ("max_seq_len", int), ("hidden_dim", int),
    ("num_layers", int), ("num_heads", int), ("ffn_dim", int),
    ("dropout_p", float), ("layernorms_stripped", int), ("pooling_mode", str),
]


def save_encoder(enc: Encoder, prefix: str):
    """Write ``<prefix>.manifest`` and ``<prefix>.bin``."""
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    names = sorted(enc.params)
    lines = [MAGIC, f"format-version {FORMAT_VERSION}", f"seed {enc.seed}",
             f"name {enc.name}", f"vocab-hash {enc.vocab_hash or '-'}"]
    for field, _ in _CONFIG_FIELDS:
        lines.append(f"config {field} {getattr(enc.config, field)}")
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(enc.params[name].data, dtype="<f4")
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} {len(arr.shape)} {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    with open(prefix + ".manifest", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(prefix + ".bin", "wb") as f:
        for b in blobs:
            f.write(b)


def load_encoder(prefix: str) -> Encoder:
    manifest_path = prefix + ".manifest"
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"no manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{manifest_path}: bad magic "
                              f"(expected {MAGIC!r}, got {lines[0] if lines else ''!r})")

    fields, config_kv, tensors = {}, {}, []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "config":
            config_kv[parts[1]] = parts[2]
        elif parts[0] == "tensor":
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(s) for s in parts[3:3 + ndim])
            offset = int(parts[3 + ndim])
            tensors.append((name, shape, offset))
        else:
            fields[parts[0]] = parts[1] if len(parts) > 1 else ""
    if fields.get("format-version") != str(FORMAT_VERSION):
        raise CheckpointError(f"{manifest_path}: unsupported format-version "
                              f"{fields.get('format-version')!r}")

    try:
        kwargs = {name: typ(config_kv[name]) for name, typ in _CONFIG_FIELDS}
        config = EncoderConfig(**kwargs)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{manifest_path}: bad config: {exc}") from None

    blob_path = prefix + ".bin"
    if not os.path.exists(blob_path):
        raise CheckpointError(f"missing weight blob {blob_path}")
    blob = np.fromfile(blob_path, dtype="<f4")

    from .autodiff import Tensor
    params = {}
    for name, shape, offset in tensors:
        n = int(np.prod(shape)) if shape else 1
        start = offset // 4
        if start + n > blob.size:
            raise CheckpointError(f"{blob_path}: tensor {name} overruns blob")
        params[name] = Tensor(blob[start:start + n].reshape(shape).astype(np.float32),
                              requires_grad=True)
    vocab_hash = fields.get("vocab-hash", "-")
    return Encoder(config, int(fields.get("seed", 0)), fields.get("name", "enc"),
                   None if vocab_hash == "-" else vocab_hash, params)


def checkpoint_hash(prefix: str) -> str:
    """SHA-256 over manifest + blob bytes, for tamper checks."""
    h = hashlib.sha256()
    for suffix in (".manifest", ".bin"):
        with open(prefix + suffix, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def save_ensemble_manifest(member_prefixes, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(MAGIC + "\n")
        f.write("kind ensemble\n")
        for p in member_prefixes:
            f.write(f"member {p}\n")


def load_ensemble_manifest(path):
    if not os.path.exists(path):
        raise CheckpointError(f"no ensemble manifest at {path}")
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    members = [line.split(None, 1)[1] for line in lines[1:]
               if line.startswith("member ")]
    if not members:
        raise CheckpointError(f"{path}: ensemble manifest lists no members")
    base = os.path.dirname(os.path.abspath(path))
    return [m if os.path.isabs(m) else os.path.join(base, m) for m in members]
