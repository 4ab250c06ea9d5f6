"""Bit-exact checkpoint format.

Layout: 8-byte magic "MLMFORGE", little-endian uint32 format version,
little-endian uint64 manifest byte length, UTF-8 JSON manifest, then the
raw little-endian tensor blob. The manifest's tensor table lists, in blob
order, (name, dtype, shape, offset, length) with contiguous non-overlapping
offsets.

Adam moments are stored alongside each value tensor (entries "<name>#m"
and "<name>#v") so an interrupted run resumes bitwise identically. Tensors
are stored as float32 regardless of compute mode.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import ModelConfig
from .errors import CheckpointError
from .numerics import ParameterStore

MAGIC = b"MLMFORGE"
FORMAT_VERSION = 1

_STORED_DTYPE = "<f4"


def save_checkpoint(
    store: ParameterStore,
    config: ModelConfig,
    path,
    vocab_hash: str = "",
    extra: dict | None = None,
) -> None:
    tensors = []
    chunks = []
    offset = 0

    def push(name: str, arr: np.ndarray) -> None:
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype=_STORED_DTYPE).tobytes()
        tensors.append({
            "name": name,
            "dtype": "float32",
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(data),
        })
        chunks.append(data)
        offset += len(data)

    for name, p in store.items():
        push(name, p.value)
        push(name + "#m", p.adam_m)
        push(name + "#v", p.adam_v)

    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config.as_dict(),
        "vocab_hash": vocab_hash,
        "step": store.step_count,
        "extra": extra or {},
        "tensors": tensors,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        for c in chunks:
            fh.write(c)


def read_manifest(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"cannot read checkpoint file: {p}")
    with open(p, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointError(f"{p}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{p}: unsupported format version {version}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        mbytes = fh.read(mlen)
        if len(mbytes) != mlen:
            raise CheckpointError(f"{p}: truncated manifest")
        try:
            return json.loads(mbytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{p}: corrupt manifest ({exc})") from exc


def load_checkpoint(
    path,
    expected_config: ModelConfig | None = None,
    expected_vocab_hash: str | None = None,
):
    """Returns (ParameterStore, manifest dict). Validates magic, version,
    offset table, blob length, and optional config / vocab-hash pins."""
    p = Path(path)
    manifest = read_manifest(p)
    with open(p, "rb") as fh:
        fh.seek(len(MAGIC) + 4)
        (mlen,) = struct.unpack("<Q", fh.read(8))
        fh.seek(mlen, 1)
        blob = fh.read()

    try:
        config = ModelConfig.from_dict(manifest["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{p}: manifest missing or invalid model_config") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"{p}: checkpoint model_config {config.as_dict()} does not match "
            f"expected {expected_config.as_dict()}"
        )
    if expected_vocab_hash is not None and manifest.get("vocab_hash") != expected_vocab_hash:
        raise CheckpointError(
            f"{p}: vocabulary hash mismatch (checkpoint "
            f"{manifest.get('vocab_hash', '')[:12]}..., expected {expected_vocab_hash[:12]}...)"
        )

    loaded: dict[str, np.ndarray] = {}
    running = 0
    for rec in manifest.get("tensors", []):
        name, dtype, shape = rec["name"], rec["dtype"], tuple(rec["shape"])
        off, length = rec["offset"], rec["length"]
        if dtype != "float32":
            raise CheckpointError(f"{p}: tensor '{name}' has unsupported dtype {dtype}")
        if off != running:
            raise CheckpointError(f"{p}: tensor '{name}' offset {off} != expected {running}")
        expected_len = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if length != expected_len:
            raise CheckpointError(
                f"{p}: tensor '{name}' length {length} does not match shape {shape}"
            )
        if off + length > len(blob):
            raise CheckpointError(f"{p}: blob truncated inside tensor '{name}'")
        arr = np.frombuffer(blob[off : off + length], dtype=_STORED_DTYPE).reshape(shape)
        loaded[name] = arr.astype(np.float32)
        running += length
    if running != len(blob):
        raise CheckpointError(f"{p}: {len(blob) - running} trailing bytes after tensor table")

    store = ParameterStore()
    for name in [r["name"] for r in manifest.get("tensors", []) if "#" not in r["name"]]:
        for part in ("#m", "#v"):
            if name + part not in loaded:
                raise CheckpointError(f"{p}: incomplete tensor set for '{name}'")
        param = store.add(name, loaded[name])
        param.adam_m[...] = loaded[name + "#m"]
        param.adam_v[...] = loaded[name + "#v"]
    store.step_count = int(manifest.get("step", 0))
    return store, manifest
