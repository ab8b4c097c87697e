"""Binary container for checkpoints and deductive dumps.

Layout::

    b"PLGASOC\\0"  | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payload

The payload is every tensor as little-endian float64, concatenated in
manifest order. The manifest carries a SHA-256 over the tensor table and
the payload, so a buffer that drifts from its manifest is rejected on load.
Writes go to a temporary sibling file which is then renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .generation import RunBundle, RunRecord
from .model import ModelConfig, ModelParams, init_parameters
from .plga import TENSOR_NAMES, DeductiveSet
from .tensor import Rng

MAGIC = b"PLGASOC\0"
VERSION = 1
_HEADER = struct.Struct("<IQ")
_F64 = np.dtype("<f8")


def _digest(table: list[dict], payload: bytes) -> str:
    h = hashlib.sha256(json.dumps(table, sort_keys=True, separators=(",", ":")).encode())
    h.update(payload)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype=_F64).tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    manifest = {"format": VERSION, "kind": kind, "meta": meta, "tensors": table,
                "sha256": _digest(table, payload)}
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    _atomic_write(Path(path), MAGIC + _HEADER.pack(VERSION, len(head)) + head + payload)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a plgasoc container")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    version, mlen = _HEADER.unpack_from(raw, pos)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    pos += _HEADER.size
    try:
        manifest = json.loads(raw[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad manifest ({exc})") from None
    payload = raw[pos + mlen :]
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} file, found {manifest.get('kind')!r}")
    table = manifest["tensors"]
    if _digest(table, payload) != manifest.get("sha256"):
        raise FormatError(f"{path}: checksum mismatch")
    tensors = {}
    for entry in table:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise FormatError(f"{path}: tensor {entry['name']} runs past the payload")
        arr = np.frombuffer(payload, dtype=_F64, count=n // 8, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return manifest, tensors


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    meta = {"model": cfg.to_dict(), "extra": extra or {}}
    write_container(path, "checkpoint", meta, params.state_dict())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    """Returns ``(params, config, extra)``; params are rebuilt from the stored config."""
    manifest, tensors = read_container(path, "checkpoint")
    cfg = ModelConfig(**manifest["meta"]["model"])
    params = init_parameters(cfg, Rng(0))
    try:
        params.load_state_dict(tensors)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return params, cfg, manifest["meta"].get("extra", {})


# ---------------------------------------------------------------------------
# deductive dumps


def save_bundle(path, bundle: RunBundle, meta: dict | None = None) -> None:
    runs, tensors = {}, {}
    for name, run in bundle.runs.items():
        runs[name] = {
            "mode": run.mode, "seed": run.seed, "sample_ids": list(map(int, run.sample_ids)),
            "prompts": [list(map(int, p)) for p in run.prompts],
            "outputs": [list(map(int, o)) for o in run.outputs],
            "sample_meta": [d.meta for d in run.deductives],
        }
        for i, ded in enumerate(run.deductives):
            for t in TENSOR_NAMES:
                tensors[f"{name}/{i}/{t}"] = ded[t]
    write_container(path, "bundle", {"runs": runs, "extra": meta or {}}, tensors)


def load_bundle(path) -> RunBundle:
    manifest, tensors = read_container(path, "bundle")
    runs = {}
    for name, info in manifest["meta"]["runs"].items():
        deds = [
            DeductiveSet(**{t: tensors[f"{name}/{i}/{t}"] for t in TENSOR_NAMES}, meta=m)
            for i, m in enumerate(info["sample_meta"])
        ]
        runs[name] = RunRecord(name=name, mode=info["mode"], seed=info["seed"], sample_ids=info["sample_ids"],
                               prompts=info["prompts"], outputs=info["outputs"], deductives=deds)
    return RunBundle(runs=runs)
