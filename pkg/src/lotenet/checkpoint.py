"""LTNC checkpoint container.

Layout, all integers uint32 little-endian::

    b"LTNC"  version
    length  run configuration as UTF-8 "key = value" text
    count   number of parameter tensors
    count LTT records
    length  metadata as UTF-8 JSON

Parameters follow :meth:`LoTeNetModel.blocks` order: layers first, patches
row-major inside a layer, cores in ascending index inside a block, final
block last.  A shared block is stored once per layer.  LTT stores float32, so
a checkpoint reproduces a narrow-precision model exactly.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, parse_text
from .errors import ConfigError, FormatError
from .model import LoTeNetModel, init_model
from .tensor_core import dtype_for, read_ltt, write_ltt

MAGIC = b"LTNC"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ConfigError):
    """A checkpoint file is unreadable or inconsistent."""


@dataclass
class Checkpoint:
    run: RunConfig
    model: LoTeNetModel
    meta: dict = field(default_factory=dict)


def _blob(fh, what: str) -> bytes:
    head = fh.read(4)
    if len(head) != 4:
        raise CheckpointError(f"truncated checkpoint: missing {what} length")
    (n,) = _U32.unpack(head)
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: {what} needs {n} bytes, got {len(data)}")
    return data


def to_bytes(run: RunConfig, model: LoTeNetModel, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    text = run.to_text().encode("utf-8")
    buf.write(MAGIC + _U32.pack(VERSION) + _U32.pack(len(text)) + text)
    params = model.parameters()
    buf.write(_U32.pack(len(params)))
    for p in params:
        write_ltt(buf, p.data)
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(blob)) + blob)
    return buf.getvalue()


def save_checkpoint(path, run: RunConfig, model: LoTeNetModel, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(run, model, meta))


def from_bytes(data: bytes) -> Checkpoint:
    fh = io.BytesIO(data)
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    head = fh.read(4)
    if len(head) != 4:
        raise CheckpointError("truncated checkpoint: missing version")
    (version,) = _U32.unpack(head)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        text = _blob(fh, "configuration").decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("checkpoint configuration is not UTF-8") from None
    run = load_config(overrides=parse_text(text, "checkpoint"))
    h, w, c = run.input_shape()
    template = init_model(run.model_config((h, w, c)), seed=0, dtype=dtype_for(run.precision), noise=0.0)
    shapes = [p.shape for p in template.parameters()]

    head = fh.read(4)
    if len(head) != 4:
        raise CheckpointError("truncated checkpoint: missing parameter count")
    (count,) = _U32.unpack(head)
    if count != len(shapes):
        raise CheckpointError(f"checkpoint holds {count} tensors, configuration needs {len(shapes)}")
    values = []
    for i, shape in enumerate(shapes):
        try:
            arr = read_ltt(fh)
        except FormatError as exc:
            raise CheckpointError(f"parameter {i}: {exc}") from None
        if arr.shape != shape:
            raise CheckpointError(f"parameter {i} has shape {arr.shape}, expected {shape}")
        values.append(arr)
    try:
        meta = json.loads(_blob(fh, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("checkpoint metadata is not valid JSON") from None
    if fh.read(1):
        raise CheckpointError("trailing bytes after checkpoint metadata")
    model = template.with_parameters([np.asarray(v, dtype=template.dtype) for v in values])
    return Checkpoint(run, model, meta)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(data)
