"""Binary model (AFEN1) and feature-timeline (AFFT1) files.

Layout shared by both: magic bytes, uint32 little-endian header length, JSON
header (sorted keys), then little-endian float64 payload.

    AFEN1  header {"kind", "spec", "tensors": [{"name", "shape"}, ...]}
           payload: each tensor row-major, in header order
    AFFT1  header {"sequence_id", "T", "dim", "has_labels"}
           payload: features [T, dim], labels [T] (if present), then T mask bytes
"""
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataio import FeatureTimeline
from .errors import FormatError
from .models import CnnModel, CnnSpec, RnnModel, RnnSpec

MODEL_MAGIC = b"AFEN1"
FEATURE_MAGIC = b"AFFT1"
_LEN = struct.Struct("<I")


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + _LEN.pack(len(text)) + text + payload


def _unpack(data: bytes, magic: bytes, path) -> tuple:
    if data[:len(magic)] != magic:
        raise FormatError(f"{path}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    pos = len(magic)
    if len(data) < pos + _LEN.size:
        raise FormatError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(data, pos)
    pos += _LEN.size
    try:
        header = json.loads(data[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    return header, data[pos + n:]


def _spec_dict(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_model(model, path):
    if isinstance(model, CnnModel):
        kind = "cnn"
    elif isinstance(model, RnnModel):
        kind = "rnn"
    else:
        raise FormatError(f"cannot serialize {type(model).__name__}")
    names = list(model.params)
    header = {
        "kind": kind,
        "spec": _spec_dict(model.spec),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    payload = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    Path(path).write_bytes(_pack(MODEL_MAGIC, header, payload))


def load_model(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"model file not found: {p}")
    header, payload = _unpack(p.read_bytes(), MODEL_MAGIC, p)
    kind = header.get("kind")
    if kind == "cnn":
        spec_cls, model_cls = CnnSpec, CnnModel
    elif kind == "rnn":
        spec_cls, model_cls = RnnSpec, RnnModel
    else:
        raise FormatError(f"{p}: unknown model kind {kind!r}")
    spec = spec_cls(**header["spec"])
    params = {}
    pos = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(payload):
            raise FormatError(f"{p}: payload too short for tensor {entry['name']}")
        params[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(payload):
        raise FormatError(f"{p}: {len(payload) - pos} trailing payload bytes")
    return model_cls(params=params, spec=spec)


def read_model_header(path) -> dict:
    p = Path(path)
    header, _ = _unpack(p.read_bytes(), MODEL_MAGIC, p)
    return header


def save_timeline(timeline: FeatureTimeline, path):
    has_labels = timeline.labels is not None
    header = {
        "sequence_id": timeline.sequence_id,
        "T": len(timeline),
        "dim": timeline.dim,
        "has_labels": has_labels,
    }
    payload = np.ascontiguousarray(timeline.features, dtype="<f8").tobytes()
    if has_labels:
        payload += np.ascontiguousarray(timeline.labels, dtype="<f8").tobytes()
    payload += timeline.mask.astype(np.uint8).tobytes()
    Path(path).write_bytes(_pack(FEATURE_MAGIC, header, payload))


def load_timeline(path) -> FeatureTimeline:
    p = Path(path)
    header, payload = _unpack(p.read_bytes(), FEATURE_MAGIC, p)
    n, dim, has_labels = int(header["T"]), int(header["dim"]), bool(header["has_labels"])
    expected = 8 * n * dim + (8 * n if has_labels else 0) + n
    if len(payload) != expected:
        raise FormatError(f"{p}: payload is {len(payload)} bytes, expected {expected}")
    feats = np.frombuffer(payload, dtype="<f8", count=n * dim).astype(np.float64).reshape(n, dim)
    pos = 8 * n * dim
    labels = None
    if has_labels:
        labels = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
    mask = np.frombuffer(payload, dtype=np.uint8, count=n, offset=pos).astype(bool)
    return FeatureTimeline(header["sequence_id"], feats, labels, mask)
