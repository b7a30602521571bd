"""Named-tensor checkpoint archive.

Layout: a magic line, an 8-byte little-endian length, a UTF-8 JSON
document holding arbitrary metadata plus an index mapping tensor names
to dtype, shape and byte offset, then the raw little-endian IEEE-754
payloads back to back. Writing the same state twice produces identical
bytes, which the training-resume test relies on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CTCASR-CKPT1\n"
_DTYPES = {"f32": "<f4", "f64": "<f8"}
_CODES = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


def save_archive(path, meta: dict, tensors: dict) -> None:
    index = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"checkpoint tensors must be float32/float64, {name} is {arr.dtype}")
        blob = arr.astype(_DTYPES[code], copy=False).tobytes()
        index[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        payloads.append(blob)
        offset += len(blob)
    doc = json.dumps({"meta": meta, "index": index}, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(doc)))
        f.write(doc)
        for blob in payloads:
            f.write(blob)


def load_archive(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint archive", offset=0)
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise FormatError(f"{path}: truncated header", offset=pos)
    (doc_len,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + doc_len:
        raise FormatError(f"{path}: truncated index", offset=pos)
    try:
        doc = json.loads(raw[pos : pos + doc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad index JSON ({exc})", offset=pos) from None
    base = pos + doc_len
    tensors = {}
    for name, entry in doc["index"].items():
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown dtype code {entry['dtype']!r} for {name}", offset=base)
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise FormatError(f"{path}: payload for {name} runs past end of file", offset=start)
        arr = np.frombuffer(raw[start:end], dtype=dtype).reshape(entry["shape"])
        tensors[name] = arr.copy()
    return doc["meta"], tensors
