"""Versioned binary container shared by every pipeline artifact.

Layout (all integers little-endian)::

    0   8 bytes   magic  b"SHMROM\\x1a\\n"
    8   uint32    format version
    12  uint32    reserved, 0
    16  uint64    header length H in bytes (multiple of 8)
    24  H bytes   UTF-8 JSON header, keys sorted, right-padded with spaces
    24+H          payload: arrays back to back, C order

The header holds ``kind``, free-form ``meta``, ``payload_sha256`` and an
``arrays`` table mapping each name to ``dtype`` ("<f8" or "<i8"), ``shape``,
``offset`` (bytes from payload start) and ``nbytes``. A sparse CSR matrix
``name`` is stored as the three dense arrays ``name/data``, ``name/indices``
and ``name/indptr`` plus an entry in ``meta["sparse"]`` giving its shape.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"SHMROM\x1a\n"
VERSION = 1
_PREFIX = struct.Struct("<8sIIQ")
_DTYPES = {"<f8": np.float64, "<i8": np.int64}


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    kind: str
    meta: dict
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _as_le(a):
    a = np.asarray(a)
    # np.array rather than ascontiguousarray: the latter promotes 0-d arrays to 1-d
    if a.dtype.kind == "f":
        return np.array(a, dtype="<f8", order="C")
    if a.dtype.kind in "iub":
        return np.array(a, dtype="<i8", order="C")
    raise ContainerError(f"unsupported dtype {a.dtype}")


def encode(kind: str, arrays: dict, meta: dict | None = None) -> bytes:
    meta = dict(meta or {})
    flat, sparse = {}, {}
    for name in sorted(arrays):
        a = arrays[name]
        if sp.issparse(a):
            a = sp.csr_matrix(a)
            a.sort_indices()
            sparse[name] = list(a.shape)
            flat[f"{name}/data"] = a.data
            flat[f"{name}/indices"] = a.indices
            flat[f"{name}/indptr"] = a.indptr
        else:
            flat[name] = a
    if sparse:
        meta["sparse"] = sparse
    table, chunks, offset = {}, [], 0
    for name in sorted(flat):
        a = _as_le(flat[name])
        buf = a.tobytes()
        table[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(buf)}
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {"kind": kind, "meta": meta, "arrays": table,
              "payload_sha256": hashlib.sha256(payload).hexdigest()}
    hb = canonical_json(header).encode("utf-8")
    hb += b" " * (-len(hb) % 8)
    return _PREFIX.pack(MAGIC, VERSION, 0, len(hb)) + hb + payload


def write_container(path, kind: str, arrays: dict, meta: dict | None = None) -> Path:
    """Write atomically (temporary file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode(kind, arrays, meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def _parse_header(data: bytes, source) -> tuple[dict, int]:
    if len(data) < _PREFIX.size:
        raise ContainerError(f"{source}: truncated container")
    magic, version, _, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"{source}: not a container (bad magic)")
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported container version {version}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise ContainerError(f"{source}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{source}: corrupt header") from exc
    return header, start


def decode(data: bytes, source="<bytes>", verify: bool = True) -> Container:
    header, start = _parse_header(data, source)
    payload = memoryview(data)[start:]
    if verify and hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ContainerError(f"{source}: payload checksum mismatch")
    flat = {}
    for name, e in header["arrays"].items():
        if e["dtype"] not in _DTYPES:
            raise ContainerError(f"{source}: unsupported dtype {e['dtype']} for {name}")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise ContainerError(f"{source}: truncated payload for {name}")
        a = np.frombuffer(payload[e["offset"]:end], dtype=e["dtype"]).reshape(e["shape"])
        flat[name] = a.astype(_DTYPES[e["dtype"]], copy=True)
    meta = header["meta"]
    arrays = {}
    sparse = meta.get("sparse", {})
    for name, shape in sparse.items():
        arrays[name] = sp.csr_matrix((flat.pop(f"{name}/data"), flat.pop(f"{name}/indices"),
                                      flat.pop(f"{name}/indptr")), shape=tuple(shape))
    arrays.update(flat)
    return Container(kind=header["kind"], meta=meta, arrays=arrays)


def read_container(path, kind: str | None = None, verify: bool = True) -> Container:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    c = decode(path.read_bytes(), source=path, verify=verify)
    if kind is not None and c.kind != kind:
        raise ContainerError(f"{path}: expected a '{kind}' container, found '{c.kind}'")
    return c


def read_header(path) -> dict:
    """Header only, without loading or checking the payload."""
    path = Path(path)
    with path.open("rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise ContainerError(f"{path}: truncated container")
        hlen = _PREFIX.unpack(prefix)[3]
        header, _ = _parse_header(prefix + fh.read(hlen), path)
    return header
