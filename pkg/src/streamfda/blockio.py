"""Block record parsing and the binary snapshot codec.

Stream records are JSON lines, one block per line:

    {"block_id": 7, "subjects": [{"t": [0.1, 0.5], "y": [1.2, -0.3]}, ...]}

Snapshots are a flat little-endian container: the nested state dict is
flattened with "/"-joined keys, sorted, and written as typed entries.
Saving goes through a temp file in the target directory followed by an
atomic rename, so a crash never leaves a truncated snapshot behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .engine import OnlineEstimator
from .errors import DomainError, ParseError, SnapshotError
from .kernels import Block, Subject

_MAGIC = b"SFDA"
_VERSION = 1

# entry type codes
_T_FLOAT = 0
_T_INT = 1
_T_BOOL = 2
_T_NONE = 3
_T_STR = 4
_T_ARR_F64 = 5
_T_ARR_I64 = 6


# -- JSON-lines block records -------------------------------------------------


def parse_block(line: str, line_no: int = 1, lo: float = 0.0,
                hi: float = 1.0) -> Block:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line_no)
    if "block_id" not in obj or "subjects" not in obj:
        raise ParseError("record needs 'block_id' and 'subjects'", line_no)
    block_id = obj["block_id"]
    if not isinstance(block_id, int) or isinstance(block_id, bool):
        raise ParseError("'block_id' must be an integer", line_no)
    raw_subjects = obj["subjects"]
    if not isinstance(raw_subjects, list):
        raise ParseError("'subjects' must be a list", line_no)
    subjects = []
    for idx, entry in enumerate(raw_subjects):
        if not isinstance(entry, dict) or "t" not in entry or "y" not in entry:
            raise ParseError(f"subject {idx} needs 't' and 'y' arrays", line_no)
        try:
            t = np.asarray(entry["t"], dtype=float)
            y = np.asarray(entry["y"], dtype=float)
        except (TypeError, ValueError):
            raise ParseError(f"subject {idx} has non-numeric data",
                             line_no) from None
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise ParseError(f"subject {idx}: 't' and 'y' must be equal-length "
                             "1-d arrays", line_no)
        if t.size == 0:
            raise ParseError(f"subject {idx} is empty", line_no)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ParseError(f"subject {idx} has non-finite values", line_no)
        if np.any(t < lo) or np.any(t > hi):
            raise DomainError(f"subject {idx} has times outside "
                              f"[{lo:g}, {hi:g}]", line_no)
        subjects.append(Subject(t, y))
    return Block(block_id=block_id, subjects=subjects)


def serialize_block(block: Block) -> str:
    """Canonical one-line form; floats round-trip exactly through repr."""
    subjects = [{"t": [float(v) for v in s.times],
                 "y": [float(v) for v in s.values]}
                for s in block.subjects]
    return json.dumps({"block_id": int(block.block_id), "subjects": subjects},
                      separators=(",", ":"))


def iter_blocks(lines: Iterable[str], lo: float = 0.0,
                hi: float = 1.0) -> Iterator[Block]:
    """Parse a JSON-lines stream, skipping blank lines, tracking line numbers."""
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        yield parse_block(stripped, line_no, lo, hi)


# -- flat binary snapshots ----------------------------------------------------


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key in tree:
        if "/" in key:
            raise SnapshotError(f"state key {key!r} contains '/'")
        path = f"{prefix}/{key}" if prefix else key
        value = tree[key]
        if isinstance(value, dict):
            flat.update(_flatten(value, path))
        else:
            flat[path] = value
    return flat


def _unflatten(flat: dict) -> dict:
    tree: dict = {}
    for path, value in flat.items():
        parts = path.split("/")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return tree


def _encode_value(value) -> tuple[int, bytes]:
    if value is None:
        return _T_NONE, b""
    if isinstance(value, (bool, np.bool_)):
        return _T_BOOL, struct.pack("<B", int(value))
    if isinstance(value, (int, np.integer)):
        return _T_INT, struct.pack("<q", int(value))
    if isinstance(value, (float, np.floating)):
        return _T_FLOAT, struct.pack("<d", float(value))
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return _T_STR, struct.pack("<I", len(raw)) + raw
    if isinstance(value, np.ndarray):
        if value.dtype == np.float64:
            code = _T_ARR_F64
        elif value.dtype == np.int64:
            code = _T_ARR_I64
        else:
            raise SnapshotError(f"unsupported array dtype {value.dtype}")
        arr = np.ascontiguousarray(value)
        head = struct.pack("<B", arr.ndim)
        head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        return code, head + body
    raise SnapshotError(f"unsupported state value type {type(value).__name__}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError("snapshot is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_value(code: int, reader: _Reader):
    if code == _T_NONE:
        return None
    if code == _T_BOOL:
        return bool(reader.unpack("<B")[0])
    if code == _T_INT:
        return int(reader.unpack("<q")[0])
    if code == _T_FLOAT:
        return float(reader.unpack("<d")[0])
    if code == _T_STR:
        (n,) = reader.unpack("<I")
        return reader.take(n).decode("utf-8")
    if code in (_T_ARR_F64, _T_ARR_I64):
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        dtype = np.dtype("<f8" if code == _T_ARR_F64 else "<i8")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
        return arr.astype(dtype.newbyteorder("="), copy=True)
    raise SnapshotError(f"unknown entry type code {code}")


def save_snapshot(state: dict, path) -> str:
    """Serialize a state dict; temp-write then rename for atomicity."""
    flat = _flatten(state)
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(flat))]
    for key in sorted(flat):
        raw_key = key.encode("utf-8")
        code, payload = _encode_value(flat[key])
        chunks.append(struct.pack("<I", len(raw_key)) + raw_key +
                      struct.pack("<B", code) + payload)
    blob = b"".join(chunks)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."),
                               prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return str(path)


def load_snapshot(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    if reader.take(4) != _MAGIC:
        raise SnapshotError(f"{path} is not a snapshot file")
    version, count = reader.unpack("<II")
    if version != _VERSION:
        raise SnapshotError(f"snapshot version {version} is not supported "
                            f"(expected {_VERSION})")
    flat = {}
    for _ in range(count):
        (key_len,) = reader.unpack("<I")
        key = reader.take(key_len).decode("utf-8")
        (code,) = reader.unpack("<B")
        flat[key] = _decode_value(code, reader)
    if reader.pos != len(data):
        raise SnapshotError("snapshot has trailing bytes")
    return _unflatten(flat)


def save_estimator(estimator: OnlineEstimator, path) -> str:
    return save_snapshot(estimator.state_dict(), path)


def load_estimator(path) -> OnlineEstimator:
    return OnlineEstimator.from_state_dict(load_snapshot(path))
