"""On-disk container helpers: a directory holding ``meta.json`` plus raw
little-endian float64 payloads."""

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

DTYPE_TAG = "f64"
ENDIAN_TAG = "little"
_LE_F64 = np.dtype("<f8")


def write_meta(directory, meta):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text = json.dumps(meta, indent=2, sort_keys=True, allow_nan=False)
    (directory / "meta.json").write_text(text + "\n", encoding="utf-8")


def read_meta(directory, kind=None):
    path = Path(directory) / "meta.json"
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError("missing meta.json", path=path) from None
    try:
        meta = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError("meta.json is not UTF-8", path=path, offset=exc.start) from None
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"malformed meta.json: {exc.msg} at line {exc.lineno} column {exc.colno}",
            path=path,
            offset=len(exc.doc[: exc.pos].encode("utf-8")),
        ) from None
    if not isinstance(meta, dict):
        raise ParseError("meta.json must hold a JSON object", path=path, offset=0)
    if kind is not None and meta.get("kind") != kind:
        raise ParseError(f"expected container kind {kind!r}, found {meta.get('kind')!r}", path=path)
    if meta.get("dtype", DTYPE_TAG) != DTYPE_TAG or meta.get("endianness", ENDIAN_TAG) != ENDIAN_TAG:
        raise ParseError("unsupported dtype/endianness tag", path=path)
    return meta


def require(meta, key, path, types=None):
    if key not in meta:
        raise ParseError(f"meta.json lacks required key {key!r}", path=Path(path) / "meta.json")
    value = meta[key]
    if types is not None and not isinstance(value, types):
        raise ParseError(f"meta.json key {key!r} has wrong type", path=Path(path) / "meta.json")
    return value


def write_array(path, array):
    arr = np.ascontiguousarray(array, dtype=_LE_F64)
    Path(path).write_bytes(arr.tobytes(order="C"))


def read_array(path, shape, label=None):
    """Read a row-major float64 payload and check its size against ``shape``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError(f"missing payload for {label or path.name}", path=path) from None
    expected = int(np.prod(shape)) * _LE_F64.itemsize
    if len(raw) != expected:
        what = label or path.name
        raise ParseError(
            f"payload length mismatch for {what}: header implies {expected} bytes, found {len(raw)}",
            path=path,
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=_LE_F64).reshape(shape).astype(np.float64)


def write_complex(path, array):
    arr = np.asarray(array, dtype=np.complex128)
    inter = np.empty(arr.shape + (2,), dtype=np.float64)
    inter[..., 0] = arr.real
    inter[..., 1] = arr.imag
    write_array(path, inter)


def read_complex(path, shape, label=None):
    inter = read_array(path, tuple(shape) + (2,), label=label)
    return inter[..., 0] + 1j * inter[..., 1]
