"""Versioned binary files for trained artifacts, plus atomic writes."""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np


class PersistError(ValueError):
    """File cannot be read back as a valid artifact."""


class VersionMismatchError(PersistError):
    """File carries an unsupported format version."""


class CorruptFileError(PersistError):
    """File is truncated, has a bad magic, or fails its checksum."""


def write_bytes_atomic(path, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def save_blob(path, magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write magic + version byte + length-prefixed payload + CRC32.

    The payload is a JSON header followed by the raw bytes of each array;
    dtypes and shapes are recorded in the header so loading is unambiguous.
    """
    assert len(magic) == 4
    meta = dict(header)
    meta["__arrays__"] = [
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        for name, arr in arrays.items()
    ]
    header_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(header_bytes)) + header_bytes
    for arr in arrays.values():
        payload += np.ascontiguousarray(arr).tobytes()
    blob = (
        magic
        + struct.pack("<B", version)
        + struct.pack("<Q", len(payload))
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )
    write_bytes_atomic(path, blob)


def load_blob(path, magic: bytes, expected_version: int) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 17 or blob[:4] != magic:
        raise CorruptFileError(f"{path}: not a {magic.decode('ascii', 'replace')} file")
    version = blob[4]
    if version != expected_version:
        raise VersionMismatchError(f"{path}: format version {version}, expected {expected_version}")
    (payload_len,) = struct.unpack("<Q", blob[5:13])
    payload = blob[13 : 13 + payload_len]
    if len(payload) != payload_len or len(blob) < 13 + payload_len + 4:
        raise CorruptFileError(f"{path}: truncated file")
    (crc,) = struct.unpack("<I", blob[13 + payload_len : 17 + payload_len])
    if zlib.crc32(payload) != crc:
        raise CorruptFileError(f"{path}: checksum mismatch")
    (header_len,) = struct.unpack("<I", payload[:4])
    try:
        meta = json.loads(payload[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header") from exc
    offset = 4 + header_len
    arrays: dict[str, np.ndarray] = {}
    for spec in meta.pop("__arrays__", []):
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptFileError(f"{path}: array {spec['name']} truncated")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return meta, arrays
