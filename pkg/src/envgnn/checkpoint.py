"""Versioned binary checkpoints for parameters and optimizer moments.

Layout (all integers little-endian, full byte spec in docs/formats.md):

    magic     8 bytes  b"ENVGNN01"
    payload   see below
    crc       u32 zlib.crc32 of the payload

    payload := hash_len:u16, config_hash:utf-8,
               has_moments:u8, adam_t:u64, n_params:u32,
               n_params * (name_len:u16, name:utf-8, ndim:u8, dims:u32*,
                           data:f32 little-endian C order),
               if has_moments: n_params * (m:f32*, v:f32*) in the same order

Parameter data is stored in float32; loading widens back to float64, so a
round-trip is bitwise exact at the stored precision.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .logging_util import get_logger

MAGIC = b"ENVGNN01"

log = get_logger(__name__)


@dataclass
class CheckpointData:
    """Everything a checkpoint holds, widened to float64."""

    params: dict[str, np.ndarray]
    config_hash: str
    adam_t: int
    moments: tuple[dict[str, np.ndarray], dict[str, np.ndarray]] | None


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(
    path: str,
    params: dict[str, np.ndarray],
    config_hash: str = "",
    adam_state: tuple[int, dict[str, np.ndarray], dict[str, np.ndarray]] | None = None,
) -> None:
    """Write parameters (and optional Adam moments) to ``path``."""
    hash_bytes = config_hash.encode("utf-8")
    parts = [struct.pack("<H", len(hash_bytes)), hash_bytes]
    has_moments = adam_state is not None
    adam_t = adam_state[0] if has_moments else 0
    parts.append(struct.pack("<BQI", int(has_moments), adam_t, len(params)))
    for name, arr in params.items():
        name_bytes = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(_pack_array(arr))
    if has_moments:
        _, m, v = adam_state
        for name in params:
            parts.append(_pack_array(m[name]))
            parts.append(_pack_array(v[name]))
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str, expected_config_hash: str | None = None) -> CheckpointData:
    """Read and validate a checkpoint; any corrupt byte is rejected.

    A config-hash mismatch against ``expected_config_hash`` is not fatal:
    it logs a warning and loading proceeds (resume-with-changed-config).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4:
        raise CheckpointError("file too short to be a checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic or unsupported version in {path!r}")
    payload, (crc,) = raw[len(MAGIC) : -4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"checksum mismatch: {path!r} is corrupt")

    r = _Reader(payload)
    (hash_len,) = r.unpack("<H")
    config_hash = r.take(hash_len).decode("utf-8")
    has_moments, adam_t, n_params = r.unpack("<BQI")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        params[name] = data.astype(np.float64)
    moments = None
    if has_moments:
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name, arr in params.items():
            count = arr.size
            m[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(arr.shape).astype(np.float64)
            v[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(arr.shape).astype(np.float64)
        moments = (m, v)
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes after checkpoint payload")

    if expected_config_hash is not None and config_hash != expected_config_hash:
        log.warning(
            "checkpoint config hash %s does not match expected %s",
            config_hash or "<empty>",
            expected_config_hash,
        )
    return CheckpointData(params=params, config_hash=config_hash, adam_t=int(adam_t), moments=moments)
