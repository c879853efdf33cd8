"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"SEPG"  u32 version
    u32 header_len  header (canonical JSON: config, step, seed, rng_state)  u32 crc32(header)
    u32 block_count
    per block:
        u16 name_len  name (utf-8)  2-byte dtype tag  u8 ndim  u32 * ndim shape
        u64 payload_len  payload (little-endian, C order)  u32 crc32(name + payload)

Every length is validated before it is trusted, so a truncated or corrupted file
raises IntegrityError without returning partial state.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FusionConfig
from .errors import ConfigurationError, IntegrityError

MAGIC = b"SEPG"
VERSION = 1
DTYPE_TAGS = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: FusionConfig
    params: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    rng_state: dict = field(default_factory=dict)

    def check_compatible(self, cfg: FusionConfig, expected: dict[str, tuple[int, ...]]) -> None:
        """Raise ConfigurationError naming the first block whose shape differs from ``expected``."""
        for name, shape in expected.items():
            if name not in self.params:
                raise ConfigurationError(f"checkpoint lacks parameter block {name!r}")
            if self.params[name].shape != tuple(shape):
                raise ConfigurationError(
                    f"parameter block {name!r}: checkpoint shape {self.params[name].shape}, "
                    f"configuration expects {tuple(shape)}")
        extra = [n for n in self.params if n not in expected]
        if extra:
            raise ConfigurationError(f"checkpoint has unexpected parameter block {extra[0]!r}")


def _tag(dtype: np.dtype) -> str:
    for tag, dt in DTYPE_TAGS.items():
        if np.dtype(dtype).newbyteorder("<") == dt:
            return tag
    raise ConfigurationError(f"unsupported parameter dtype {dtype}")


def encode(ckpt: Checkpoint) -> bytes:
    header = json.dumps(
        {"config": ckpt.config.to_dict(), "step": ckpt.step, "seed": ckpt.seed, "rng_state": ckpt.rng_state},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header,
           struct.pack("<I", zlib.crc32(header)), struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        tag = _tag(arr.dtype)
        raw_name = name.encode()
        payload = np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag]).tobytes()
        out += [struct.pack("<H", len(raw_name)), raw_name, tag.encode(), struct.pack("<B", arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), struct.pack("<Q", len(payload)), payload,
                struct.pack("<I", zlib.crc32(raw_name + payload))]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError(f"{what}: file truncated (needs {n} bytes at offset {self.pos})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise IntegrityError("magic: not a checkpoint file")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise ConfigurationError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (hlen,) = r.unpack("<I", "header")
    header = r.take(hlen, "header")
    (crc,) = r.unpack("<I", "header")
    if zlib.crc32(header) != crc:
        raise IntegrityError("header: checksum mismatch")
    try:
        meta = json.loads(header)
        cfg = FusionConfig.from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"header: cannot parse ({exc})") from exc
    (count,) = r.unpack("<I", "block count")
    params: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"block {i}")
        raw_name = r.take(nlen, f"block {i}")
        name = raw_name.decode("utf-8", errors="replace")
        tag = r.take(2, name).decode("ascii", errors="replace")
        if tag not in DTYPE_TAGS:
            raise IntegrityError(f"{name}: unknown dtype tag {tag!r}")
        (ndim,) = r.unpack("<B", name)
        shape = r.unpack(f"<{ndim}I", name)
        (plen,) = r.unpack("<Q", name)
        dt = DTYPE_TAGS[tag]
        if plen != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise IntegrityError(f"{name}: payload length {plen} does not match shape {shape}")
        payload = r.take(plen, name)
        (crc,) = r.unpack("<I", name)
        if zlib.crc32(raw_name + payload) != crc:
            raise IntegrityError(f"{name}: checksum mismatch")
        if name in params:
            raise IntegrityError(f"{name}: duplicate block")
        params[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise IntegrityError(f"trailer: {len(buf) - r.pos} unexpected bytes after the last block")
    return Checkpoint(cfg, params, int(meta.get("step", 0)), int(meta.get("seed", 0)), meta.get("rng_state", {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)
