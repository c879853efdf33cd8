"""Grayscale image I/O: binary PGM (P5) natively, color PPM (P6) and PNG on read.

Images are returned as float64 arrays in [0, 1]. Color input is reduced to
luminance with BT.601 weights. PNG needs Pillow and is only used when the file
extension asks for it.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import InputError
from .metrics import to_uint8

BT601 = np.array([0.299, 0.587, 0.114])
_HEADER = re.compile(rb"(P[56])\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s")


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ BT601


def decode_pnm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    m = _HEADER.match(buf)
    if m is None:
        raise InputError(f"{name}: not a binary PGM/PPM file")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise InputError(f"{name}: invalid header (width {w}, height {h}, maxval {maxval})")
    channels = 3 if kind == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * channels * dt.itemsize
    body = buf[m.end():m.end() + need]
    if len(body) < need:
        raise InputError(f"{name}: pixel data truncated ({len(body)} of {need} bytes)")
    a = np.frombuffer(body, dtype=dt).astype(np.float64) / maxval
    a = a.reshape(h, w, channels) if channels == 3 else a.reshape(h, w)
    return luminance(a) if channels == 3 else a


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if path.suffix.lower() == ".png":
        return _read_png(path)
    return decode_pnm(buf, str(path))


def _read_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise InputError(f"{path}: PNG support needs Pillow") from exc
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I"):
                a = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode == "L":
                a = np.asarray(im, dtype=np.float64) / 255.0
            else:
                a = luminance(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    except OSError as exc:
        raise InputError(f"{path}: cannot decode PNG ({exc})") from exc
    return a


def encode_pgm(img: np.ndarray) -> bytes:
    """8-bit P5 bytes; float input in [0, 1] is scaled and rounded first."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = to_uint8(a)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise InputError(f"expected a 2-D image, got shape {a.shape}")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(a).tobytes()


def write_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise InputError(f"{path}: PNG support needs Pillow") from exc
        a = np.asarray(img)
        a = a if a.dtype == np.uint8 else to_uint8(a)
        while a.ndim > 2 and a.shape[0] == 1:
            a = a[0]
        Image.fromarray(a).save(path)
        return
    try:
        path.write_bytes(encode_pgm(img))
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror or exc}") from exc
