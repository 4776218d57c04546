"""Binary P5 graymaps and raw ``.attr`` float grids."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def write_pgm(path, img) -> None:
    """Write a uint8 array (or bool mask, stored as 0/255) as binary P5."""
    a = np.asarray(img)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    if a.dtype != np.uint8 or a.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 or bool array")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(a).tobytes())


def _tokens(buf: bytes, n: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < n:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), off = _tokens(buf, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a P5 graymap")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit graymaps are supported")
    data = buf[off : off + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def to_uint8(img) -> np.ndarray:
    """Map [0, 1] floats to 0..255."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    return read_pgm(path).astype(np.float32) / 255


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 127


def normalized_preview(values) -> np.ndarray:
    """Min-max normalise a map to uint8 for viewing."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return to_uint8((v - lo) / (hi - lo))


def write_attr(path, values) -> None:
    v = np.asarray(values, dtype="<f4")
    if v.ndim != 2:
        raise ValueError("attribution grids are 2-D")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(v).tobytes())


def read_attr(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise FormatError(f"{path}: missing .attr header")
    h, w = struct.unpack("<II", buf[:8])
    if len(buf) != 8 + 4 * h * w:
        raise FormatError(f"{path}: expected {h}x{w} floats, got {len(buf) - 8} bytes")
    return np.frombuffer(buf[8:], dtype="<f4").reshape(h, w).astype(np.float32)
