"""Netpbm-family image files: P6 PPM (rgb), P5 PGM (16-bit masks), PFM (depth).

These formats are bit-exact and codec-free, which keeps dataset exports
byte-reproducible. PFM rows run bottom-to-top per convention; the negative
scale marks little-endian floats. Non-finite depth is stored as 0.0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

PFM_MISS_VALUE = 0.0


def write_ppm(rgb: np.ndarray, path) -> None:
    """rgb: (h, w, 3) floats in [0,1], quantized to 8 bits."""
    rgb = np.asarray(rgb)
    h, w, _ = rgb.shape
    data = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns (h, w, 3) uint8."""
    magic, (w, h), maxval, payload = _read_netpbm(path)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM: {path}")
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    return np.frombuffer(payload, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def write_pgm16(mask: np.ndarray, path) -> None:
    """mask: (h, w) integers in [0, 65535]; big-endian samples per Netpbm."""
    mask = np.asarray(mask)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mask.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    magic, (w, h), maxval, payload = _read_netpbm(path)
    if magic != b"P5" or maxval != 65535:
        raise ValueError(f"not a 16-bit PGM: {path}")
    return np.frombuffer(payload, dtype=">u2", count=w * h).reshape(h, w).astype(np.uint16)


def write_pfm(depth: np.ndarray, path) -> None:
    """depth: (h, w) floats, meters; +inf (miss) is encoded as 0.0."""
    depth = np.asarray(depth, dtype=np.float32)
    h, w = depth.shape
    clean = np.where(np.isfinite(depth), depth, np.float32(PFM_MISS_VALUE))
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(clean[::-1].tobytes())  # PFM stores rows bottom-up


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _token(f)
        if magic != b"Pf":
            raise ValueError(f"not a grayscale PFM: {path}")
        w = int(_token(f))
        h = int(_token(f))
        scale = float(_token(f))
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype, count=w * h)
    return data.reshape(h, w)[::-1].copy()


def _token(f) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise ValueError("truncated header")
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def _read_netpbm(path):
    with open(Path(path), "rb") as f:
        magic = _token(f)
        w = int(_token(f))
        h = int(_token(f))
        maxval = int(_token(f))
        payload = f.read()
    return magic, (w, h), maxval, payload
