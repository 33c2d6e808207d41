"""Netpbm (P5/P6) and PFM readers and writers."""

from __future__ import annotations

import numpy as np


def write_ppm(path, img: np.ndarray) -> None:
    """Write an 8-bit (H, W, 3) image as P6 or an (H, W) image as P5."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated netpbm header")
        out.append(data[i:j])
        i = j
    return out, i + 1  # one whitespace byte ends the header


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), off = _tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    if int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit images are supported")
    w, h = int(w), int(h)
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    if len(data) - off < n:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8, count=n, offset=off)
    return arr.reshape((h, w, 3) if ch == 3 else (h, w)).copy()


def write_pfm(path, arr: np.ndarray) -> None:
    """Single-channel little-endian PFM (scale -1.0), rows stored bottom-up."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, scale), off = _tokens(data, 4)
    if magic not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    w, h = int(w), int(h)
    ch = 3 if magic == b"PF" else 1
    dtype = "<f4" if float(scale) < 0 else ">f4"
    n = w * h * ch
    if len(data) - off < 4 * n:
        raise ValueError(f"{path}: truncated PFM data")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=off).astype(np.float32)
    arr = arr.reshape((h, w, 3) if ch == 3 else (h, w))
    return arr[::-1].copy()
