"""GAFT v1 tensor files, 8-bit PGM/PPM images and atomic writes.

GAFT v1 layout (all integers little-endian)::

    b"GAFT" | u32 version=1 | u32 rank | u32 dims[rank] | f32 data (row-major)
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import BadMagic, DataError, DimLimit, TruncatedFile

MAGIC = b"GAFT"
VERSION = 1
MAX_RANK = 8
MAX_ELEMENTS = 1 << 28


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise DimLimit(f"rank {arr.ndim} outside 1..{MAX_RANK}")
    header = MAGIC + struct.pack(f"<II{arr.ndim}I", VERSION, arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes, max_elements: int = MAX_ELEMENTS) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a GAFT file")
    if len(buf) < 12:
        raise TruncatedFile("header truncated")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported GAFT version {version}")
    if rank == 0 or rank > MAX_RANK:
        raise DimLimit(f"rank {rank} outside 1..{MAX_RANK}")
    off = 12 + 4 * rank
    if len(buf) < off:
        raise TruncatedFile("dims truncated")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    n = int(np.prod(dims, dtype=np.int64))
    if n > max_elements:
        raise DimLimit(f"{n} elements exceeds limit {max_elements}")
    if len(buf) < off + 4 * n:
        raise TruncatedFile(f"expected {4 * n} data bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)


def save_tensor(path, arr) -> None:
    atomic_write_bytes(path, encode_tensor(arr))


def load_tensor(path, max_elements: int = MAX_ELEMENTS) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), max_elements)


def _pnm_tokens(buf: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise TruncatedFile("PNM header truncated")
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)`` for a P2/P3/P5/P6 file."""
    buf = Path(path).read_bytes()
    if buf[:2] not in (b"P2", b"P3", b"P5", b"P6"):
        raise BadMagic(f"{path}: not a PGM/PPM file")
    tokens, pos = _pnm_tokens(buf, 4)
    kind = tokens[0]
    w, h, maxval = (int(t) for t in tokens[1:])
    ch = 3 if kind in (b"P3", b"P6") else 1
    shape = (h, w, ch) if ch == 3 else (h, w)
    n = w * h * ch
    if kind in (b"P2", b"P3"):
        vals = buf[pos:].split()
        if len(vals) < n:
            raise TruncatedFile(f"{path}: expected {n} samples")
        return np.array([int(v) for v in vals[:n]]).reshape(shape), maxval
    dtype = ">u2" if maxval > 255 else "u1"
    nbytes = n * np.dtype(dtype).itemsize
    if len(buf) - pos < nbytes:
        raise TruncatedFile(f"{path}: expected {nbytes} pixel bytes")
    return np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(shape), maxval


def write_pgm(path, m) -> None:
    """Write a [0, 1] map as 8-bit binary PGM (values clipped then rounded)."""
    m = np.asarray(m, dtype=float)
    px = np.round(np.clip(m, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = px.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + px.tobytes())


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def load_heatmap(path) -> np.ndarray:
    """Load a rank-2 map from GAFT, or a grayscale PGM mapped linearly onto [0, 1]."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        arr = load_tensor(path).astype(float)
        if arr.ndim != 2:
            raise DataError(f"{path}: expected a rank-2 map, got rank {arr.ndim}")
        return arr
    px, maxval = read_pnm(path)
    if px.ndim != 2:
        raise DataError(f"{path}: expected a grayscale PGM")
    return px.astype(float) / maxval


def save_heatmap(path, m) -> None:
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, m)
    else:
        save_tensor(path, m)
