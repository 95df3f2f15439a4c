"""On-disk formats: 8-bit PGM images, LBL1 label maps, FEA1 feature tables.

LBL1: b"LBL1", two little-endian int32 (height, width), then height*width
row-major little-endian int32 labels.
FEA1: b"FEA1", two little-endian uint32 (count, dim), then count*dim
little-endian float64 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Store a [0, 1] float image as binary 8-bit PGM."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"PGM wants a 2-D image, got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval; comments start with '#'
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(x) for x in fields)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be 2-D, got shape {labels.shape}")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"LBL1")
        f.write(struct.pack("<ii", h, w))
        f.write(labels.astype("<i4").tobytes())


def read_labels(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"LBL1":
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    h, w = struct.unpack("<ii", raw[4:12])
    if len(raw) != 12 + 4 * h * w:
        raise FormatError(f"{path}: truncated label map")
    return np.frombuffer(raw, dtype="<i4", offset=12).reshape(h, w).astype(np.int32)


def write_features(path: str | Path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise FormatError(f"feature table must be 2-D, got shape {feats.shape}")
    n, d = feats.shape
    with open(path, "wb") as f:
        f.write(b"FEA1")
        f.write(struct.pack("<II", n, d))
        f.write(feats.astype("<f8").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"FEA1":
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    n, d = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 8 * n * d:
        raise FormatError(f"{path}: truncated feature table")
    return np.frombuffer(raw, dtype="<f8", offset=12).reshape(n, d).astype(np.float64)
