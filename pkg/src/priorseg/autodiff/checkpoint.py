"""Bit-exact checkpoints: a text manifest plus a flat float64 blob.

`<base>.manifest` holds one line per array: name, comma-joined dims, element
offset into the blob. `<base>.bin` is the concatenation of all arrays as
little-endian float64 in manifest order. Text plus raw LE floats keeps the
format diffable and byte-stable across platforms.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_MAGIC = "CKPT1"


def save_checkpoint(base: str | Path, arrays: dict[str, np.ndarray]) -> None:
    base = Path(base)
    lines = [_MAGIC]
    chunks: list[np.ndarray] = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1)
        if " " in name or "\n" in name:
            raise ValueError(f"invalid checkpoint name {name!r}")
        dims = ",".join(str(d) for d in a.shape)
        lines.append(f"{name} {dims} {offset}")
        chunks.append(a.reshape(-1))
        offset += a.size
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(base.suffix + ".manifest").write_text("\n".join(lines) + "\n")
    blob = np.concatenate(chunks) if chunks else np.empty(0)
    base.with_suffix(base.suffix + ".bin").write_bytes(
        blob.astype("<f8", copy=False).tobytes())


def load_checkpoint(base: str | Path) -> dict[str, np.ndarray]:
    base = Path(base)
    text = base.with_suffix(base.suffix + ".manifest").read_text().splitlines()
    if not text or text[0] != _MAGIC:
        raise ValueError(f"{base}: not a checkpoint manifest")
    blob = np.frombuffer(
        base.with_suffix(base.suffix + ".bin").read_bytes(), dtype="<f8")
    out: dict[str, np.ndarray] = {}
    for line in text[1:]:
        if not line.strip():
            continue
        name, dims, offset = line.rsplit(" ", 2)
        shape = tuple(int(d) for d in dims.split(","))
        n = int(np.prod(shape))
        start = int(offset)
        out[name] = blob[start:start + n].reshape(shape).astype(np.float64)
    return out
