"""UQFM0001 container writing (and reading, for self-checks).

Layout: 8-byte magic `UQFM0001`, little-endian u32 image_id, grid_h,
grid_w, dim, then grid_h * grid_w * dim little-endian float32 values,
row-major with channels fastest. Writes are atomic (temp then rename) so
an interrupted run never leaves a partial file behind.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UQFM0001"
HEADER_SIZE = 24


def write_map(path: str | Path, image_id: int, grid: np.ndarray) -> None:
    grid = np.ascontiguousarray(grid, dtype=np.float32)
    if grid.ndim != 3:
        raise ValueError(f"grid must be (h, w, dim), got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError(f"image {image_id}: grid contains non-finite values")
    path = Path(path)
    header = MAGIC + struct.pack("<IIII", image_id, *grid.shape)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(grid.astype("<f4").tobytes())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def read_header(path: str | Path) -> tuple[int, int, int, int]:
    """(image_id, grid_h, grid_w, dim) without loading the payload."""
    with open(path, "rb") as fh:
        blob = fh.read(HEADER_SIZE)
    if len(blob) < HEADER_SIZE or blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a UQFM0001 file")
    return struct.unpack("<IIII", blob[8:])


def read_map(path: str | Path) -> tuple[int, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE or blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a UQFM0001 file")
    image_id, h, w, dim = struct.unpack("<IIII", blob[8:HEADER_SIZE])
    expected = HEADER_SIZE + 4 * h * w * dim
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    grid = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(h, w, dim)
    return image_id, grid.copy()
