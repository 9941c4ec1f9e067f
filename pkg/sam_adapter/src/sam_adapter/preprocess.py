"""SAM-native image preprocessing: resize longest side, normalize, pad square."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# SAM pixel statistics (0-255 scale)
PIXEL_MEAN = np.array([123.675, 116.28, 103.53], dtype=np.float32)
PIXEL_STD = np.array([58.395, 57.12, 57.375], dtype=np.float32)


@dataclass(frozen=True)
class PreprocessedImage:
    """Normalized square input tensor plus the geometry needed for pooling."""

    pixels: np.ndarray              # (resolution, resolution, 3) float32
    original_size: tuple[int, int]  # (width, height) before resizing
    content_size: tuple[int, int]   # (width, height) of real content after resize


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def preprocess(image: np.ndarray, resolution: int) -> PreprocessedImage:
    """Scale the longest side to `resolution`, normalize, pad bottom-right."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an RGB array, got shape {image.shape}")
    h0, w0 = image.shape[:2]
    scale = resolution / max(h0, w0)
    w1 = max(int(round(w0 * scale)), 1)
    h1 = max(int(round(h0 * scale)), 1)
    resized = np.asarray(
        Image.fromarray(image).resize((w1, h1), Image.Resampling.BILINEAR),
        dtype=np.float32)
    normalized = (resized - PIXEL_MEAN) / PIXEL_STD
    padded = np.zeros((resolution, resolution, 3), dtype=np.float32)
    padded[:h1, :w1] = normalized
    return PreprocessedImage(pixels=padded, original_size=(w0, h0),
                             content_size=(w1, h1))


def content_grid(prep: PreprocessedImage, patch: int) -> tuple[int, int]:
    """(grid_h, grid_w) of cells touching real content, not padding."""
    w1, h1 = prep.content_size
    return (-(-h1 // patch), -(-w1 // patch))
