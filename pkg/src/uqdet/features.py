"""Spatial feature-map containers and per-object pooled feature archives.

One `UQFM0001` file holds the feature grid of a single image; pooling
reduces the grid cells under an object's box or mask to one vector, and
a `UQFA0001` archive collects those vectors for a whole dataset. Grids
are stored as 32-bit floats; pooling and everything downstream computes
in 64-bit.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ._fileio import atomic_write_bytes
from .dataset import Bbox, DatasetIndex
from .errors import (CorruptionError, DegenerateRegionError, DimensionError,
                     FormatError, MissingFeatureMapsError)

logger = logging.getLogger(__name__)

FEATURE_MAP_MAGIC = b"UQFM0001"
ARCHIVE_MAGIC = b"UQFA0001"

# guards h*w*dim before trusting header-declared sizes
_MAX_CELL_VALUES = 1 << 31


class PoolMode(IntEnum):
    BOX_MEAN = 0
    MASK_MEAN = 1


@dataclass(eq=False)
class FeatureMap:
    """Row-major float32 grid of shape (grid_h, grid_w, dim) for one image."""

    image_id: int
    data: np.ndarray
    source_stride: tuple[float, float] | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"feature grid must be (h, w, dim), got {self.data.shape}")

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def write_feature_map(fmap: FeatureMap, path: str | Path) -> None:
    header = FEATURE_MAP_MAGIC + struct.pack(
        "<IIII", fmap.image_id, fmap.grid_h, fmap.grid_w, fmap.dim)
    atomic_write_bytes(Path(path), header + fmap.data.astype("<f4").tobytes())


def read_feature_map(path: str | Path) -> FeatureMap:
    """Load a UQFM0001 file, preserving the exact stored float bit patterns."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != FEATURE_MAP_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {FEATURE_MAP_MAGIC!r}")
    if len(blob) < 24:
        raise CorruptionError(f"{path}: truncated header")
    image_id, grid_h, grid_w, dim = struct.unpack("<IIII", blob[8:24])
    if min(grid_h, grid_w, dim) < 1:
        raise FormatError(f"{path}: non-positive grid dimensions {(grid_h, grid_w, dim)}")
    n_values = grid_h * grid_w * dim
    if n_values > _MAX_CELL_VALUES:
        raise CorruptionError(f"{path}: dimension overflow {(grid_h, grid_w, dim)}")
    expected = 24 + 4 * n_values
    if len(blob) < expected:
        raise CorruptionError(f"{path}: truncated payload ({len(blob)} < {expected} bytes)")
    if len(blob) > expected:
        raise CorruptionError(f"{path}: {len(blob) - expected} trailing bytes")
    data = np.frombuffer(blob, dtype="<f4", offset=24).reshape(grid_h, grid_w, dim).copy()
    if not np.all(np.isfinite(data)):
        raise CorruptionError(f"{path}: grid contains non-finite values")
    return FeatureMap(image_id=image_id, data=data)


def pool_box(fmap: FeatureMap, bbox: Bbox, image_size: tuple[int, int]) -> np.ndarray:
    """Mean over grid cells whose centers fall inside the box scaled to grid coords.

    Sub-cell boxes (no cell center inside) fall back to the single cell
    containing the box center. Raises DegenerateRegionError when the box has
    no area after clamping to the image bounds.
    """
    img_w, img_h = image_size
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"invalid image size {image_size}")
    x, y, w, h = bbox
    x0 = min(max(x, 0.0), float(img_w))
    y0 = min(max(y, 0.0), float(img_h))
    x1 = min(max(x + w, 0.0), float(img_w))
    y1 = min(max(y + h, 0.0), float(img_h))
    if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
        raise DegenerateRegionError(f"box {bbox} has no area within a {img_w}x{img_h} image")
    gw, gh = fmap.grid_w, fmap.grid_h
    gx0, gx1 = x0 * gw / img_w, x1 * gw / img_w
    gy0, gy1 = y0 * gh / img_h, y1 * gh / img_h
    # cell c has center c + 0.5; include centers in [g0, g1)
    cx0 = max(math.ceil(gx0 - 0.5), 0)
    cx1 = min(math.ceil(gx1 - 0.5), gw)
    cy0 = max(math.ceil(gy0 - 0.5), 0)
    cy1 = min(math.ceil(gy1 - 0.5), gh)
    if cx1 <= cx0 or cy1 <= cy0:
        cx = min(max(int((gx0 + gx1) / 2), 0), gw - 1)
        cy = min(max(int((gy0 + gy1) / 2), 0), gh - 1)
        cells = fmap.data[cy:cy + 1, cx:cx + 1]
    else:
        cells = fmap.data[cy0:cy1, cx0:cx1]
    return cells.reshape(-1, fmap.dim).mean(axis=0, dtype=np.float64)


def _decompress_rle_counts(encoded: str | bytes) -> list[int]:
    """Decode COCO's compressed run-length string into a counts list."""
    if isinstance(encoded, str):
        encoded = encoded.encode("ascii")
    counts: list[int] = []
    pos = 0
    while pos < len(encoded):
        value = 0
        k = 0
        more = True
        while more:
            if pos >= len(encoded):
                raise FormatError("compressed run-length string ends mid-value")
            c = encoded[pos] - 48
            value |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                value |= -1 << (5 * k)
        if len(counts) > 2:
            value += counts[-2]
        counts.append(value)
    return counts


def _decode_rle(rle: dict) -> np.ndarray:
    try:
        h, w = int(rle["size"][0]), int(rle["size"][1])
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed run-length record {rle!r}") from exc
    if isinstance(counts, (str, bytes)):
        counts = _decompress_rle_counts(counts)
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        run = int(run)
        if run < 0 or pos + run > h * w:
            raise FormatError("run-length counts exceed the mask size")
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != h * w:
        raise FormatError(f"run-length counts cover {pos} of {h * w} pixels")
    # COCO run-length order is column-major
    return flat.reshape((h, w), order="F")


def rasterize_mask(segmentation: list | dict, image_size: tuple[int, int]) -> np.ndarray:
    """Rasterize a COCO polygon list or run-length record to a (h, w) bool mask."""
    img_w, img_h = image_size
    if isinstance(segmentation, dict):
        mask = _decode_rle(segmentation)
        if mask.shape != (img_h, img_w):
            raise FormatError(
                f"run-length mask size {mask.shape} does not match image {(img_h, img_w)}")
        return mask
    if not isinstance(segmentation, list) or not segmentation:
        raise FormatError(f"unsupported segmentation {type(segmentation).__name__}")
    canvas = Image.new("1", (img_w, img_h), 0)
    draw = ImageDraw.Draw(canvas)
    for poly in segmentation:
        if len(poly) < 6 or len(poly) % 2:
            raise FormatError(f"polygon needs >= 3 (x, y) pairs, got {len(poly)} values")
        draw.polygon([float(v) for v in poly], fill=1)
    return np.asarray(canvas, dtype=bool)


def _mask_bbox(mask: np.ndarray) -> Bbox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (float(cols[0]), float(rows[0]),
            float(cols[-1] + 1 - cols[0]), float(rows[-1] + 1 - rows[0]))


def pool_mask(fmap: FeatureMap, segmentation: list | dict,
              image_size: tuple[int, int]) -> np.ndarray:
    """Mean over grid cells at least half covered by the mask.

    Coverage is measured on pixel-snapped cell rectangles. When no cell
    reaches half coverage (tiny masks), pooling falls back to the mask's
    bounding box. Raises DegenerateRegionError for an empty mask.
    """
    img_w, img_h = image_size
    mask = rasterize_mask(segmentation, image_size)
    if not mask.any():
        raise DegenerateRegionError("mask rasterizes to zero pixels")
    gh, gw = fmap.grid_h, fmap.grid_w
    ys = np.rint(np.arange(gh + 1) * img_h / gh).astype(np.int64)
    xs = np.rint(np.arange(gw + 1) * img_w / gw).astype(np.int64)
    integral = np.zeros((img_h + 1, img_w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0), axis=1, out=integral[1:, 1:])
    corner = integral[ys][:, xs]
    covered = corner[1:, 1:] - corner[:-1, 1:] - corner[1:, :-1] + corner[:-1, :-1]
    areas = (ys[1:] - ys[:-1])[:, None] * (xs[1:] - xs[:-1])[None, :]
    coverage = np.divide(covered, np.maximum(areas, 1), dtype=np.float64)
    selected = coverage >= 0.5
    if not selected.any():
        return pool_box(fmap, _mask_bbox(mask), image_size)
    cells = fmap.data.reshape(gh * gw, fmap.dim)[selected.ravel()]
    return cells.mean(axis=0, dtype=np.float64)


@dataclass(eq=False)
class PooledFeature:
    annotation_id: int
    category_id: int
    vector: np.ndarray
    pool_mode: PoolMode

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1 or self.vector.size < 1:
            raise ValueError(f"pooled vector must be 1-dimensional, got {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"annotation {self.annotation_id}: non-finite pooled vector")


@dataclass(eq=False)
class FeatureArchive:
    """Pooled feature vectors keyed by annotation id, all sharing one dim."""

    dim: int
    entries: dict[int, PooledFeature] = field(default_factory=dict)
    provenance: str = ""

    def add(self, entry: PooledFeature) -> None:
        if entry.vector.shape[0] != self.dim:
            raise DimensionError(
                f"annotation {entry.annotation_id}: vector dim {entry.vector.shape[0]} "
                f"!= archive dim {self.dim}")
        if entry.annotation_id in self.entries:
            raise ValueError(f"duplicate annotation id {entry.annotation_id}")
        self.entries[entry.annotation_id] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def category_ids(self) -> set[int]:
        return {e.category_id for e in self.entries.values()}

    def vectors_and_labels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X float64, category ids, annotation ids), ascending by annotation id."""
        ids = np.array(sorted(self.entries), dtype=np.int64)
        if ids.size == 0:
            return (np.empty((0, self.dim)), np.empty(0, np.int64), ids)
        X = np.stack([self.entries[int(i)].vector for i in ids]).astype(np.float64)
        y = np.array([self.entries[int(i)].category_id for i in ids], dtype=np.int64)
        return X, y, ids


def write_archive(archive: FeatureArchive, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(ARCHIVE_MAGIC)
    buf.write(struct.pack("<IQ", archive.dim, len(archive.entries)))
    for aid in sorted(archive.entries):
        entry = archive.entries[aid]
        buf.write(struct.pack("<QIB", entry.annotation_id, entry.category_id,
                              int(entry.pool_mode)))
        buf.write(entry.vector.astype("<f4").tobytes())
    atomic_write_bytes(Path(path), buf.getvalue())


def read_archive(path: str | Path) -> FeatureArchive:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {ARCHIVE_MAGIC!r}")
    if len(blob) < 20:
        raise CorruptionError(f"{path}: truncated header")
    dim, count = struct.unpack("<IQ", blob[8:20])
    if dim < 1:
        raise FormatError(f"{path}: non-positive dim {dim}")
    entry_size = 13 + 4 * dim
    expected = 20 + count * entry_size
    if len(blob) < expected:
        raise CorruptionError(f"{path}: truncated payload ({len(blob)} < {expected} bytes)")
    if len(blob) > expected:
        raise CorruptionError(f"{path}: {len(blob) - expected} trailing bytes")
    archive = FeatureArchive(dim=dim)
    offset = 20
    for _ in range(count):
        aid, cid, mode = struct.unpack_from("<QIB", blob, offset)
        offset += 13
        vector = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        if not np.all(np.isfinite(vector)):
            raise CorruptionError(f"{path}: annotation {aid} has non-finite values")
        try:
            mode = PoolMode(mode)
        except ValueError as exc:
            raise FormatError(f"{path}: annotation {aid} has unknown pool mode {mode}") from exc
        archive.add(PooledFeature(annotation_id=aid, category_id=cid,
                                  vector=vector, pool_mode=mode))
    return archive


class DirectoryMapSource:
    """Feature maps stored one per image as <dir>/<image_id>.uqfm."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, image_id: int) -> Path:
        return self.directory / f"{image_id}.uqfm"

    def get(self, image_id: int) -> FeatureMap | None:
        path = self.path_for(image_id)
        if not path.is_file():
            return None
        return read_feature_map(path)


@dataclass
class PoolReport:
    pooled: int = 0
    skipped_crowd: int = 0
    skipped_zero_area: int = 0
    box_fallbacks: int = 0
    missing_image_ids: list[int] = field(default_factory=list)
    per_category: dict[int, int] = field(default_factory=dict)


def build_archive(index: DatasetIndex, map_source, pool_mode: PoolMode = PoolMode.BOX_MEAN,
                  *, include_crowd: bool = False,
                  skip_missing: bool = False) -> tuple[FeatureArchive, PoolReport]:
    """Pool one vector per scoreable annotation, streaming maps one image at a time.

    `map_source` is anything with `get(image_id) -> FeatureMap | None`.
    Missing maps abort with MissingFeatureMapsError unless skip_missing is
    set, in which case they are listed in the report. In MASK_MEAN mode an
    annotation without a mask falls back to box pooling (counted).
    """
    report = PoolReport()
    report.skipped_crowd = 0 if include_crowd else sum(a.is_crowd for a in index.annotations)
    report.skipped_zero_area = sum(
        a.zero_area for a in index.annotations if include_crowd or not a.is_crowd)

    by_image: dict[int, list] = {}
    for ann in index.scoreable_annotations(include_crowd=include_crowd):
        by_image.setdefault(ann.image_id, []).append(ann)

    if not skip_missing:
        missing = [iid for iid in sorted(by_image) if map_source.get(iid) is None]
        if missing:
            raise MissingFeatureMapsError(missing)

    sizes = {img.image_id: (img.width, img.height) for img in index.images}
    archive: FeatureArchive | None = None
    for image_id in sorted(by_image):
        fmap = map_source.get(image_id)
        if fmap is None:
            report.missing_image_ids.append(image_id)
            continue
        if archive is None:
            archive = FeatureArchive(dim=fmap.dim)
        elif fmap.dim != archive.dim:
            raise DimensionError(
                f"image {image_id}: map dim {fmap.dim} != archive dim {archive.dim}")
        image_size = sizes[image_id]
        for ann in by_image[image_id]:
            if pool_mode is PoolMode.MASK_MEAN and ann.segmentation is not None:
                vector = pool_mask(fmap, ann.segmentation, image_size)
                mode = PoolMode.MASK_MEAN
            else:
                if pool_mode is PoolMode.MASK_MEAN:
                    report.box_fallbacks += 1
                vector = pool_box(fmap, ann.bbox, image_size)
                mode = PoolMode.BOX_MEAN
            archive.add(PooledFeature(annotation_id=ann.annotation_id,
                                      category_id=ann.category_id,
                                      vector=vector.astype(np.float32), pool_mode=mode))
            report.pooled += 1
            report.per_category[ann.category_id] = \
                report.per_category.get(ann.category_id, 0) + 1
    if report.missing_image_ids:
        logger.warning("skipped %d images with no feature map: %s",
                       len(report.missing_image_ids), report.missing_image_ids[:20])
    if archive is None:
        archive = FeatureArchive(dim=0)
    return archive, report
