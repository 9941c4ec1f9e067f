"""COCO-style detection dataset parsing, validation, and writing.

The in-memory representation is immutable once built: parsing validates
referential integrity up front, and every later stage only reads from it.
Box coordinates are `[x, y, w, h]` floats in pixels with a top-left origin,
exactly as stored in COCO annotation files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetParseError, IntegrityError
from ._fileio import atomic_write_text

logger = logging.getLogger(__name__)

Bbox = tuple[float, float, float, float]


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True, eq=True)
class ObjectAnnotation:
    annotation_id: int
    image_id: int
    category_id: int
    bbox: Bbox
    segmentation: list | dict | None = None
    is_crowd: bool = False

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    @property
    def zero_area(self) -> bool:
        return self.bbox[2] <= 0.0 or self.bbox[3] <= 0.0


@dataclass(frozen=True)
class CategoryTable:
    """Ordered mapping from category id to name."""

    names: dict[int, str]

    @property
    def ids(self) -> list[int]:
        return list(self.names)

    def name(self, category_id: int) -> str:
        return self.names[category_id]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, category_id: int) -> bool:
        return category_id in self.names


@dataclass(frozen=True)
class DatasetIndex:
    images: tuple[ImageRecord, ...]
    annotations: tuple[ObjectAnnotation, ...]
    categories: CategoryTable

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {img.image_id: img for img in self.images}

    def annotation_ids(self) -> set[int]:
        return {a.annotation_id for a in self.annotations}

    def annotations_by_image(self) -> dict[int, list[ObjectAnnotation]]:
        grouped: dict[int, list[ObjectAnnotation]] = {img.image_id: [] for img in self.images}
        for ann in self.annotations:
            grouped[ann.image_id].append(ann)
        return grouped

    def scoreable_annotations(self, include_crowd: bool = False) -> list[ObjectAnnotation]:
        """Annotations eligible for pooling: positive area, non-crowd by default."""
        return [a for a in self.annotations
                if not a.zero_area and (include_crowd or not a.is_crowd)]

    def validate(self) -> None:
        """Raise IntegrityError on any type or reference violation."""
        if len(self.categories) < 1:
            raise IntegrityError("dataset has no categories")
        image_ids = set()
        for img in self.images:
            if img.width <= 0 or img.height <= 0:
                raise IntegrityError(
                    f"image {img.image_id} has non-positive size {img.width}x{img.height}")
            if img.image_id in image_ids:
                raise IntegrityError(f"duplicate image id {img.image_id}")
            image_ids.add(img.image_id)
        seen = set()
        for ann in self.annotations:
            if ann.annotation_id in seen:
                raise IntegrityError(f"duplicate annotation id {ann.annotation_id}")
            seen.add(ann.annotation_id)
            if ann.image_id not in image_ids:
                raise IntegrityError(
                    f"annotation {ann.annotation_id} references missing image_id {ann.image_id}")
            if ann.category_id not in self.categories:
                raise IntegrityError(
                    f"annotation {ann.annotation_id} references missing category_id {ann.category_id}")
            if ann.bbox[2] < 0 or ann.bbox[3] < 0:
                raise IntegrityError(
                    f"annotation {ann.annotation_id} has negative box size {ann.bbox}")


@dataclass(frozen=True)
class DatasetStats:
    image_count: int
    annotation_count: int
    category_count: int
    per_category_counts: dict[int, int]
    instances_per_image_mean: float
    instances_per_image_max: int


def _clamp_bbox(bbox: Bbox, width: int, height: int) -> tuple[Bbox, bool]:
    x, y, w, h = bbox
    x0 = min(max(x, 0.0), float(width))
    y0 = min(max(y, 0.0), float(height))
    x1 = min(max(x + w, 0.0), float(width))
    y1 = min(max(y + h, 0.0), float(height))
    clamped = (x0, y0, x1 - x0, y1 - y0)
    return clamped, clamped != (x, y, w, h)


def parse_dataset(path: str | Path) -> DatasetIndex:
    """Parse and validate a COCO-style annotation file.

    Boxes reaching past the image border are clamped to it (counted and
    logged, never silently beyond that). Zero-area boxes are retained but
    flagged; they are excluded from `scoreable_annotations`. Any dangling
    image or category reference raises IntegrityError naming the offender.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno} "
            f"(byte offset {exc.pos}): {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise DatasetParseError(f"{path}: top level is not an object")
    for key in ("images", "annotations", "categories"):
        if key not in raw or not isinstance(raw[key], list):
            raise DatasetParseError(f"{path}: missing or non-array top-level '{key}'")

    names: dict[int, str] = {}
    for rec in raw["categories"]:
        try:
            cid = int(rec["id"])
            name = str(rec.get("name", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"{path}: malformed category record {rec!r}") from exc
        if cid in names:
            raise IntegrityError(f"duplicate category id {cid}")
        names[cid] = name
    if not names:
        raise DatasetParseError(f"{path}: dataset declares no categories")
    categories = CategoryTable(names)

    images: list[ImageRecord] = []
    image_sizes: dict[int, tuple[int, int]] = {}
    for rec in raw["images"]:
        try:
            img = ImageRecord(image_id=int(rec["id"]), width=int(rec["width"]),
                              height=int(rec["height"]),
                              file_name=str(rec.get("file_name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"{path}: malformed image record {rec!r}") from exc
        if img.width <= 0 or img.height <= 0:
            raise IntegrityError(
                f"image {img.image_id} has non-positive size {img.width}x{img.height}")
        if img.image_id in image_sizes:
            raise IntegrityError(f"duplicate image id {img.image_id}")
        image_sizes[img.image_id] = (img.width, img.height)
        images.append(img)

    annotations: list[ObjectAnnotation] = []
    seen_ids: set[int] = set()
    clamped_count = 0
    zero_area_ids: list[int] = []
    for rec in raw["annotations"]:
        try:
            aid = int(rec["id"])
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            bx = rec["bbox"]
            bbox = (float(bx[0]), float(bx[1]), float(bx[2]), float(bx[3]))
            if len(bx) != 4:
                raise ValueError("bbox length")
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DatasetParseError(f"{path}: malformed annotation record {rec!r}") from exc
        if aid in seen_ids:
            raise IntegrityError(f"duplicate annotation id {aid}")
        seen_ids.add(aid)
        if image_id not in image_sizes:
            raise IntegrityError(
                f"annotation {aid} references missing image_id {image_id}")
        if category_id not in categories:
            raise IntegrityError(
                f"annotation {aid} references missing category_id {category_id}")
        if bbox[2] < 0 or bbox[3] < 0:
            raise IntegrityError(f"annotation {aid} has negative box size {bbox}")
        width, height = image_sizes[image_id]
        bbox, was_clamped = _clamp_bbox(bbox, width, height)
        clamped_count += was_clamped
        ann = ObjectAnnotation(
            annotation_id=aid, image_id=image_id, category_id=category_id,
            bbox=bbox, segmentation=rec.get("segmentation"),
            is_crowd=bool(int(rec.get("iscrowd", 0))))
        if ann.zero_area:
            zero_area_ids.append(aid)
        annotations.append(ann)

    if clamped_count:
        logger.warning("%s: clamped %d out-of-bounds boxes to image borders",
                       path.name, clamped_count)
    if zero_area_ids:
        shown = zero_area_ids[:20]
        logger.warning("%s: %d zero-area boxes retained but excluded from scoring "
                       "(ids %s%s)", path.name, len(zero_area_ids), shown,
                       "..." if len(zero_area_ids) > 20 else "")
    return DatasetIndex(images=tuple(images), annotations=tuple(annotations),
                        categories=categories)


def write_dataset(index: DatasetIndex, path: str | Path) -> None:
    """Write a COCO-style annotation file; parse(write(index)) == index."""
    index.validate()
    payload = {
        "images": [
            {"id": img.image_id, "width": img.width, "height": img.height,
             "file_name": img.file_name}
            for img in index.images
        ],
        "annotations": [],
        "categories": [
            {"id": cid, "name": name} for cid, name in index.categories.names.items()
        ],
    }
    for ann in index.annotations:
        rec = {
            "id": ann.annotation_id,
            "image_id": ann.image_id,
            "category_id": ann.category_id,
            "bbox": list(ann.bbox),
            "area": ann.area,
            "iscrowd": int(ann.is_crowd),
        }
        if ann.segmentation is not None:
            rec["segmentation"] = ann.segmentation
        payload["annotations"].append(rec)
    atomic_write_text(Path(path), json.dumps(payload))


def dataset_stats(index: DatasetIndex) -> DatasetStats:
    """Per-category counts plus instances-per-image mean and max."""
    per_category = {cid: 0 for cid in index.categories.ids}
    per_image = {img.image_id: 0 for img in index.images}
    for ann in index.annotations:
        per_category[ann.category_id] = per_category.get(ann.category_id, 0) + 1
        per_image[ann.image_id] += 1
    n_images = len(index.images)
    mean = len(index.annotations) / n_images if n_images else 0.0
    peak = max(per_image.values(), default=0)
    return DatasetStats(
        image_count=n_images,
        annotation_count=len(index.annotations),
        category_count=len(index.categories),
        per_category_counts=per_category,
        instances_per_image_mean=mean,
        instances_per_image_max=peak,
    )
