"""Extraction job runner: images in, one UQFM0001 file per image out.

Resumable: images whose output file already exists are skipped. Unreadable
images are logged and skipped, and the summary marks the run as failed so
callers can exit nonzero. A manifest.json maps every output file to its
image id and records the geometry pooling needs (grid, image size, the
effective pixels-per-cell stride).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import container
from .preprocess import content_grid, load_rgb, preprocess

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


@dataclass(frozen=True)
class ExtractJob:
    images: list[tuple[int, Path]]   # (image_id, path), deduplicated
    output_dir: Path
    resolution: int = 1024
    batch_size: int = 4
    full_grid: bool = False          # keep padding cells instead of cropping


@dataclass
class ExtractSummary:
    written: int = 0
    skipped_existing: int = 0
    failed: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def images_from_annotations(path: str | Path, image_root: str | Path) -> list[tuple[int, Path]]:
    """(image_id, path) pairs from a COCO-style annotation file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    records = data.get("images")
    if not isinstance(records, list):
        raise ValueError(f"{path}: no top-level 'images' array")
    root = Path(image_root)
    pairs = []
    seen = set()
    for rec in records:
        image_id = int(rec["id"])
        if image_id in seen:
            raise ValueError(f"{path}: duplicate image id {image_id}")
        seen.add(image_id)
        pairs.append((image_id, root / str(rec.get("file_name", ""))))
    return sorted(pairs)


def images_from_directory(directory: str | Path) -> list[tuple[int, Path]]:
    """(image_id, path) pairs from files named by numeric image id."""
    pairs = []
    seen = set()
    for entry in sorted(Path(directory).iterdir()):
        if entry.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            image_id = int(entry.stem)
        except ValueError:
            raise ValueError(f"{entry.name}: file name is not a numeric image id; "
                             f"use an annotation file to supply ids")
        if image_id in seen:
            raise ValueError(f"duplicate image id {image_id}")
        seen.add(image_id)
        pairs.append((image_id, entry))
    return pairs


def run_extract(job: ExtractJob, encoder) -> ExtractSummary:
    """Encode every image in the job, skipping outputs that already exist."""
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ExtractSummary()
    manifest_entries = []
    pending: list[tuple[int, Path]] = []

    def flush(batch: list[tuple[int, object]]) -> None:
        grids = encoder.encode_batch([prep.pixels for _, prep in batch])
        for (image_id, prep), grid in zip(batch, grids):
            if not job.full_grid:
                gh, gw = content_grid(prep, encoder.patch)
                grid = grid[:gh, :gw]
            path = out_dir / f"{image_id}.uqfm"
            container.write_map(path, image_id, grid)
            manifest_entries.append(_manifest_entry(path.name, image_id, prep, grid))
            summary.written += 1

    batch: list[tuple[int, object]] = []
    for image_id, path in job.images:
        out_path = out_dir / f"{image_id}.uqfm"
        if out_path.exists():
            summary.skipped_existing += 1
            try:
                _, gh, gw, dim = container.read_header(out_path)
            except ValueError as exc:
                summary.failed.append(f"{out_path.name}: existing file invalid: {exc}")
                continue
            manifest_entries.append({"file": out_path.name, "image_id": image_id,
                                     "grid": [gh, gw], "dim": dim})
            continue
        try:
            image = load_rgb(path)
        except (OSError, ValueError) as exc:
            logger.error("skipping unreadable image %s: %s", path, exc)
            summary.failed.append(f"{path}: {exc}")
            continue
        batch.append((image_id, preprocess(image, job.resolution)))
        if len(batch) >= job.batch_size:
            flush(batch)
            batch = []
    if batch:
        flush(batch)

    manifest = {
        "provenance": {
            "encoder": getattr(encoder, "name", type(encoder).__name__),
            "layer": getattr(encoder, "layer", None),
            "resolution": job.resolution,
            "patch": encoder.patch,
            "full_grid": job.full_grid,
        },
        "files": sorted(manifest_entries, key=lambda e: e["image_id"]),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return summary


def _manifest_entry(name: str, image_id: int, prep, grid) -> dict:
    w0, h0 = prep.original_size
    gh, gw = grid.shape[:2]
    return {
        "file": name,
        "image_id": image_id,
        "image_size": [w0, h0],
        "grid": [gh, gw],
        "dim": int(grid.shape[2]),
        "stride": [w0 / gw, h0 / gh],
    }
