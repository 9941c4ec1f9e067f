"""Normalized per-class uncertainty scores, score files, and histograms.

Raw squared distances are mapped through a log and per-class min-max
scaling into [0, 1]; the per-class minimum scores 0 and the maximum
scores 1, so scores are only comparable as ranks within a class. A class
whose distances are all equal (for example a single-sample class) scores
0.0 everywhere and raises a DegenerateClassWarning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fileio import atomic_write_text
from .errors import DegenerateClassWarning, DimensionError, FormatError, UnknownCategoryError
from .features import FeatureArchive
from .gaussian import ClassConditionalGaussian, model_checksum

DISTANCE_FLOOR = 1e-12  # clamp before the log so a centroid object stays finite

SCORE_HEADER_PREFIX = "uq-scores v1"


@dataclass(frozen=True)
class ScoreRecord:
    annotation_id: int
    category_id: int
    mahalanobis: float
    score: float


@dataclass
class ScoreTable:
    records: list[ScoreRecord]
    per_class_minmax: dict[int, tuple[float, float]]
    model_ref: str
    dim: int

    def __len__(self) -> int:
        return len(self.records)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(annotation_ids, category_ids, mahalanobis, scores) as numpy arrays."""
        ids = np.array([r.annotation_id for r in self.records], dtype=np.int64)
        cats = np.array([r.category_id for r in self.records], dtype=np.int64)
        maha = np.array([r.mahalanobis for r in self.records])
        scores = np.array([r.score for r in self.records])
        return ids, cats, maha, scores

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoreTable):
            return NotImplemented
        return (self.records == other.records
                and self.per_class_minmax == other.per_class_minmax
                and self.model_ref == other.model_ref
                and self.dim == other.dim)


def normalize(distances, categories) -> tuple[np.ndarray, dict[int, tuple[float, float]]]:
    """Log + per-class min-max scale distances into [0, 1] scores.

    Returns the scores and the per-class (min, max) of the log distances
    that produced them. Distances are clamped below at DISTANCE_FLOOR
    before the log. A class with max == min scores 0.0 everywhere and
    emits a DegenerateClassWarning.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(categories)
    if d.shape != y.shape or d.ndim != 1:
        raise ValueError("distances and categories must be equal-length vectors")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and >= 0")
    logm = np.log(np.maximum(d, DISTANCE_FLOOR))
    scores = np.zeros_like(logm)
    minmax: dict[int, tuple[float, float]] = {}
    for k in np.unique(y):
        mask = y == k
        lo = float(logm[mask].min())
        hi = float(logm[mask].max())
        minmax[int(k)] = (lo, hi)
        if hi == lo:
            warnings.warn(f"category {int(k)}: all distances equal, scores set to 0.0",
                          DegenerateClassWarning, stacklevel=2)
        else:
            scores[mask] = (logm[mask] - lo) / (hi - lo)
    return scores, minmax


def score_dataset(model: ClassConditionalGaussian,
                  archive: FeatureArchive) -> ScoreTable:
    """Score every archive entry; records come out ascending by annotation id."""
    if archive.dim != model.n_features_in_:
        raise DimensionError(f"archive dim {archive.dim} != model dim "
                             f"{model.n_features_in_}")
    X, y, ids = archive.vectors_and_labels()
    if ids.size == 0:
        raise ValueError("archive is empty")
    missing = sorted(set(int(k) for k in np.unique(y)) - set(int(k) for k in model.classes_))
    if missing:
        raise UnknownCategoryError(f"categories not fitted: {missing}")
    maha = model.mahalanobis(X, y)
    scores, minmax = normalize(maha, y)
    records = [ScoreRecord(int(a), int(c), float(m), float(s))
               for a, c, m, s in zip(ids, y, maha, scores)]
    return ScoreTable(records=records, per_class_minmax=minmax,
                      model_ref=model_checksum(model), dim=archive.dim)


@dataclass
class HistogramReport:
    edges: np.ndarray
    scope: str
    counts: np.ndarray | None = None
    per_class: dict[int, np.ndarray] | None = None
    total: int = 0


def histogram(table: ScoreTable, bin_count: int, scope: str = "global") -> HistogramReport:
    """Equal-width score histogram over [0, 1].

    Bins are [lo, hi) except the last, which is [lo, 1] so a score of
    exactly 1.0 is counted. Counts always sum to the record count.
    """
    if bin_count < 1:
        raise ValueError(f"bin_count must be >= 1, got {bin_count}")
    if scope not in ("global", "per-class"):
        raise ValueError(f"unknown histogram scope {scope!r}")
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    _, cats, _, scores = table.arrays()

    def counts_for(values: np.ndarray) -> np.ndarray:
        if values.size == 0:
            return np.zeros(bin_count, dtype=np.int64)
        idx = np.minimum(np.floor(values * bin_count).astype(np.int64), bin_count - 1)
        return np.bincount(idx, minlength=bin_count)

    report = HistogramReport(edges=edges, scope=scope, total=len(table))
    if scope == "global":
        report.counts = counts_for(scores)
    else:
        report.per_class = {int(k): counts_for(scores[cats == k])
                            for k in np.unique(cats)}
    return report


def write_histogram_csv(report: HistogramReport, path: str | Path) -> None:
    lines = []
    edges = report.edges
    if report.scope == "global":
        lines.append("bin_lo,bin_hi,count")
        for i, count in enumerate(report.counts):
            lines.append(f"{edges[i]!r},{edges[i + 1]!r},{int(count)}")
    else:
        lines.append("bin_lo,bin_hi,count,category_id")
        for cid in sorted(report.per_class):
            for i, count in enumerate(report.per_class[cid]):
                lines.append(f"{edges[i]!r},{edges[i + 1]!r},{int(count)},{cid}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _svg_panel(counts: np.ndarray, title: str, ox: float, oy: float,
               width: float, height: float) -> list[str]:
    peak = max(int(counts.max()), 1) if counts.size else 1
    bar_w = width / len(counts)
    parts = [f'<text x="{ox:.1f}" y="{oy - 6:.1f}" font-size="11" '
             f'font-family="sans-serif">{title} (n={int(counts.sum())})</text>',
             f'<rect x="{ox:.1f}" y="{oy:.1f}" width="{width:.1f}" '
             f'height="{height:.1f}" fill="none" stroke="#444"/>']
    for i, count in enumerate(counts):
        bar_h = height * int(count) / peak
        parts.append(f'<rect x="{ox + i * bar_w:.2f}" y="{oy + height - bar_h:.2f}" '
                     f'width="{bar_w:.2f}" height="{bar_h:.2f}" fill="#4878a8"/>')
    return parts


def write_histogram_svg(report: HistogramReport, path: str | Path) -> None:
    """Emit the histogram as a small standalone SVG bar chart."""
    panel_w, panel_h, pad = 240.0, 120.0, 34.0
    if report.scope == "global":
        panels = [("all classes", report.counts)]
    else:
        panels = [(f"category {cid}", report.per_class[cid])
                  for cid in sorted(report.per_class)]
    if not panels:
        panels = [("all classes", np.zeros(len(report.edges) - 1, dtype=np.int64))]
    columns = min(3, len(panels))
    rows = (len(panels) + columns - 1) // columns
    svg_w = columns * (panel_w + pad) + pad
    svg_h = rows * (panel_h + pad) + pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{svg_w:.0f}" '
             f'height="{svg_h:.0f}" viewBox="0 0 {svg_w:.0f} {svg_h:.0f}">']
    for i, (title, counts) in enumerate(panels):
        ox = pad + (i % columns) * (panel_w + pad)
        oy = pad + (i // columns) * (panel_h + pad)
        parts.extend(_svg_panel(np.asarray(counts), title, ox, oy, panel_w, panel_h))
    parts.append("</svg>")
    atomic_write_text(Path(path), "\n".join(parts) + "\n")


def write_scores(table: ScoreTable, path: str | Path) -> None:
    """One tab-separated record per line under a fixed header.

    Floats are written with repr, which round-trips every IEEE double.
    """
    lines = [f"{SCORE_HEADER_PREFIX} dim={table.dim} model={table.model_ref}"]
    for rec in table.records:
        lines.append(f"{rec.annotation_id}\t{rec.category_id}\t"
                     f"{rec.mahalanobis!r}\t{rec.score!r}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_scores(path: str | Path) -> ScoreTable:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    header = lines[0].split()
    if (len(header) != 4 or " ".join(header[:2]) != SCORE_HEADER_PREFIX
            or not header[2].startswith("dim=") or not header[3].startswith("model=")):
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    try:
        dim = int(header[2][4:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad dim in header") from exc
    model_ref = header[3][6:]
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            aid, cid = int(fields[0]), int(fields[1])
            maha, score = float(fields[2]), float(fields[3])
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
        if not np.isfinite(maha) or maha < 0:
            raise FormatError(f"{path}: line {lineno}: invalid distance {maha!r}")
        if not np.isfinite(score) or score < 0.0 or score > 1.0:
            raise FormatError(f"{path}: line {lineno}: score {score!r} outside [0, 1]")
        records.append(ScoreRecord(aid, cid, maha, score))
    if not records:
        raise FormatError(f"{path}: no records")
    maha = np.array([r.mahalanobis for r in records])
    cats = np.array([r.category_id for r in records])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateClassWarning)
        expected, minmax = normalize(maha, cats)
    stored = np.array([r.score for r in records])
    gap = float(np.max(np.abs(expected - stored)))
    if gap > 1e-9:
        raise FormatError(f"{path}: stored scores inconsistent with distances "
                          f"(max gap {gap:g})")
    return ScoreTable(records=records, per_class_minmax=minmax,
                      model_ref=model_ref, dim=dim)
