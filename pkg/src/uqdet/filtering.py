"""Noise filtering via empirical quantiles and redundancy filtering via score bins.

The quantile is the inverse empirical CDF with no interpolation: the
smallest observed value whose CDF reaches p. All filters are pure
functions of (table, params, seed); a redundancy run draws each
(class, bin) subset from its own seeded generator so results do not
depend on iteration order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fileio import atomic_write_text
from .dataset import DatasetIndex
from .errors import FormatError, IntegrityError
from .scoring import ScoreTable
from .validation import check_fraction

logger = logging.getLogger(__name__)

STRATEGY_NOISE_GLOBAL = "noise_global"
STRATEGY_NOISE_PER_CLASS = "noise_per_class"
STRATEGY_REDUNDANCY = "redundancy"

FILTER_HEADER_PREFIX = "uq-filter v1"


@dataclass(frozen=True)
class FilterResult:
    kept: frozenset[int]
    dropped: frozenset[int]
    strategy: str
    p: float
    bin_count: int | None = None
    seed: int | None = None
    threshold: float | None = None
    per_class_thresholds: dict[int, float] | None = None
    per_bin_counts: dict[tuple[int, int], tuple[int, int]] | None = None
    notes: tuple[str, ...] = ()


def empirical_quantile(values, p: float) -> float:
    """Smallest observed value v with (count of values <= v) / n >= p."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot take a quantile of an empty list")
    p = check_fraction(p, name="p")
    ordered = np.sort(v)
    k = min(max(math.ceil(p * v.size), 1), v.size)
    return float(ordered[k - 1])


def filter_noise_global(table: ScoreTable, p: float) -> FilterResult:
    """Keep records whose score is <= the pooled p-quantile over all classes."""
    p = check_fraction(p, name="p", inclusive_min=False)
    ids, _, _, scores = table.arrays()
    if ids.size == 0:
        raise ValueError("score table is empty")
    threshold = empirical_quantile(scores, p)
    keep = scores <= threshold
    return FilterResult(
        kept=frozenset(ids[keep].tolist()),
        dropped=frozenset(ids[~keep].tolist()),
        strategy=STRATEGY_NOISE_GLOBAL, p=p, threshold=threshold)


def filter_noise_per_class(table: ScoreTable, p: float) -> FilterResult:
    """Keep records whose score is <= their own class's p-quantile."""
    p = check_fraction(p, name="p", inclusive_min=False)
    ids, cats, _, scores = table.arrays()
    if ids.size == 0:
        raise ValueError("score table is empty")
    kept, dropped = [], []
    thresholds: dict[int, float] = {}
    notes: list[str] = []
    for k in np.unique(cats):
        mask = cats == k
        threshold = empirical_quantile(scores[mask], p)
        thresholds[int(k)] = threshold
        if np.count_nonzero(mask) == 1:
            notes.append(f"category {int(k)} has a single record; kept by its own quantile")
        keep = scores[mask] <= threshold
        kept.extend(ids[mask][keep].tolist())
        dropped.extend(ids[mask][~keep].tolist())
    return FilterResult(
        kept=frozenset(kept), dropped=frozenset(dropped),
        strategy=STRATEGY_NOISE_PER_CLASS, p=p,
        per_class_thresholds=thresholds, notes=tuple(notes))


def _bin_of(score: float, bin_count: int) -> int:
    """Bin m covers ((m-1)/M, m/M]; a score of exactly 0 lands in bin 1."""
    return min(max(math.ceil(score * bin_count), 1), bin_count)


def filter_redundant(table: ScoreTable, bin_count: int, drop_fraction: float,
                     seed: int) -> FilterResult:
    """Drop floor(p * |bin|) records per (class, bin), chosen by a seeded draw.

    Each (class, bin) cell uses its own generator seeded from
    (seed, category_id, bin), so the result is independent of iteration
    order and reruns are byte-identical.
    """
    if bin_count < 1:
        raise ValueError(f"bin_count must be >= 1, got {bin_count}")
    drop_fraction = check_fraction(drop_fraction, name="drop_fraction",
                                   inclusive_max=False)
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    ids, cats, _, scores = table.arrays()
    if ids.size == 0:
        raise ValueError("score table is empty")
    cells: dict[tuple[int, int], list[int]] = {}
    for aid, cid, score in zip(ids.tolist(), cats.tolist(), scores.tolist()):
        cells.setdefault((cid, _bin_of(score, bin_count)), []).append(aid)
    kept, dropped = [], []
    per_bin: dict[tuple[int, int], tuple[int, int]] = {}
    for (cid, m) in sorted(cells):
        members = sorted(cells[(cid, m)])
        n_drop = math.floor(drop_fraction * len(members))
        rng = np.random.default_rng([seed, cid, m])
        order = rng.permutation(len(members))
        drop_idx = set(order[:n_drop].tolist())
        for i, aid in enumerate(members):
            (dropped if i in drop_idx else kept).append(aid)
        per_bin[(cid, m)] = (len(members), n_drop)
    return FilterResult(
        kept=frozenset(kept), dropped=frozenset(dropped),
        strategy=STRATEGY_REDUNDANCY, p=drop_fraction,
        bin_count=bin_count, seed=seed, per_bin_counts=per_bin)


def apply_filter(index: DatasetIndex, result: FilterResult, *,
                 remove_empty_images: bool = False,
                 keep_unscored: bool = False) -> DatasetIndex:
    """Materialize a filter as a new index holding only the kept annotations.

    Annotations that were never scored (crowd, zero-area) appear in neither
    set; they are removed too unless keep_unscored is set. Images are
    retained even when left empty, unless remove_empty_images is set.
    """
    known = index.annotation_ids()
    referenced = result.kept | result.dropped
    unknown = sorted(referenced - known)
    if unknown:
        raise IntegrityError(f"filter references unknown annotation ids "
                             f"{unknown[:20]}{'...' if len(unknown) > 20 else ''}")
    annotations = tuple(
        a for a in index.annotations
        if a.annotation_id in result.kept
        or (keep_unscored and a.annotation_id not in referenced))
    images = index.images
    if remove_empty_images:
        populated = {a.image_id for a in annotations}
        images = tuple(img for img in index.images if img.image_id in populated)
    logger.info("filter %s: kept %d / dropped %d of %d annotations",
                result.strategy, len(annotations),
                len(index.annotations) - len(annotations), len(index.annotations))
    return DatasetIndex(images=images, annotations=annotations,
                        categories=index.categories)


def write_filter_result(result: FilterResult, path: str | Path) -> None:
    bins = result.bin_count if result.bin_count is not None else "-"
    seed = result.seed if result.seed is not None else "-"
    lines = [f"{FILTER_HEADER_PREFIX} strategy={result.strategy} p={result.p!r} "
             f"M={bins} seed={seed}", "[kept]"]
    lines.extend(str(aid) for aid in sorted(result.kept))
    lines.append("[dropped]")
    lines.extend(str(aid) for aid in sorted(result.dropped))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_filter_result(path: str | Path) -> FilterResult:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 6 or " ".join(header[:2]) != FILTER_HEADER_PREFIX:
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    fields = {}
    for token in header[2:]:
        key, _, value = token.partition("=")
        if not value:
            raise FormatError(f"{path}: bad header token {token!r}")
        fields[key] = value
    try:
        strategy = fields["strategy"]
        p = float(fields["p"])
        bins = None if fields["M"] == "-" else int(fields["M"])
        seed = None if fields["seed"] == "-" else int(fields["seed"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from exc
    if strategy not in (STRATEGY_NOISE_GLOBAL, STRATEGY_NOISE_PER_CLASS,
                        STRATEGY_REDUNDANCY):
        raise FormatError(f"{path}: unknown strategy {strategy!r}")
    section = None
    kept: list[int] = []
    dropped: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line == "[kept]":
            section = kept
            continue
        if line == "[dropped]":
            section = dropped
            continue
        if section is None:
            raise FormatError(f"{path}: line {lineno}: id outside a section")
        try:
            section.append(int(line))
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: bad annotation id {line!r}") from exc
    kept_set, dropped_set = frozenset(kept), frozenset(dropped)
    if kept_set & dropped_set:
        raise FormatError(f"{path}: ids present in both sections")
    return FilterResult(kept=kept_set, dropped=dropped_set, strategy=strategy,
                        p=p, bin_count=bins, seed=seed)
