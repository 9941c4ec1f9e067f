"""Synthetic archives with injected outliers, and recovery evaluation.

Clean vectors are drawn from unit-covariance Gaussians at well-separated
class means; outliers get an extra shift of known size in a random
direction. Because the within-class covariance is the identity, the true
distance of any generated point is available in closed form, which makes
the whole scoring pipeline checkable against brute force.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from ._fileio import atomic_write_text
from .dataset import CategoryTable, DatasetIndex, ImageRecord, ObjectAnnotation
from .features import FeatureArchive, PooledFeature, PoolMode
from .filtering import FilterResult, filter_noise_global
from .gaussian import fit_density_model
from .scoring import ScoreTable, score_dataset

CLEAN = "clean"
OUTLIER = "outlier"

_ANNS_PER_IMAGE = 16


@dataclass(frozen=True)
class SynthConfig:
    class_count: int
    dim: int
    per_class_count: int
    mean_separation: float = 10.0
    contamination_rate: float = 0.0
    outlier_shift: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 1 or self.dim < 1 or self.per_class_count < 1:
            raise ValueError("class_count, dim, and per_class_count must be >= 1")
        if not 0.0 <= self.contamination_rate < 1.0:
            raise ValueError(f"contamination_rate {self.contamination_rate} "
                             f"outside [0, 1)")
        if self.mean_separation < 0 or self.outlier_shift < 0:
            raise ValueError("mean_separation and outlier_shift must be >= 0")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class SynthTruth:
    labels: dict[int, str]

    @property
    def outlier_ids(self) -> frozenset[int]:
        return frozenset(aid for aid, lab in self.labels.items() if lab == OUTLIER)

    @property
    def clean_ids(self) -> frozenset[int]:
        return frozenset(aid for aid, lab in self.labels.items() if lab == CLEAN)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def generate(config: SynthConfig) -> tuple[FeatureArchive, DatasetIndex, SynthTruth]:
    """Deterministically generate an archive, a matching index, and the truth.

    Per class: clean vectors ~ N(mu_k, I); outliers ~ N(mu_k + shift * u, I)
    with u a fresh random unit direction per outlier. The outlier count per
    class is round(rate * per_class_count). Identical configs produce
    bit-identical archives.
    """
    rng = np.random.default_rng(config.seed)
    dirs = _unit_rows(rng.standard_normal((config.class_count, config.dim)))
    means = config.mean_separation * dirs

    archive = FeatureArchive(dim=config.dim, provenance=f"synth(seed={config.seed})")
    labels: dict[int, str] = {}
    annotations = []
    next_id = 1
    for k in range(config.class_count):
        n_out = int(round(config.contamination_rate * config.per_class_count))
        n_clean = config.per_class_count - n_out
        clean = means[k] + rng.standard_normal((n_clean, config.dim))
        odirs = rng.standard_normal((n_out, config.dim))
        if n_out:
            odirs = _unit_rows(odirs)
        outliers = means[k] + config.outlier_shift * odirs \
            + rng.standard_normal((n_out, config.dim))
        category_id = k + 1
        for row, label in [(clean, CLEAN), (outliers, OUTLIER)]:
            for vector in row:
                archive.add(PooledFeature(
                    annotation_id=next_id, category_id=category_id,
                    vector=vector.astype(np.float32), pool_mode=PoolMode.BOX_MEAN))
                labels[next_id] = label
                image_id = 1 + (next_id - 1) // _ANNS_PER_IMAGE
                annotations.append(ObjectAnnotation(
                    annotation_id=next_id, image_id=image_id,
                    category_id=category_id, bbox=(8.0, 8.0, 32.0, 32.0)))
                next_id += 1

    total = next_id - 1
    n_images = (total + _ANNS_PER_IMAGE - 1) // _ANNS_PER_IMAGE
    images = tuple(ImageRecord(image_id=i + 1, width=640, height=480,
                               file_name=f"synth_{i + 1:06d}.png")
                   for i in range(n_images))
    categories = CategoryTable({k + 1: f"class-{k + 1}"
                                for k in range(config.class_count)})
    index = DatasetIndex(images=images, annotations=tuple(annotations),
                         categories=categories)
    return archive, index, SynthTruth(labels=labels)


def evaluate_auroc(table: ScoreTable, truth: SynthTruth) -> float:
    """AUROC of the scores as an outlier detector, rank-based with tie handling."""
    ids, _, _, scores = table.arrays()
    id_set = set(ids.tolist())
    if id_set != set(truth.labels):
        missing = sorted(set(truth.labels) ^ id_set)
        raise ValueError(f"score table and truth ids differ: {missing[:10]}"
                         f"{'...' if len(missing) > 10 else ''}")
    positive = np.array([truth.labels[int(a)] == OUTLIER for a in ids])
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one clean and one outlier sample")
    ranks = rankdata(scores)
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class RecoveryReport:
    config: SynthConfig
    p: float
    auroc: float
    total: int
    outlier_count: int
    dropped_count: int
    outliers_dropped: int
    clean_dropped: int
    outlier_recall: float


def recovery_experiment(config: SynthConfig, p: float | None = None) -> RecoveryReport:
    """Generate, fit, score, and noise-filter; report how well outliers fall out.

    The filter quantile defaults to 1 - contamination_rate so the nominal
    drop budget matches the injected contamination.
    """
    archive, _, truth = generate(config)
    model = fit_density_model(archive)
    table = score_dataset(model, archive)
    outliers = truth.outlier_ids
    auroc = evaluate_auroc(table, truth) if outliers else float("nan")
    if p is None:
        p = 1.0 - config.contamination_rate
    result: FilterResult = filter_noise_global(table, p)
    outliers_dropped = len(result.dropped & outliers)
    recall = outliers_dropped / len(outliers) if outliers else float("nan")
    return RecoveryReport(
        config=config, p=p, auroc=auroc, total=len(table),
        outlier_count=len(outliers), dropped_count=len(result.dropped),
        outliers_dropped=outliers_dropped,
        clean_dropped=len(result.dropped) - outliers_dropped,
        outlier_recall=recall)


def write_recovery_csv(report: RecoveryReport, path: str | Path) -> None:
    cfg = report.config
    header = ("class_count,dim,per_class_count,mean_separation,contamination_rate,"
              "outlier_shift,seed,p,auroc,total,outlier_count,dropped_count,"
              "outliers_dropped,clean_dropped,outlier_recall")
    row = (f"{cfg.class_count},{cfg.dim},{cfg.per_class_count},"
           f"{cfg.mean_separation!r},{cfg.contamination_rate!r},"
           f"{cfg.outlier_shift!r},{cfg.seed},{report.p!r},{report.auroc!r},"
           f"{report.total},{report.outlier_count},{report.dropped_count},"
           f"{report.outliers_dropped},{report.clean_dropped},"
           f"{report.outlier_recall!r}")
    atomic_write_text(Path(path), header + "\n" + row + "\n")
