import numpy as np
import pytest

from uqdet.dataset import write_dataset, parse_dataset
from uqdet.gaussian import fit_density_model
from uqdet.scoring import ScoreRecord, ScoreTable, score_dataset
from uqdet.synth import (CLEAN, OUTLIER, SynthConfig, SynthTruth, evaluate_auroc,
                         generate, recovery_experiment, write_recovery_csv)


def pair_count_auroc(scores, positive):
    """O(n_pos * n_neg) oracle: fraction of (pos, neg) pairs ranked correctly."""
    pos = scores[positive]
    neg = scores[~positive]
    wins = 0.0
    for p in pos:
        wins += np.count_nonzero(neg < p) + 0.5 * np.count_nonzero(neg == p)
    return wins / (len(pos) * len(neg))


def table_from(scores):
    records = [ScoreRecord(i + 1, 1, float(s) + 1.0, float(s))
               for i, s in enumerate(scores)]
    return ScoreTable(records=records, per_class_minmax={1: (0.0, 1.0)},
                      model_ref="", dim=1)


def truth_from(flags):
    return SynthTruth(labels={i + 1: OUTLIER if f else CLEAN
                              for i, f in enumerate(flags)})


def test_generate_rate_zero_all_clean():
    _, _, truth = generate(SynthConfig(class_count=2, dim=4, per_class_count=10,
                                       contamination_rate=0.0, seed=1))
    assert not truth.outlier_ids
    assert len(truth.clean_ids) == 20


def test_generate_exact_outlier_count():
    _, _, truth = generate(SynthConfig(class_count=1, dim=4, per_class_count=100,
                                       contamination_rate=0.05, seed=2))
    assert len(truth.outlier_ids) == 5


def test_generate_deterministic_bit_identical():
    config = SynthConfig(class_count=3, dim=8, per_class_count=40,
                         contamination_rate=0.1, seed=11)
    a1, _, t1 = generate(config)
    a2, _, t2 = generate(config)
    assert t1 == t2
    assert sorted(a1.entries) == sorted(a2.entries)
    for aid in a1.entries:
        assert a1.entries[aid].vector.tobytes() == a2.entries[aid].vector.tobytes()


def test_generate_index_is_valid_and_writable(tmp_path):
    archive, index, _ = generate(SynthConfig(class_count=2, dim=4,
                                             per_class_count=25, seed=3))
    index.validate()
    assert index.annotation_ids() == set(archive.entries)
    path = tmp_path / "synth.json"
    write_dataset(index, path)
    assert parse_dataset(path) == index


def test_auroc_identical_scores_is_half():
    table = table_from([0.5] * 20)
    truth = truth_from([True] * 5 + [False] * 15)
    assert evaluate_auroc(table, truth) == pytest.approx(0.5)


def test_auroc_perfect_separation():
    table = table_from([0.1] * 10 + [0.9] * 5)
    truth = truth_from([False] * 10 + [True] * 5)
    assert evaluate_auroc(table, truth) == 1.0


def test_auroc_matches_pair_counting_oracle():
    rng = np.random.default_rng(4)
    scores = np.round(rng.random(200), 2)  # rounding forces ties
    flags = rng.random(200) < 0.3
    flags[0], flags[1] = True, False
    got = evaluate_auroc(table_from(scores), truth_from(flags))
    assert got == pytest.approx(pair_count_auroc(scores, flags), abs=1e-12)


def test_auroc_mismatched_ids_raise():
    table = table_from([0.1, 0.9])
    truth = SynthTruth(labels={1: CLEAN, 3: OUTLIER})
    with pytest.raises(ValueError, match="ids differ"):
        evaluate_auroc(table, truth)


def test_auroc_requires_both_classes():
    table = table_from([0.1, 0.9])
    with pytest.raises(ValueError, match="at least one"):
        evaluate_auroc(table, truth_from([False, False]))


def test_recovery_rate_zero_drops_nothing():
    report = recovery_experiment(SynthConfig(class_count=2, dim=4,
                                             per_class_count=30, seed=5))
    assert report.p == 1.0
    assert report.dropped_count == 0
    assert np.isnan(report.auroc)


def test_recovery_indistinguishable_outliers_chance_auroc():
    config = SynthConfig(class_count=2, dim=8, per_class_count=500,
                         contamination_rate=0.05, outlier_shift=0.0, seed=6)
    report = recovery_experiment(config)
    assert abs(report.auroc - 0.5) <= 0.05


def test_recovery_auroc_monotone_in_shift():
    shifts = [0.0, 2.0, 4.0, 6.0]
    means = []
    for shift in shifts:
        aurocs = [recovery_experiment(
            SynthConfig(class_count=2, dim=8, per_class_count=150,
                        contamination_rate=0.08, outlier_shift=shift,
                        seed=seed)).auroc
            for seed in range(20)]
        means.append(float(np.mean(aurocs)))
    assert all(a <= b for a, b in zip(means, means[1:])), means


def test_recovery_zero_contamination_drop_budget():
    # with no outliers, a 95% filter drops exactly floor(0.05 * n) of the
    # clean samples when scores are tie-free
    config = SynthConfig(class_count=1, dim=8, per_class_count=200, seed=8)
    report = recovery_experiment(config, p=0.95)
    assert report.outlier_count == 0
    assert report.dropped_count == 200 - int(np.ceil(0.95 * 200))


def test_recovery_csv(tmp_path):
    config = SynthConfig(class_count=2, dim=4, per_class_count=50,
                         contamination_rate=0.1, seed=9)
    report = recovery_experiment(config)
    path = tmp_path / "recovery.csv"
    write_recovery_csv(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    header = lines[0].split(",")
    row = lines[1].split(",")
    assert len(header) == len(row) == 15
    assert float(row[header.index("auroc")]) == pytest.approx(report.auroc)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(class_count=0, dim=4, per_class_count=10)
    with pytest.raises(ValueError):
        SynthConfig(class_count=1, dim=4, per_class_count=10,
                    contamination_rate=1.0)
    with pytest.raises(ValueError):
        SynthConfig(class_count=1, dim=4, per_class_count=10, seed=-1)
