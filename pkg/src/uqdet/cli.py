"""Command-line pipeline: pool, score, filter, report, synth, loss-eval.

Exit codes are stable for scripting: 0 success, 1 usage, 2 data or
format problem, 3 numerical failure. All outputs are deterministic, so
rerunning a subcommand with identical inputs and flags reproduces every
output file byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .dataset import parse_dataset, write_dataset
from .errors import (CorruptionError, DatasetParseError, DegenerateRegionError,
                     DimensionError, FormatError, IntegrityError,
                     MissingFeatureMapsError, SingularModelError,
                     UnknownCategoryError)
from .features import (DirectoryMapSource, PoolMode, build_archive,
                       read_archive, write_archive)
from .filtering import (STRATEGY_NOISE_GLOBAL, STRATEGY_NOISE_PER_CLASS,
                        STRATEGY_REDUNDANCY, apply_filter, filter_noise_global,
                        filter_noise_per_class, filter_redundant,
                        write_filter_result)
from .gaussian import fit_density_model, load_model, model_checksum, save_model
from .losses import (LossBatch, SIGN_LITERAL, SIGN_MAX_ENTROPY,
                     constant_entropy_loss, focal_loss, loss_gradient,
                     mean_bce, ua_entropy_loss)
from .scoring import (histogram, read_scores, score_dataset, write_histogram_csv,
                      write_histogram_svg, write_scores)
from .synth import SynthConfig, recovery_experiment, write_recovery_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (DatasetParseError, IntegrityError, FormatError, CorruptionError,
                DegenerateRegionError, MissingFeatureMapsError, DimensionError,
                OSError)
_NUMERIC_ERRORS = (SingularModelError, UnknownCategoryError)

_STRATEGIES = {
    "noise-global": STRATEGY_NOISE_GLOBAL,
    "noise-class": STRATEGY_NOISE_PER_CLASS,
    "redundancy": STRATEGY_REDUNDANCY,
}


def _load_config(ctx, param, value):
    if value is None:
        return None
    with open(value, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file {value}: {exc}") from exc
    if not isinstance(data, dict):
        raise click.UsageError(f"config file {value}: top level must be an object")
    ctx.default_map = data
    return value


def _parse_eps(value: str):
    if value == "auto":
        return "auto"
    try:
        eps = float(value)
    except ValueError:
        raise click.UsageError(f"--eps must be 'auto' or a float, got {value!r}")
    if eps < 0:
        raise click.UsageError(f"--eps must be >= 0, got {eps}")
    return eps


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              is_eager=True, callback=_load_config, expose_value=False,
              help="JSON file holding per-subcommand flag defaults; "
                   "explicit flags win.")
@click.option("-v", "--verbose", count=True, help="-v info, -vv debug.")
def cli(verbose: int):
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--features-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--pool", "pool_mode", type=click.Choice(["box", "mask"]), default="box",
              show_default=True)
@click.option("--include-crowd", is_flag=True, help="Pool crowd annotations too.")
@click.option("--skip-missing", is_flag=True,
              help="Skip images without a feature map instead of aborting.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def pool(annotations, features_dir, pool_mode, include_crowd, skip_missing, out):
    """Pool one feature vector per annotated object into an archive."""
    index = parse_dataset(annotations)
    source = DirectoryMapSource(features_dir)
    mode = PoolMode.BOX_MEAN if pool_mode == "box" else PoolMode.MASK_MEAN
    archive, report = build_archive(index, source, mode,
                                    include_crowd=include_crowd,
                                    skip_missing=skip_missing)
    write_archive(archive, out)
    click.echo(f"pooled {report.pooled} objects (dim {archive.dim}) -> {out}")
    click.echo(f"skipped: {report.skipped_crowd} crowd, "
               f"{report.skipped_zero_area} zero-area, "
               f"{len(report.missing_image_ids)} images without maps")
    if report.box_fallbacks:
        click.echo(f"mask mode fell back to boxes for {report.box_fallbacks} objects")
    for cid in sorted(report.per_category):
        click.echo(f"  category {cid}: {report.per_category[cid]}")


@cli.command()
@click.option("--archive", "archive_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False),
              help="Optional; used to warn about categories with no features.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Reuse an existing model file instead of fitting.")
@click.option("--eps", default="auto", show_default=True,
              help="Covariance ridge; 'auto' or a float >= 0.")
@click.option("--bins", default=20, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def score(archive_path, annotations, model_path, eps, bins, out_dir):
    """Fit the density model, score every object, and write reports."""
    if bins < 1:
        raise click.UsageError(f"--bins must be >= 1, got {bins}")
    eps = _parse_eps(eps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    archive = read_archive(archive_path)
    if model_path:
        model = load_model(model_path)
    else:
        categories = parse_dataset(annotations).categories if annotations else None
        model = fit_density_model(archive, eps=eps, categories=categories)
    save_model(model, out / "model.uqgm")
    table = score_dataset(model, archive)
    write_scores(table, out / "scores.tsv")
    for scope, stem in (("global", "hist_global"), ("per-class", "hist_by_class")):
        report = histogram(table, bins, scope=scope)
        write_histogram_csv(report, out / f"{stem}.csv")
        write_histogram_svg(report, out / f"{stem}.svg")
    click.echo(f"scored {len(table)} objects over {model.classes_.size} categories "
               f"(model {model_checksum(model)}, eps {model.eps_:g}) -> {out}")


@cli.command(name="filter")
@click.option("--scores", "scores_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", required=True, type=click.Choice(sorted(_STRATEGIES)))
@click.option("--p", required=True, type=float,
              help="Quantile to keep (noise) or fraction to drop per bin (redundancy).")
@click.option("--bins", default=10, show_default=True, type=int,
              help="Bin count for the redundancy strategy.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--remove-empty-images", is_flag=True)
@click.option("--keep-unscored", is_flag=True,
              help="Retain annotations that never entered scoring (crowd, zero-area).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def filter_cmd(scores_path, annotations, strategy, p, bins, seed,
               remove_empty_images, keep_unscored, out_dir):
    """Apply a filter to the scores and emit the filtered annotation file."""
    strategy = _STRATEGIES[strategy]
    if strategy == STRATEGY_REDUNDANCY:
        if not 0.0 <= p < 1.0:
            raise click.UsageError(f"--p must lie in [0, 1) for redundancy, got {p}")
        if bins < 1:
            raise click.UsageError(f"--bins must be >= 1, got {bins}")
        if seed < 0:
            raise click.UsageError(f"--seed must be >= 0, got {seed}")
    else:
        if not 0.0 < p <= 1.0:
            raise click.UsageError(f"--p must lie in (0, 1] for noise filters, got {p}")
    table = read_scores(scores_path)
    index = parse_dataset(annotations)
    if strategy == STRATEGY_NOISE_GLOBAL:
        result = filter_noise_global(table, p)
    elif strategy == STRATEGY_NOISE_PER_CLASS:
        result = filter_noise_per_class(table, p)
    else:
        result = filter_redundant(table, bins, p, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_filter_result(result, out / "filter.txt")
    filtered = apply_filter(index, result, remove_empty_images=remove_empty_images,
                            keep_unscored=keep_unscored)
    write_dataset(filtered, out / "annotations_filtered.json")
    click.echo(f"{result.strategy}: kept {len(result.kept)}, "
               f"dropped {len(result.dropped)} -> {out}")
    if result.threshold is not None:
        click.echo(f"threshold: {result.threshold!r}")
    for note in result.notes:
        click.echo(f"note: {note}")


@cli.command()
@click.option("--scores", "scores_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", default=20, show_default=True, type=int)
@click.option("--scope", type=click.Choice(["global", "per-class", "both"]),
              default="both", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def report(scores_path, bins, scope, out_dir):
    """Write histogram CSV and SVG reports for an existing score file."""
    if bins < 1:
        raise click.UsageError(f"--bins must be >= 1, got {bins}")
    table = read_scores(scores_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scopes = [("global", "hist_global"), ("per-class", "hist_by_class")]
    if scope != "both":
        scopes = [(s, n) for s, n in scopes if s == scope]
    for scope_name, stem in scopes:
        rep = histogram(table, bins, scope=scope_name)
        write_histogram_csv(rep, out / f"{stem}.csv")
        write_histogram_svg(rep, out / f"{stem}.svg")
    click.echo(f"reported {len(table)} scores -> {out}")


@cli.command()
@click.option("--classes", "class_count", default=4, show_default=True, type=int)
@click.option("--dim", default=16, show_default=True, type=int)
@click.option("--per-class", "per_class_count", default=2000, show_default=True, type=int)
@click.option("--separation", default=10.0, show_default=True, type=float)
@click.option("--rate", default=0.05, show_default=True, type=float)
@click.option("--shift", default=6.0, show_default=True, type=float)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--p", type=float, default=None,
              help="Noise-filter quantile; defaults to 1 - rate.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def synth(class_count, dim, per_class_count, separation, rate, shift, seed, p, out_dir):
    """Run the synthetic recovery experiment and write its CSV report."""
    try:
        config = SynthConfig(class_count=class_count, dim=dim,
                             per_class_count=per_class_count,
                             mean_separation=separation, contamination_rate=rate,
                             outlier_shift=shift, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    if p is not None and not 0.0 < p <= 1.0:
        raise click.UsageError(f"--p must lie in (0, 1], got {p}")
    rep = recovery_experiment(config, p)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_recovery_csv(rep, out / "recovery.csv")
    click.echo(f"auroc={rep.auroc!r} dropped={rep.dropped_count} "
               f"outliers_dropped={rep.outliers_dropped}/{rep.outlier_count} "
               f"-> {out / 'recovery.csv'}")


@cli.command(name="loss-eval")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV of prob,target,score rows (header optional).")
@click.option("--beta", default=0.2, show_default=True, type=float)
@click.option("--gamma", default=2.0, show_default=True, type=float)
@click.option("--mode", type=click.Choice(["literal", "max-entropy"]),
              default="literal", show_default=True)
def loss_eval(input_path, beta, gamma, mode):
    """Evaluate the loss family on a CSV batch and print comparable numbers."""
    if beta < 0:
        raise click.UsageError(f"--beta must be >= 0, got {beta}")
    if gamma < 0:
        raise click.UsageError(f"--gamma must be >= 0, got {gamma}")
    probs, targets, scores = [], [], []
    with open(input_path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and not _is_float(row[0])):
                continue
            if len(row) != 3:
                raise FormatError(f"{input_path}: line {lineno}: expected 3 columns")
            try:
                probs.append(float(row[0]))
                targets.append(float(row[1]))
                scores.append(float(row[2]))
            except ValueError as exc:
                raise FormatError(f"{input_path}: line {lineno}: {exc}") from exc
    if not probs:
        raise FormatError(f"{input_path}: no data rows")
    sign_mode = SIGN_LITERAL if mode == "literal" else SIGN_MAX_ENTROPY
    try:
        batch = LossBatch(probs=np.array(probs), targets=np.array(targets),
                          scores=np.array(scores), beta=beta, sign_mode=sign_mode)
    except ValueError as exc:
        raise FormatError(f"{input_path}: {exc}") from exc
    grad = loss_gradient(batch)
    click.echo(f"n={len(batch)}")
    click.echo(f"mean_bce={mean_bce(batch.probs, batch.targets)!r}")
    click.echo(f"ua_entropy_loss={ua_entropy_loss(batch)!r}")
    click.echo(f"constant_entropy_loss="
               f"{constant_entropy_loss(batch.probs, batch.targets, beta, sign_mode)!r}")
    click.echo(f"focal_loss={focal_loss(batch.probs, batch.targets, gamma)!r}")
    click.echo(f"gradient_mean={float(grad.mean())!r}")
    click.echo(f"gradient_min={float(grad.min())!r}")
    click.echo(f"gradient_max={float(grad.max())!r}")


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def main(argv: list[str] | None = None) -> int:
    """Run the CLI and map exceptions onto the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())
