"""Command line for exporting vision-encoder feature maps."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .encoders import make_encoder
from .extract import (ExtractJob, images_from_annotations, images_from_directory,
                      run_extract)


@click.command()
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False),
              help="COCO-style file supplying image ids and file names.")
@click.option("--image-root", type=click.Path(exists=True, file_okay=False),
              help="Directory the annotation file names are relative to.")
@click.option("--images", "images_dir", type=click.Path(exists=True, file_okay=False),
              help="Alternatively: a directory of images named <image_id>.<ext>.")
@click.option("--encoder", "encoder_name", type=click.Choice(["sam-hf", "stub"]),
              default="sam-hf", show_default=True)
@click.option("--checkpoint", help="Local SAM checkpoint path (sam-hf encoder).")
@click.option("--layer", type=click.Choice(["neck", "trunk"]), default="neck",
              show_default=True, help="Which encoder feature map to export.")
@click.option("--resolution", default=1024, show_default=True, type=int)
@click.option("--dim", default=256, show_default=True, type=int,
              help="Channel count of the stub encoder.")
@click.option("--seed", default=0, show_default=True, type=int,
              help="Seed of the stub encoder projection.")
@click.option("--batch-size", default=4, show_default=True, type=int)
@click.option("--device", default="cpu", show_default=True)
@click.option("--full-grid", is_flag=True,
              help="Keep padding cells so every grid has the same shape.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("-v", "--verbose", count=True)
def cli(annotations, image_root, images_dir, encoder_name, checkpoint, layer,
        resolution, dim, seed, batch_size, device, full_grid, out_dir, verbose):
    """Write one UQFM0001 feature-map file per image, resumably."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if batch_size < 1:
        raise click.UsageError(f"--batch-size must be >= 1, got {batch_size}")
    if resolution < 16:
        raise click.UsageError(f"--resolution must be >= 16, got {resolution}")
    if annotations:
        if not image_root:
            raise click.UsageError("--annotations needs --image-root")
        pairs = images_from_annotations(annotations, image_root)
    elif images_dir:
        pairs = images_from_directory(images_dir)
    else:
        raise click.UsageError("supply --annotations with --image-root, or --images")
    try:
        encoder = make_encoder(encoder_name, checkpoint=checkpoint, layer=layer,
                               resolution=resolution, dim=dim, seed=seed,
                               device=device)
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    job = ExtractJob(images=pairs, output_dir=Path(out_dir), resolution=resolution,
                     batch_size=batch_size, full_grid=full_grid)
    summary = run_extract(job, encoder)
    click.echo(f"written {summary.written}, skipped {summary.skipped_existing} "
               f"existing, failed {len(summary.failed)} -> {out_dir}")
    for line in summary.failed:
        click.echo(f"failed: {line}", err=True)
    if not summary.ok:
        raise SystemExit(2)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


def entrypoint() -> None:
    sys.exit(main())
