"""`export-embeddings`: the sidecar's single command."""
from __future__ import annotations

import logging

import click

from .encoders import DEFAULT_MODEL, EncoderLoadError
from .export import SidecarConfig, export_real_embeddings


@click.command(name="export-embeddings")
@click.option("--posts", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Input posts.jsonl corpus.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output embedding container path.")
@click.option("--model", default=DEFAULT_MODEL, show_default=True,
              help="Encoder model identifier (or hash:<dim> for the offline stand-in).")
@click.option("--batch", default=64, show_default=True, help="Encoding batch size.")
@click.option("--device", default="cpu", show_default=True,
              help="Inference device for real encoders.")
@click.option("-v", "--verbose", is_flag=True, help="Log per-batch progress.")
@click.help_option("-h", "--help")
def main(posts: str, out_path: str, model: str, batch: int, device: str,
         verbose: bool) -> None:
    """Embed every post of a corpus into the consuming toolkit's format."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = SidecarConfig(posts=posts, out=out_path, model=model,
                               batch=batch, device=device)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    try:
        summary = export_real_embeddings(config)
    except EncoderLoadError as exc:
        raise click.ClickException(str(exc)) from exc  # message carries the model id
    except (ValueError, RuntimeError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{summary.path}: {summary.count} vectors, dim {summary.dim} "
               f"({summary.model})")


if __name__ == "__main__":
    main()
