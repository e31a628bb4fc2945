"""Operator commands: serve the protocol, dump shards, probe models."""

from __future__ import annotations

import sys

import click

from extractor.models import ModelBundle, ServerConfig


def _load_config(path: str | None) -> ServerConfig:
    if path is None:
        return ServerConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return ServerConfig.from_json(fh.read())


@click.group()
def cli() -> None:
    """Frozen-encoder model server and shard dumper."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(config_path):
    """Answer protocol requests on stdin/stdout until end of input."""
    from extractor import server

    raise SystemExit(server.main(["--config", config_path] if config_path else []))


@cli.command()
@click.option("--manifest", required=True, type=click.Path(exists=True),
              help="UTF-8 lines of 'path-or-url<TAB>caption'")
@click.option("--out", required=True, type=click.Path(), help="output directory")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--max-tokens", type=int, default=None, help="truncate captions")
def dump(manifest, out, config_path, max_tokens):
    """Extract manifest pairs into an HDSH shard for offline learning."""
    from extractor.shards import dump_shards

    bundle = ModelBundle(_load_config(config_path))
    summary = dump_shards(manifest, bundle, out, max_tokens=max_tokens)
    click.echo(f"wrote {summary.records} records ({summary.skipped} skipped) "
               f"to {summary.shard_path}; meta at {summary.meta_path}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def probe(config_path):
    """Load the models and print the dims HELLO would advertise."""
    bundle = ModelBundle(_load_config(config_path))
    click.echo(f"n_p={bundle.n_p} d_I={bundle.d_i} d_C={bundle.d_c} "
               f"vocab={bundle.vocab_size} pooled={bundle.pooled_dims}")
    click.echo(f"weights sha256: {bundle.weights_checksum()}")


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
