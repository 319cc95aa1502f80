"""Command line entry point: ``musicsim {tokenize,vocab,embed,pairs,grid,all,fixture}``."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import CONFIG_ENV, load_config
from .errors import MusicSimError

log = logging.getLogger("musicsim")


class _Ctx:
    def __init__(self, config, seed, out, jobs):
        cfg = load_config(config)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        if jobs is not None:
            cfg.jobs = jobs
        if out is not None:
            cfg.out = Path(out)
        self.cfg = cfg

    @property
    def out(self) -> Path:
        return Path(self.cfg.out)


def _fail(exc: Exception) -> None:
    log.error("%s", exc)
    sys.exit(2)


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), envvar=CONFIG_ENV,
              help=f"INI run configuration (default: ${CONFIG_ENV}).")
@click.option("--seed", type=int, help="Global seed; module seeds are derived from it.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--jobs", type=int, help="Worker threads for parsing and embedding.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config, seed, out, jobs, verbose):
    """Embedding calibration grid search for symbolic music similarity."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx.obj = _Ctx(config, seed, out, jobs)
    except MusicSimError as exc:
        _fail(exc)


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except MusicSimError as exc:
        _fail(exc)
    except OSError as exc:
        _fail(exc)


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def tokenize(obj, manifest, vocab):
    """Parse the corpus and write single-event (and optionally merged) tokens."""
    manifest = manifest or obj.cfg.manifest
    if manifest is None:
        _fail(MusicSimError("no manifest given (--manifest or [paths] manifest)"))
    _run(pipeline.cmd_tokenize, manifest, obj.cfg, obj.out, vocab)


@cli.command()
@click.option("--events", type=click.Path(exists=True, dir_okay=False))
@click.option("--target", type=int, help="Target vocabulary size.")
@click.option("--max-word-events", type=int)
@click.pass_obj
def vocab(obj, events, target, max_word_events):
    """Build the aggregated vocabulary from single-event tokens."""
    if target is not None:
        obj.cfg.target_size = target
    if max_word_events is not None:
        obj.cfg.max_word_events = max_word_events
    _run(pipeline.cmd_vocab, events or obj.out / "events.jsonl", obj.cfg, obj.out)


@cli.command()
@click.option("--tokens", type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", type=click.Path(exists=True, dir_okay=False),
              help="MWTS weights file; default is seeded random init.")
@click.pass_obj
def embed(obj, tokens, vocab, weights):
    """Run the model over full-context windows and write activation files."""
    if weights is not None:
        obj.cfg.weights = Path(weights)
    vocab = vocab or (obj.out / "vocab.json" if (obj.out / "vocab.json").is_file() else None)
    _run(pipeline.cmd_embed, tokens or obj.out / "tokens.jsonl", obj.cfg, obj.out, vocab)


@cli.command()
@click.option("--windows", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def pairs(obj, windows):
    """Sample composer-labelled window pairs."""
    _run(pipeline.cmd_pairs, windows or obj.out / "windows.csv", obj.cfg, obj.out)


@cli.command()
@click.option("--windows", type=click.Path(exists=True, dir_okay=False))
@click.option("--pairs", "pairs_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def grid(obj, windows, pairs_path):
    """Score every calibration configuration and write the report."""
    result = _run(pipeline.cmd_grid, windows or obj.out / "windows.csv",
                  pairs_path or obj.out / "pairs.csv", obj.cfg, obj.out)
    search, _ = result
    if search.errors:
        log.error("%d configuration(s) failed", len(search.errors))
        sys.exit(1)


@cli.command(name="all")
@click.pass_obj
def all_(obj):
    """Run tokenize, vocab, embed, pairs and grid in sequence."""
    search, manifest = _run(pipeline.cmd_all, obj.cfg, obj.out)
    log.info("artifact manifest: %s", manifest)
    if search.errors:
        log.error("%d configuration(s) failed", len(search.errors))
        sys.exit(1)


@cli.command()
@click.argument("dest", type=click.Path(file_okay=False))
def fixture(dest):
    """Copy the bundled 4-composer fixture corpus and config to DEST."""
    from .fixtures import copy_fixture

    path = copy_fixture(dest)
    click.echo(str(path))


def main():
    cli()


if __name__ == "__main__":
    main()
