"""Pipeline steps behind the CLI. Each step reads files, writes files and
returns the paths it wrote; none of them touches its inputs."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, InsufficientPairs, ShapeMismatch
from .evaluation import ActivationSet, GridSearch, emit_report, grid_search, require_pairs
from .midi import CorpusManifest, load_corpus
from .model import (
    ModelWeights,
    activation_filename,
    forward,
    random_weights,
    read_activations,
    write_activations,
)
from .pairs import Window, WindowRef, make_windows, read_pairs, sample_pairs, write_pairs
from .tokenizer import (
    Vocabulary,
    build_vocabulary,
    encode_events,
    events_from_notes,
    read_token_lines,
    tokenize,
    write_token_lines,
)

log = logging.getLogger(__name__)

WINDOWS_HEADER = ("piece_id", "composer_id", "window_index", "offset", "file")


def cmd_tokenize(manifest_path, cfg: RunConfig, out: Path, vocab_path=None) -> list[Path]:
    """Manifest -> ``events.jsonl`` (single-event ids); with a vocabulary also
    ``tokens.jsonl``."""
    out.mkdir(parents=True, exist_ok=True)
    pieces = load_corpus(CorpusManifest.read(manifest_path), jobs=cfg.jobs)
    for p in pieces:
        for w in p.warnings:
            log.warning("%s: %s", p.piece_id, w)
    records = [(p.piece_id, p.composer_id, encode_events(events_from_notes(p, cfg.tokenizer),
                                                         cfg.tokenizer)) for p in pieces]
    written = [out / "events.jsonl"]
    write_token_lines(written[0], records)
    if vocab_path is not None:
        vocab = Vocabulary.from_json(Path(vocab_path).read_text(encoding="utf-8"))
        if vocab.config != cfg.tokenizer:
            log.info("using tokenizer settings from %s", vocab_path)
        written.append(out / "tokens.jsonl")
        write_token_lines(written[1], [(pid, cid, tokenize(ids, vocab))
                                       for pid, cid, ids in records])
    log.info("tokenized %d pieces", len(records))
    return written


def cmd_vocab(events_path, cfg: RunConfig, out: Path) -> list[Path]:
    """``events.jsonl`` -> ``vocab.json`` and the merged ``tokens.jsonl``."""
    out.mkdir(parents=True, exist_ok=True)
    records = read_token_lines(events_path)
    vocab = build_vocabulary([ids for _, _, ids in records], cfg.tokenizer, cfg.target_size,
                             cfg.max_word_events)
    vpath = out / "vocab.json"
    vpath.write_text(vocab.to_json(), encoding="utf-8")
    tpath = out / "tokens.jsonl"
    write_token_lines(tpath, [(pid, cid, tokenize(ids, vocab)) for pid, cid, ids in records])
    log.info("vocabulary: %d words (%d merges)", vocab.size, len(vocab.merges))
    return [vpath, tpath]


def _weights(cfg: RunConfig, vocab_size: int) -> ModelWeights:
    if cfg.weights is not None:
        w = ModelWeights.load(cfg.weights)
        if w.shape.vocab < vocab_size:
            raise ShapeMismatch(f"weights cover {w.shape.vocab} ids, vocabulary has {vocab_size}")
        return w
    shape = cfg.shape
    if shape.vocab < vocab_size:
        from dataclasses import replace

        shape = replace(shape, vocab=vocab_size)
    return random_weights(shape, cfg.model_seed)


def cmd_embed(tokens_path, cfg: RunConfig, out: Path, vocab_path=None) -> list[Path]:
    """Tokens -> full-context windows -> one ``.mact`` per window plus
    ``windows.csv``."""
    records = read_token_lines(tokens_path)
    vocab_size = cfg.shape.vocab
    if vocab_path is not None:
        vocab_size = Vocabulary.from_json(Path(vocab_path).read_text(encoding="utf-8")).size
    weights = _weights(cfg, vocab_size)
    W = weights.shape.context
    sampler = cfg.sampler()
    windows = make_windows(records, W, sampler.stride if cfg.stride is None else cfg.stride)
    act_dir = out / "activations"
    act_dir.mkdir(parents=True, exist_ok=True)

    def run(win: Window) -> Path:
        acts = forward(win.ids, weights, cfg.final_norm_last)
        path = act_dir / activation_filename(win.piece_id, win.window_index)
        write_activations(acts, path)
        return path

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            paths = list(pool.map(run, windows))
    else:
        paths = [run(w) for w in windows]
    index = out / "windows.csv"
    with open(index, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(WINDOWS_HEADER)
        for win, p in zip(windows, paths):
            wr.writerow([win.piece_id, win.composer_id, win.window_index, win.offset,
                         p.relative_to(out).as_posix()])
    log.info("embedded %d windows of %d tokens", len(windows), W)
    return [index, *paths]


def read_windows(index_path) -> tuple[list[Window], list[Path]]:
    index_path = Path(index_path)
    with open(index_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != WINDOWS_HEADER:
        raise ConfigError(f"{index_path}: header must be {','.join(WINDOWS_HEADER)}")
    wins, files = [], []
    for r in rows[1:]:
        if r:
            wins.append(Window(r[0], r[1], int(r[2]), int(r[3]), np.zeros(0, dtype=np.int64)))
            files.append(index_path.parent / r[4])
    return wins, files


def cmd_pairs(windows_path, cfg: RunConfig, out: Path) -> list[Path]:
    windows, _ = read_windows(windows_path)
    sampler = cfg.sampler()
    pairs = sample_pairs(windows, sampler)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "pairs.csv"
    write_pairs(path, pairs, sampler)
    log.info("sampled %d positive and %d negative pairs", sampler.positives, sampler.negatives)
    return [path, path.with_suffix(".json")]


def load_activation_set(windows_path) -> ActivationSet:
    windows, files = read_windows(windows_path)
    return ActivationSet.from_list((w.ref, read_activations(f)) for w, f in zip(windows, files))


def cmd_grid(windows_path, pairs_path, cfg: RunConfig, out: Path) -> tuple[GridSearch, list[Path]]:
    pairs = read_pairs(pairs_path)
    if not pairs:
        raise InsufficientPairs(f"{pairs_path}: no pairs")
    require_pairs(pairs)
    acts = load_activation_set(windows_path)
    search = grid_search(acts, pairs, cfg.grid_spec(), jobs=cfg.jobs)
    written = emit_report(search, out / "report", svg=cfg.svg)
    if search.best is not None:
        b = search.best
        log.info("best: %s rho=%.6f p=%.3g", b.config.to_dict(), b.rho, b.p_value)
    return search, written


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_artifact_manifest(out: Path, paths) -> Path:
    entries = {Path(p).relative_to(out).as_posix(): sha256_file(p) for p in paths}
    path = out / "artifacts.json"
    path.write_text(json.dumps({"artifacts": dict(sorted(entries.items()))}, indent=1) + "\n",
                    encoding="utf-8")
    return path


def cmd_all(cfg: RunConfig, out: Path | None = None) -> tuple[GridSearch, Path]:
    out = Path(out or cfg.out)
    if cfg.manifest is None:
        raise ConfigError("no corpus manifest configured ([paths] manifest)")
    cfg.validate()
    written = []
    written += cmd_tokenize(cfg.manifest, cfg, out)
    written += cmd_vocab(out / "events.jsonl", cfg, out)
    written += cmd_embed(out / "tokens.jsonl", cfg, out, vocab_path=out / "vocab.json")
    written += cmd_pairs(out / "windows.csv", cfg, out)
    search, report = cmd_grid(out / "windows.csv", out / "pairs.csv", cfg, out)
    written += report
    return search, write_artifact_manifest(out, written)
