"""Bundled 4-composer fixture corpus (note-text files plus a few SMF files)."""

from __future__ import annotations

import shutil
from pathlib import Path

from ..midi import CorpusManifest, ManifestEntry, format_note_text, write_smf
from ..synthetic import synthetic_note_pieces

FIXTURE_DIR = Path(__file__).parent
FIXTURE_SEED = 2022

FIXTURE_INI = """\
[paths]
manifest = corpus/manifest.csv
out = out

[tokenizer]
target_size = 600
max_word_events = 8

[model]
layers = 12
context = 32
hidden = 32
heads = 4
weights = random
seed = 7

[sampler]
positives = 300
negatives = 300
seed = 11

[run]
jobs = 1
"""


def write_fixture(dest) -> Path:
    """Regenerate the fixture deterministically under ``dest``; returns the
    config path. The last composer's pieces are written as SMF."""
    dest = Path(dest)
    corpus = dest / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    entries = []
    for piece in synthetic_note_pieces(seed=FIXTURE_SEED):
        if piece.composer_id == "composer3":
            path = corpus / f"{piece.piece_id}.mid"
            path.write_bytes(write_smf(piece.notes))
        else:
            path = corpus / f"{piece.piece_id}.txt"
            path.write_text(format_note_text(piece.notes), encoding="utf-8")
        entries.append(ManifestEntry(path, piece.piece_id, piece.composer_id))
    CorpusManifest(tuple(entries)).write(corpus / "manifest.csv", relative_to=corpus)
    ini = dest / "fixture.ini"
    ini.write_text(FIXTURE_INI, encoding="utf-8")
    return ini


def copy_fixture(dest) -> Path:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    shutil.copytree(FIXTURE_DIR / "corpus", dest / "corpus", dirs_exist_ok=True)
    shutil.copy(FIXTURE_DIR / "fixture.ini", dest / "fixture.ini")
    return dest / "fixture.ini"
