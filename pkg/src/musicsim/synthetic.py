"""Synthetic corpora with planted composer structure.

:func:`planted_activations` builds layer activations directly (no model):
every window embedding is

    shared offset + composer mean + piece effect + nuisance + noise

where composer means sit in a quiet half of the dimensions at a fixed pairwise
distance, the other half carries loud isotropic noise, and one loud axis holds
a shared nuisance with ``nuisance_ratio`` times the loudest noise variance.
Raw cosine is swamped by the offset, the nuisance and the loud half; per-
dimension normalisation equalises the halves, removing the top principal
direction drops the nuisance.

:func:`synthetic_note_pieces` writes note lists whose pitch register, rhythm
and dynamics depend on the composer, for end-to-end runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import ActivationSet
from .midi import Note, Piece
from .pairs import Window, WindowRef
from .rng import SplitMix64


@dataclass
class PlantedCorpus:
    acts: ActivationSet
    windows: list[Window]
    composer_means: np.ndarray


def _equidistant_means(count: int, dims: int, separation: float, rng: SplitMix64) -> np.ndarray:
    # orthonormal directions scaled so every pair sits `separation` apart
    g = rng.normal_block(count * dims).reshape(dims, count)
    q, _ = np.linalg.qr(g)
    return (separation / np.sqrt(2.0)) * q[:, :count].T


def planted_activations(composers: int = 4, pieces_per_composer: int = 10,
                        windows_per_piece: int = 5, layers: int = 12, seq_len: int = 16,
                        hidden: int = 64, separation: float = 1.0,
                        nuisance_ratio: float = 10.0, quiet_std: float = 0.05,
                        loud_std: float = 0.5, token_std: float = 0.1, offset: float = 3.0,
                        piece_std: float = 0.02, seed: int = 0) -> PlantedCorpus:
    rng = SplitMix64(seed)
    half = hidden // 2
    means = np.zeros((composers, hidden))
    means[:, half:] = _equidistant_means(composers, hidden - half, separation, rng)
    noise_std = np.full(hidden, quiet_std)
    noise_std[:half] = loud_std
    nuisance_std = np.sqrt(nuisance_ratio) * noise_std.max()
    shared = np.full(hidden, offset)

    keys, windows, blocks = [], [], []
    for c in range(composers):
        for p in range(pieces_per_composer):
            piece_id = f"c{c}_p{p:02d}"
            piece_effect = piece_std * rng.normal_block(hidden)
            for w in range(windows_per_piece):
                z = shared + means[c] + piece_effect + noise_std * rng.normal_block(hidden)
                z[0] += nuisance_std * rng.normal_block(1)[0]
                tokens = token_std * rng.normal_block(layers * seq_len * hidden)
                h = z[None, None, :] + tokens.reshape(layers, seq_len, hidden)
                keys.append(WindowRef(piece_id, w))
                windows.append(Window(piece_id, f"composer{c}", w, w * seq_len // 2,
                                      np.zeros(seq_len, dtype=np.int64)))
                blocks.append(h.astype(np.float32))
    return PlantedCorpus(ActivationSet(keys, np.stack(blocks)), windows, means)


_STYLES = (
    # (low pitch, high pitch, step seconds, note length factor, velocity)
    (36, 60, 0.40, 0.90, 50),
    (55, 79, 0.20, 0.50, 80),
    (60, 96, 0.12, 0.95, 100),
    (40, 84, 0.30, 0.30, 30),
)


def synthetic_note_pieces(composers: int = 4, pieces_per_composer: int = 3,
                          notes_per_piece: int = 120, seed: int = 0) -> list[Piece]:
    rng = SplitMix64(seed)
    out = []
    for c in range(composers):
        lo, hi, step, length, vel = _STYLES[c % len(_STYLES)]
        for p in range(pieces_per_composer):
            t = 0.0
            pitch = (lo + hi) // 2
            notes = []
            for _ in range(notes_per_piece):
                pitch = min(hi, max(lo, pitch + rng.randbelow(9) - 4))
                dt = step * (1 + rng.randbelow(3)) / 2
                v = min(127, max(1, vel + rng.randbelow(21) - 10))
                notes.append(Note(round(t, 3), round(max(0.01, dt * length), 3), pitch, v))
                t += dt
            out.append(Piece(tuple(notes), f"comp{c}_piece{p}", f"composer{c}"))
    return out
