"""Performance-event encoding and greedy pair-merge vocabulary aggregation.

Single-event ids are laid out as::

    0..127                      NoteOn(pitch)
    128..255                    NoteOff(pitch)
    256..256+B_t-1              TimeShift(1..B_t)
    256+B_t..256+B_t+B_v-1      Velocity(1..B_v)

Multi-event words get ids after that block, in merge order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import IncompatibleVocabulary, TargetTooSmall, UnknownId
from .midi import Piece

VOCAB_FORMAT_VERSION = 1


class EventKind(enum.Enum):
    NOTE_ON = "ON"
    NOTE_OFF = "OFF"
    TIME_SHIFT = "TS"
    VELOCITY = "VEL"


@dataclass(frozen=True)
class PerformanceEvent:
    kind: EventKind
    value: int

    @property
    def code(self) -> str:
        return f"{self.kind.value}_{self.value}"

    @classmethod
    def from_code(cls, code: str) -> "PerformanceEvent":
        prefix, _, value = code.partition("_")
        try:
            return cls(EventKind(prefix), int(value))
        except ValueError:
            raise IncompatibleVocabulary(f"bad event code {code!r}") from None

    def __repr__(self) -> str:
        return self.code


def NoteOn(pitch):  # noqa: N802 - event constructors read like the event names
    return PerformanceEvent(EventKind.NOTE_ON, pitch)


def NoteOff(pitch):  # noqa: N802
    return PerformanceEvent(EventKind.NOTE_OFF, pitch)


def TimeShift(bins):  # noqa: N802
    return PerformanceEvent(EventKind.TIME_SHIFT, bins)


def Velocity(bin_):  # noqa: N802
    return PerformanceEvent(EventKind.VELOCITY, bin_)


@dataclass(frozen=True)
class TokenizerConfig:
    time_shift_bin_ms: int = 10
    max_time_shift_bins: int = 100
    velocity_bins: int = 32

    def __post_init__(self):
        for name in ("time_shift_bin_ms", "max_time_shift_bins", "velocity_bins"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def base_size(self) -> int:
        return 256 + self.max_time_shift_bins + self.velocity_bins

    def quantize_velocity(self, velocity: int) -> int:
        # ceil(v * B_v / 128), so 1..127 lands in 1..B_v
        return max(1, -(-velocity * self.velocity_bins // 128))

    def quantize_time(self, seconds: float) -> int:
        return math.floor(seconds * 1000.0 / self.time_shift_bin_ms + 0.5)

    def event_id(self, event: PerformanceEvent) -> int:
        k, v = event.kind, event.value
        if k is EventKind.NOTE_ON and 0 <= v <= 127:
            return v
        if k is EventKind.NOTE_OFF and 0 <= v <= 127:
            return 128 + v
        if k is EventKind.TIME_SHIFT and 1 <= v <= self.max_time_shift_bins:
            return 256 + v - 1
        if k is EventKind.VELOCITY and 1 <= v <= self.velocity_bins:
            return 256 + self.max_time_shift_bins + v - 1
        raise IncompatibleVocabulary(f"event {event.code} outside configured bins")

    def event_from_id(self, idx: int) -> PerformanceEvent:
        if 0 <= idx < 128:
            return NoteOn(idx)
        if 128 <= idx < 256:
            return NoteOff(idx - 128)
        ts_end = 256 + self.max_time_shift_bins
        if 256 <= idx < ts_end:
            return TimeShift(idx - 255)
        if ts_end <= idx < self.base_size:
            return Velocity(idx - ts_end + 1)
        raise UnknownId(f"{idx} is not a single-event id")

    def to_dict(self) -> dict:
        return {
            "time_shift_bin_ms": self.time_shift_bin_ms,
            "max_time_shift_bins": self.max_time_shift_bins,
            "velocity_bins": self.velocity_bins,
        }


def events_from_notes(piece: Piece, config: TokenizerConfig) -> list[PerformanceEvent]:
    """Encode a piece as a time-ordered performance-event list.

    Times snap to the nearest bin; a note that would quantise to zero length
    is held for one bin. At equal times note-offs precede note-ons.
    """
    timeline = []
    for n in piece.notes:
        on = config.quantize_time(n.onset_seconds)
        off = max(config.quantize_time(n.onset_seconds + n.duration_seconds), on + 1)
        timeline.append((on, 1, n.pitch, config.quantize_velocity(n.velocity)))
        timeline.append((off, 0, n.pitch, 0))
    timeline.sort()

    events: list[PerformanceEvent] = []
    now = 0
    current_vel = None
    for t, is_on, pitch, vel in timeline:
        gap = t - now
        while gap > 0:
            step = min(gap, config.max_time_shift_bins)
            events.append(TimeShift(step))
            gap -= step
        now = t
        if is_on:
            if vel != current_vel:
                events.append(Velocity(vel))
                current_vel = vel
            events.append(NoteOn(pitch))
        else:
            events.append(NoteOff(pitch))
    return events


def encode_events(events: Iterable[PerformanceEvent], config: TokenizerConfig) -> np.ndarray:
    return np.array([config.event_id(e) for e in events], dtype=np.int64)


@dataclass(frozen=True)
class Vocabulary:
    config: TokenizerConfig
    merges: tuple[tuple[int, int], ...] = ()
    max_word_events: int = 0

    def __post_init__(self):
        lengths = [1] * self.config.base_size
        for a, b in self.merges:
            lengths.append(lengths[a] + lengths[b])
        object.__setattr__(self, "_lengths", np.array(lengths, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.config.base_size + len(self.merges)

    def __len__(self) -> int:
        return self.size

    @property
    def word_lengths(self) -> np.ndarray:
        return self._lengths

    def expand_ids(self, idx: int) -> list[int]:
        """Single-event id expansion of any word id."""
        if not 0 <= idx < self.size:
            raise UnknownId(f"token id {idx} not in vocabulary of size {self.size}")
        base = self.config.base_size
        out, stack = [], [idx]
        while stack:
            i = stack.pop()
            if i < base:
                out.append(i)
            else:
                a, b = self.merges[i - base]
                stack.append(b)
                stack.append(a)
        return out

    def word(self, idx: int) -> list[PerformanceEvent]:
        return [self.config.event_from_id(i) for i in self.expand_ids(idx)]

    def to_json(self) -> str:
        doc = {
            "version": VOCAB_FORMAT_VERSION,
            "config": {**self.config.to_dict(), "max_word_events": self.max_word_events},
            "words": [[e.code for e in self.word(i)] for i in range(self.size)],
            "merges": [list(m) for m in self.merges],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        doc = json.loads(text)
        if doc.get("version") != VOCAB_FORMAT_VERSION:
            raise IncompatibleVocabulary(f"unsupported vocabulary version {doc.get('version')!r}")
        cfg = dict(doc["config"])
        max_word_events = int(cfg.pop("max_word_events", 0))
        vocab = cls(TokenizerConfig(**cfg), tuple((int(a), int(b)) for a, b in doc["merges"]),
                    max_word_events)
        words = doc.get("words")
        if words is not None:
            if len(words) != vocab.size:
                raise IncompatibleVocabulary("word list does not match merge rules")
            for i in range(vocab.config.base_size, vocab.size):
                if [e.code for e in vocab.word(i)] != words[i]:
                    raise IncompatibleVocabulary(f"word {i} disagrees with its merge parents")
        return vocab


def _as_id_array(seq, config: TokenizerConfig) -> np.ndarray:
    if isinstance(seq, np.ndarray):
        arr = seq.astype(np.int64, copy=False)
        if arr.size and (arr.min() < 0 or arr.max() >= config.base_size):
            raise IncompatibleVocabulary("single-event id outside configured range")
        return arr
    return encode_events(seq, config)


def _concat(seqs: Sequence[np.ndarray]) -> np.ndarray:
    parts = []
    for s in seqs:
        parts.append(s)
        parts.append(np.array([kernels.SEP], dtype=np.int64))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def build_vocabulary(corpora, config: TokenizerConfig, target_size: int = 2000,
                     max_word_events: int = 8) -> Vocabulary:
    """Grow the vocabulary by repeatedly merging the most frequent adjacent pair.

    ``corpora`` holds event lists or single-event id arrays. Ties go to the
    smaller ``(left, right)``; pairs whose expansion would exceed
    ``max_word_events`` are never merged; growth stops at ``target_size`` or
    when no pair occurs at least twice.
    """
    if target_size < config.base_size:
        raise TargetTooSmall(f"target {target_size} < single-event vocabulary {config.base_size}")
    seq = _concat([_as_id_array(c, config) for c in corpora])
    word_len = np.ones(target_size, dtype=np.int64)
    merges: list[tuple[int, int]] = []
    size = config.base_size
    while size < target_size:
        left, right, count = kernels.best_pair(seq, word_len, max_word_events, target_size)
        if count < 2:
            break
        seq = kernels.merge_pair(seq, left, right, size)
        word_len[size] = word_len[left] + word_len[right]
        merges.append((int(left), int(right)))
        size += 1
    return Vocabulary(config, tuple(merges), max_word_events)


def tokenize(events, vocab: Vocabulary) -> np.ndarray:
    """Replay the merge rules, in order, over the single-event ids."""
    seq = _as_id_array(events, vocab.config)
    base = vocab.config.base_size
    present = set(np.unique(seq).tolist())
    for k, (a, b) in enumerate(vocab.merges):
        if a not in present or b not in present:
            continue
        merged = kernels.merge_pair(seq, a, b, base + k)
        if merged.shape[0] != seq.shape[0]:
            seq = merged
            present.add(base + k)
    return seq


def detokenize(ids, vocab: Vocabulary) -> list[PerformanceEvent]:
    events = []
    for i in ids:
        events.extend(vocab.word(int(i)))
    return events


def tokenize_piece(piece: Piece, vocab: Vocabulary) -> np.ndarray:
    return tokenize(events_from_notes(piece, vocab.config), vocab)


def write_token_lines(path, records) -> None:
    """``records``: iterable of (piece_id, composer_id, ids)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for piece_id, composer_id, ids in records:
            fh.write(json.dumps({"piece_id": piece_id, "composer_id": composer_id,
                                 "ids": [int(i) for i in ids]}, separators=(",", ":")) + "\n")


def read_token_lines(path) -> list[tuple[str, str, np.ndarray]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                out.append((doc["piece_id"], doc.get("composer_id", ""),
                            np.array(doc["ids"], dtype=np.int64)))
    return out
