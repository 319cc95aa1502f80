"""Performance data ingest: Standard MIDI Files, a plain-text note list, and
CSV corpus manifests.

Only note-on/off and set-tempo events are interpreted; every other event is
skipped. Same-pitch overlaps on one channel are matched first-in first-out and
a note-on with velocity 0 closes a note.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .errors import (
    BadField,
    MalformedHeader,
    ManifestError,
    PieceLoadError,
    TruncatedChunk,
    UnsupportedDivision,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPO = 500_000  # microseconds per quarter note
MANIFEST_HEADER = ("path", "piece_id", "composer_id")
MANIFEST_VERSION = 1


@dataclass(frozen=True, order=True)
class Note:
    onset_seconds: float
    duration_seconds: float
    pitch: int
    velocity: int

    def __post_init__(self):
        if not self.onset_seconds >= 0:
            raise ValueError(f"onset must be >= 0, got {self.onset_seconds}")
        if not self.duration_seconds > 0:
            raise ValueError(f"duration must be > 0, got {self.duration_seconds}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of range: {self.pitch}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity out of range: {self.velocity}")

    @property
    def offset_seconds(self) -> float:
        return self.onset_seconds + self.duration_seconds


def _sort_notes(notes) -> tuple[Note, ...]:
    return tuple(sorted(notes, key=lambda n: (n.onset_seconds, n.pitch, n.duration_seconds, n.velocity)))


@dataclass(frozen=True)
class Piece:
    notes: tuple[Note, ...] = ()
    piece_id: str = ""
    composer_id: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def with_metadata(self, piece_id: str, composer_id: str) -> "Piece":
        if not composer_id:
            raise ManifestError(f"piece {piece_id!r}: empty composer_id")
        return replace(self, piece_id=piece_id, composer_id=composer_id)


# ---------------------------------------------------------------------------
# Standard MIDI File reading


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise TruncatedChunk("variable-length quantity runs past end of track")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise TruncatedChunk("variable-length quantity longer than 4 bytes")


def _channel_data_len(status: int) -> int:
    return 1 if 0xC0 <= status <= 0xDF else 2


def _iter_chunks(data: bytes, start: int):
    pos = start
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedChunk(f"chunk header at byte {pos} is cut short")
        kind = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = pos + 8
        if body + length > len(data):
            raise TruncatedChunk(f"chunk {kind!r} at byte {pos} declares {length} bytes, "
                                 f"{len(data) - body} available")
        yield kind, body, body + length
        pos = body + length


def _parse_track(data: bytes, pos: int, end: int):
    """Yield (tick, kind, a, b) with kind in {'on', 'off', 'tempo'}."""
    tick = 0
    running = None
    while pos < end:
        delta, pos = _read_varlen(data, pos, end)
        tick += delta
        if pos >= end:
            raise TruncatedChunk("event status missing at end of track")
        status = data[pos]
        if status == 0xFF:
            if pos + 2 > end:
                raise TruncatedChunk("meta event cut short")
            meta_type = data[pos + 1]
            length, pos = _read_varlen(data, pos + 2, end)
            if pos + length > end:
                raise TruncatedChunk("meta event payload runs past end of track")
            payload = data[pos:pos + length]
            pos += length
            if meta_type == 0x51 and length == 3:
                yield tick, "tempo", int.from_bytes(payload, "big"), 0
            elif meta_type == 0x2F:
                return
            continue
        if status in (0xF0, 0xF7):
            length, pos = _read_varlen(data, pos + 1, end)
            if pos + length > end:
                raise TruncatedChunk("sysex payload runs past end of track")
            pos += length
            running = None
            continue
        if status & 0x80:
            running = status
            pos += 1
        elif running is None:
            raise TruncatedChunk(f"data byte 0x{status:02X} without running status")
        need = _channel_data_len(running)
        if pos + need > end:
            raise TruncatedChunk("channel message cut short")
        a = data[pos]
        b = data[pos + 1] if need == 2 else 0
        pos += need
        kind = running & 0xF0
        chan = running & 0x0F
        if kind == 0x90 and b > 0:
            yield tick, "on", (chan, a), b
        elif kind == 0x80 or kind == 0x90:
            yield tick, "off", (chan, a), 0


class _TempoMap:
    def __init__(self, changes: list[tuple[int, int]], division: int):
        self.division = division
        points = [(0, DEFAULT_TEMPO)]
        for tick, tempo in sorted(changes, key=lambda c: c[0]):
            if tick == points[-1][0]:
                points[-1] = (tick, tempo)
            else:
                points.append((tick, tempo))
        self.ticks = [p[0] for p in points]
        self.tempos = [p[1] for p in points]
        # accumulated tick*tempo products at each change point, kept exact
        self.acc = [0]
        for i in range(1, len(points)):
            span = self.ticks[i] - self.ticks[i - 1]
            self.acc.append(self.acc[-1] + span * self.tempos[i - 1])

    def seconds(self, tick: int) -> Fraction:
        lo, hi = 0, len(self.ticks) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.ticks[mid] <= tick:
                lo = mid
            else:
                hi = mid - 1
        micro_ticks = self.acc[lo] + (tick - self.ticks[lo]) * self.tempos[lo]
        return Fraction(micro_ticks, self.division * 1_000_000)


def parse_smf(data: bytes) -> Piece:
    """Parse a format-0/1 SMF into a :class:`Piece` with no metadata.

    Unmatched note-offs, notes left open at end of track and zero-length notes
    are dropped; each drop is recorded in ``Piece.warnings``.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd header chunk")
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6:
        raise MalformedHeader(f"header length {hlen} < 6")
    if 8 + hlen > len(data):
        raise TruncatedChunk("header chunk cut short")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MalformedHeader(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedDivision("SMPTE timecode division is not supported")
    if division == 0:
        raise MalformedHeader("division of zero ticks per quarter")

    tracks = []
    for kind, start, end in _iter_chunks(data, 8 + hlen):
        if kind == b"MTrk":
            tracks.append(list(_parse_track(data, start, end)))
    if fmt == 0 and len(tracks) > 1:
        raise MalformedHeader(f"format 0 file with {len(tracks)} tracks")

    tempo = _TempoMap([(t, a) for trk in tracks for t, k, a, _ in trk if k == "tempo"], division)
    warnings: list[str] = []
    notes: list[Note] = []
    for ti, events in enumerate(tracks):
        open_notes: dict[tuple[int, int], deque] = defaultdict(deque)
        for tick, kind, key, vel in events:
            if kind == "on":
                open_notes[key].append((tick, vel))
            elif kind == "off":
                queue = open_notes.get(key)
                if not queue:
                    warnings.append(f"track {ti}: unmatched note-off pitch {key[1]} "
                                    f"channel {key[0]} at tick {tick}")
                    continue
                on_tick, on_vel = queue.popleft()
                if tick == on_tick:
                    warnings.append(f"track {ti}: zero-length note pitch {key[1]} at tick {tick}")
                    continue
                start = tempo.seconds(on_tick)
                notes.append(Note(float(start), float(tempo.seconds(tick) - start), key[1], on_vel))
        for key, queue in open_notes.items():
            for on_tick, _ in queue:
                warnings.append(f"track {ti}: note pitch {key[1]} at tick {on_tick} never closed")
    for w in warnings:
        log.debug("smf: %s", w)
    return Piece(notes=_sort_notes(notes), warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Standard MIDI File writing (format 0, one tempo)


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_smf(notes, *, division: int = 480, tempo: int = DEFAULT_TEMPO,
              channel: int = 0, velocity_zero_off: bool = False) -> bytes:
    """Serialise notes as a format-0 SMF with a single set-tempo event.

    Times are rounded to the nearest tick. At equal ticks note-offs are written
    before note-ons so back-to-back repeats of one pitch survive a re-read.
    """
    def to_tick(seconds: float) -> int:
        return int(round(Fraction(seconds) * division * 1_000_000 / tempo))

    events = []
    for n in notes:
        on = to_tick(n.onset_seconds)
        off = max(to_tick(n.onset_seconds + n.duration_seconds), on + 1)
        events.append((on, 1, n.pitch, n.velocity))
        events.append((off, 0, n.pitch, 0))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    body = bytearray(b"\x00\xff\x51\x03" + tempo.to_bytes(3, "big"))
    last = 0
    for tick, is_on, pitch, vel in events:
        body += _varlen(tick - last)
        last = tick
        if is_on:
            body += bytes((0x90 | channel, pitch, vel))
        elif velocity_zero_off:
            body += bytes((0x90 | channel, pitch, 0))
        else:
            body += bytes((0x80 | channel, pitch, 64))
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


# ---------------------------------------------------------------------------
# text note lists


def parse_note_text(text) -> Piece:
    """Parse ``onset duration pitch velocity`` lines; ``#`` starts a comment."""
    if isinstance(text, str):
        text = io.StringIO(text)
    notes = []
    for lineno, raw in enumerate(text, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise BadField(f"expected 4 fields, got {len(fields)}", lineno)
        try:
            onset, duration = float(fields[0]), float(fields[1])
            pitch, velocity = int(fields[2]), int(fields[3])
        except ValueError as exc:
            raise BadField(f"non-numeric field ({exc})", lineno) from None
        if not (onset >= 0 and onset != float("inf")):
            raise BadField(f"onset {fields[0]} out of range", lineno)
        if not (duration > 0 and duration != float("inf")):
            raise BadField(f"duration {fields[1]} must be positive", lineno)
        if not 0 <= pitch <= 127:
            raise BadField(f"pitch {pitch} outside 0..127", lineno)
        if not 1 <= velocity <= 127:
            raise BadField(f"velocity {velocity} outside 1..127", lineno)
        notes.append(Note(onset, duration, pitch, velocity))
    return Piece(notes=_sort_notes(notes))


def format_note_text(notes) -> str:
    return "".join(f"{n.onset_seconds!r} {n.duration_seconds!r} {n.pitch} {n.velocity}\n" for n in notes)


# ---------------------------------------------------------------------------
# manifests and corpora


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    piece_id: str
    composer_id: str


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    format_version: int = MANIFEST_VERSION

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.piece_id in seen:
                raise ManifestError(f"duplicate piece_id {e.piece_id!r}")
            if not e.composer_id:
                raise ManifestError(f"piece {e.piece_id!r}: empty composer_id")
            seen.add(e.piece_id)

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        """Read a ``path,piece_id,composer_id`` CSV; relative paths resolve
        against the manifest's directory."""
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
                raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
            entries = []
            for row in reader:
                if not row:
                    continue
                if len(row) != 3:
                    raise ManifestError(f"{path}: bad row {row!r}")
                p = Path(row[0])
                if not p.is_absolute():
                    p = path.parent / p
                entries.append(ManifestEntry(p, row[1], row[2]))
        return cls(tuple(entries))

    def write(self, path, relative_to=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                p = e.path
                if relative_to is not None:
                    p = Path(p).relative_to(relative_to)
                w.writerow([p.as_posix(), e.piece_id, e.composer_id])


def read_piece_file(path) -> Piece:
    path = Path(path)
    if path.suffix.lower() in (".mid", ".midi", ".smf"):
        return parse_smf(path.read_bytes())
    return parse_note_text(path.read_text(encoding="utf-8"))


def _load_entry(entry: ManifestEntry) -> Piece:
    try:
        piece = read_piece_file(entry.path)
    except FileNotFoundError as exc:
        raise PieceLoadError(entry.piece_id, exc) from exc
    except Exception as exc:
        raise PieceLoadError(entry.piece_id, exc) from exc
    return piece.with_metadata(entry.piece_id, entry.composer_id)


def load_corpus(manifest: CorpusManifest, jobs: int = 1) -> list[Piece]:
    for e in manifest.entries:
        if not Path(e.path).is_file():
            raise PieceLoadError(e.piece_id, FileNotFoundError(f"missing file {e.path}"))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_load_entry, manifest.entries))
    return [_load_entry(e) for e in manifest.entries]
