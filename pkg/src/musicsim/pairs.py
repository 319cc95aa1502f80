"""Sliding-window sequences and composer-labelled pair sampling."""

from __future__ import annotations

import csv
import enum
import json
from collections import defaultdict
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

from .errors import InsufficientPairs, PairError
from .rng import SplitMix64

PAIRS_HEADER = ("a_piece", "a_window", "b_piece", "b_window", "label")
# pair universes up to this size are enumerated; larger ones use rejection
ENUMERATION_LIMIT = 2_000_000


class Exclusion(str, enum.Enum):
    NONE = "none"
    SAME_PIECE = "same_piece"
    OVERLAPPING_WINDOWS = "overlapping_windows"


@dataclass(frozen=True, order=True)
class WindowRef:
    piece_id: str
    window_index: int


@dataclass(frozen=True)
class Window:
    piece_id: str
    composer_id: str
    window_index: int
    offset: int
    ids: np.ndarray

    @property
    def ref(self) -> WindowRef:
        return WindowRef(self.piece_id, self.window_index)


@dataclass(frozen=True)
class LabeledPair:
    a: WindowRef
    b: WindowRef
    label: int

    def __post_init__(self):
        if self.a == self.b:
            raise PairError(f"self-pair {self.a}")
        if self.b < self.a:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if self.label not in (0, 1):
            raise PairError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class SamplerConfig:
    window: int
    stride: int | None = None
    positives: int = 1000
    negatives: int = 1000
    seed: int = 0
    exclusion: Exclusion = Exclusion.NONE

    def __post_init__(self):
        object.__setattr__(self, "exclusion", Exclusion(self.exclusion))
        if self.window < 1:
            raise PairError(f"window must be >= 1, got {self.window}")
        if self.stride is None:
            if self.window % 2:
                raise PairError("half-window stride needs an even window length")
            object.__setattr__(self, "stride", self.window // 2)
        if self.stride < 1:
            raise PairError(f"stride must be >= 1, got {self.stride}")
        if self.positives < 1 or self.negatives < 1:
            raise PairError("positives and negatives must both be >= 1")

    def to_dict(self) -> dict:
        return {"window": self.window, "stride": self.stride, "positives": self.positives,
                "negatives": self.negatives, "seed": self.seed,
                "exclusion": self.exclusion.value}


def make_windows(pieces, window: int, stride: int) -> list[Window]:
    """``pieces``: iterable of (piece_id, composer_id, ids). Trailing partial
    windows are dropped."""
    if window < 1 or stride < 1:
        raise PairError("window and stride must be >= 1")
    out = []
    for piece_id, composer_id, ids in pieces:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[0] < window:
            continue
        count = (ids.shape[0] - window) // stride + 1
        for w in range(count):
            off = w * stride
            out.append(Window(piece_id, composer_id, w, off, ids[off:off + window].copy()))
    return out


def _decode_triangular(r: np.ndarray):
    """Pair index r -> (i, j) with i < j, ordering r = j(j-1)/2 + i."""
    r = np.asarray(r, dtype=np.int64)
    j = ((1.0 + np.sqrt(1.0 + 8.0 * r.astype(np.float64))) / 2.0).astype(np.int64)
    j = np.where(j * (j - 1) // 2 > r, j - 1, j)
    j = np.where((j + 1) * j // 2 <= r, j + 1, j)
    return r - j * (j - 1) // 2, j


class _PairSpace:
    def __init__(self, windows: list[Window], config: SamplerConfig):
        self.windows = windows
        self.config = config
        self.n = len(windows)
        self.piece = np.array([w.piece_id for w in windows], dtype=object)
        self.offset = np.array([w.offset for w in windows], dtype=np.int64)
        composers = sorted({w.composer_id for w in windows})
        code = {c: i for i, c in enumerate(composers)}
        self.composer = np.array([code[w.composer_id] for w in windows], dtype=np.int64)
        self.groups = [np.flatnonzero(self.composer == i) for i in range(len(composers))]
        self.group_pairs = np.array([comb(len(g), 2) for g in self.groups], dtype=np.int64)
        self.group_start = np.concatenate([[0], np.cumsum(self.group_pairs)])
        self.composers = composers

    # universes -------------------------------------------------------------
    def universe(self, positive: bool) -> int:
        return int(self.group_start[-1]) if positive else comb(self.n, 2)

    def decode(self, r: np.ndarray, positive: bool):
        if not positive:
            return _decode_triangular(r)
        g = np.searchsorted(self.group_start, r, side="right") - 1
        i, j = _decode_triangular(r - self.group_start[g])
        ia = np.empty_like(i)
        ib = np.empty_like(j)
        for k in np.unique(g):
            sel = g == k
            ia[sel] = self.groups[k][i[sel]]
            ib[sel] = self.groups[k][j[sel]]
        return ia, ib

    def eligible(self, ia: np.ndarray, ib: np.ndarray, positive: bool) -> np.ndarray:
        same = self.composer[ia] == self.composer[ib]
        if not positive:
            return ~same
        ok = same.copy()
        policy = self.config.exclusion
        if policy is not Exclusion.NONE:
            same_piece = self.piece[ia] == self.piece[ib]
            if policy is Exclusion.SAME_PIECE:
                ok &= ~same_piece
            else:
                overlap = np.abs(self.offset[ia] - self.offset[ib]) < self.config.window
                ok &= ~(same_piece & overlap)
        return ok

    def eligible_count(self, positive: bool) -> int:
        if not positive:
            return comb(self.n, 2) - int(self.group_pairs.sum())
        total = int(self.group_pairs.sum())
        policy = self.config.exclusion
        if policy is Exclusion.NONE:
            return total
        per_piece = defaultdict(list)
        for k, w in enumerate(self.windows):
            per_piece[w.piece_id].append(w.offset)
        excluded = 0
        for offs in per_piece.values():
            if policy is Exclusion.SAME_PIECE:
                excluded += comb(len(offs), 2)
            else:
                o = np.sort(np.array(offs))
                for a in range(len(o)):
                    excluded += int(np.searchsorted(o, o[a] + self.config.window, "left") - a - 1)
        return total - excluded


def _sample_class(space: _PairSpace, positive: bool, need: int, rng: SplitMix64):
    label = "positive" if positive else "negative"
    have = space.eligible_count(positive)
    if need > have:
        raise InsufficientPairs(f"{label} pairs: requested {need}, only {have} eligible")
    universe = space.universe(positive)
    if universe <= ENUMERATION_LIMIT:
        r = np.arange(universe, dtype=np.int64)
        ia, ib = space.decode(r, positive)
        keep = space.eligible(ia, ib, positive)
        ia, ib = ia[keep], ib[keep]
        order = np.arange(ia.shape[0])
        for k in range(need):  # partial Fisher-Yates
            j = k + rng.randbelow(order.shape[0] - k)
            order[k], order[j] = order[j], order[k]
        return list(zip(ia[order[:need]].tolist(), ib[order[:need]].tolist()))
    chosen, seen = [], set()
    while len(chosen) < need:
        r = np.array([rng.randbelow(universe)], dtype=np.int64)
        ia, ib = space.decode(r, positive)
        if not space.eligible(ia, ib, positive)[0]:
            continue
        key = (int(ia[0]), int(ib[0]))
        if key in seen:
            continue
        seen.add(key)
        chosen.append(key)
    return chosen


def sample_pairs(windows: list[Window], config: SamplerConfig) -> list[LabeledPair]:
    """Exactly ``positives`` same-composer and ``negatives`` cross-composer
    unordered pairs, uniform without replacement over the eligible pairs."""
    windows = sorted(windows, key=lambda w: (w.piece_id, w.window_index))
    refs = [w.ref for w in windows]
    if len(set(refs)) != len(refs):
        raise PairError("duplicate window references")
    space = _PairSpace(windows, config)
    if len(space.composers) < 2:
        raise InsufficientPairs(f"negative pairs: need at least 2 composers, "
                                f"got {len(space.composers)}")
    rng = SplitMix64(config.seed)
    out = []
    for positive, need in ((True, config.positives), (False, config.negatives)):
        for i, j in _sample_class(space, positive, need, rng):
            out.append(LabeledPair(refs[i], refs[j], int(positive)))
    return out


def write_pairs(path, pairs: list[LabeledPair], config: SamplerConfig | None = None) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRS_HEADER)
        for p in pairs:
            w.writerow([p.a.piece_id, p.a.window_index, p.b.piece_id, p.b.window_index, p.label])
    if config is not None:
        side = {"sampler": config.to_dict(), "count": len(pairs)}
        path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n",
                                             encoding="utf-8")


def read_pairs(path) -> list[LabeledPair]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    if tuple(rows[0]) != PAIRS_HEADER:
        raise PairError(f"{path}: header must be {','.join(PAIRS_HEADER)}")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        out.append(LabeledPair(WindowRef(row[0], int(row[1])), WindowRef(row[2], int(row[3])),
                               int(row[4])))
    return out
