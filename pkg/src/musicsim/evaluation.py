"""Scoring calibrated embeddings against composer labels.

Similarity is cosine, the metric is Spearman's rho between pair similarities
and 0/1 labels (average ranks for ties), and significance comes from the
t approximation or, for small samples, a seeded permutation test.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import stdtr

from . import kernels
from .calibration import CalibrationConfig, Weighting, fit_and_calibrate, raw_embeddings
from .errors import (
    ConstantInput,
    EmptyResults,
    EvaluationError,
    InsufficientPairs,
    IoFailure,
    LengthMismatch,
    MissingEmbedding,
    MusicSimError,
    TooShort,
    ZeroVectorWarning,
)
from .pairs import LabeledPair, WindowRef
from .rng import SplitMix64

log = logging.getLogger(__name__)

REPORT_HEADER = ("weighting", "sn", "layer_avg", "natsv_k", "rho", "p_value", "pairs")
P_FLOOR = np.finfo(np.float64).tiny


class SpearmanResult(NamedTuple):
    rho: float
    p_value: float


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity with a zero vector defined as 0", ZeroVectorWarning,
                      stacklevel=2)
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pair_similarities(emb: np.ndarray, ia, ib) -> np.ndarray:
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    sims, zeros = kernels.pair_cosines(emb, np.asarray(ia, dtype=np.int64),
                                       np.asarray(ib, dtype=np.int64))
    if zeros:
        warnings.warn(f"{zeros} pair(s) involve a zero vector; similarity set to 0",
                      ZeroVectorWarning, stacklevel=2)
    return sims


def rank_average(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    return kernels.rank_average(np.ascontiguousarray(x, dtype=np.float64))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    r = float(np.dot(a, b) / math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b))))
    return max(-1.0, min(1.0, r))


def t_pvalue(rho: float, n: int) -> float:
    if rho == 0.0:
        return 1.0
    if abs(rho) >= 1.0:
        return P_FLOOR
    df = n - 2
    t = abs(rho) * math.sqrt(df / (1.0 - rho * rho))
    return float(min(1.0, max(P_FLOOR, 2.0 * stdtr(df, -t))))


def spearman(x, y, method: str = "t", permutations: int = 1000, seed: int = 0) -> SpearmanResult:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    if n < 3:
        raise TooShort(f"need at least 3 observations, got {n}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("rank correlation undefined for a constant input")
    rx, ry = rank_average(x), rank_average(y)
    rho = _pearson(rx, ry)
    if method == "t":
        return SpearmanResult(rho, t_pvalue(rho, n))
    if method != "permutation":
        raise EvaluationError(f"unknown p-value method {method!r}")
    rng = SplitMix64(seed)
    hits = 0
    for _ in range(permutations):
        perm = np.argsort(rng.u64_block(n), kind="stable")
        if abs(_pearson(rx, ry[perm])) >= abs(rho) - 1e-12:
            hits += 1
    return SpearmanResult(rho, (hits + 1) / (permutations + 1))


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    layer_avg: tuple[int, ...]
    sn: tuple[bool, ...] = (False, True)
    natsv_k: tuple[int, ...] = (0, 1, 2)
    weightings: tuple[Weighting, ...] = (Weighting.UNIFORM, Weighting.LINEAR,
                                         Weighting.INVERSE_LINEAR)
    natsv_center: bool = True
    sn_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "weightings", tuple(Weighting(w) for w in self.weightings))
        for name in ("layer_avg", "sn", "natsv_k", "weightings"):
            if not getattr(self, name):
                raise EvaluationError(f"grid spec field {name!r} is empty")

    @classmethod
    def full(cls, layers: int, natsv_k=(0, 1, 2)) -> "GridSpec":
        return cls(tuple(range(layers + 1)), natsv_k=tuple(natsv_k))

    def configs(self) -> list[CalibrationConfig]:
        out = []
        for w, sn, la, k in itertools.product(self.weightings, sorted(set(self.sn)),
                                              sorted(set(self.layer_avg)),
                                              sorted(set(self.natsv_k))):
            if la == 0 and w is not Weighting.UNIFORM:
                continue
            out.append(CalibrationConfig(la, bool(sn), k, w, self.natsv_center, self.sn_first))
        return sorted(out, key=lambda c: c.sort_key)


@dataclass(frozen=True)
class GridResult:
    config: CalibrationConfig
    rho: float
    p_value: float
    pair_count: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class GridSearch:
    results: list[GridResult]
    best: GridResult | None = field(default=None)

    @property
    def errors(self) -> list[GridResult]:
        return [r for r in self.results if not r.ok]


def _argmax_key(r: GridResult):
    c = r.config
    return (-r.rho, c.layer_avg, c.natsv_k, c.sn, c.weighting.rank)


def select_best(results: Sequence[GridResult]) -> GridResult | None:
    good = [r for r in results if r.ok]
    return min(good, key=_argmax_key) if good else None


def _pair_indices(pairs: Sequence[LabeledPair], keys: Sequence[WindowRef]):
    index = {k: i for i, k in enumerate(keys)}
    ia = np.empty(len(pairs), dtype=np.int64)
    ib = np.empty(len(pairs), dtype=np.int64)
    for n, p in enumerate(pairs):
        try:
            ia[n] = index[p.a]
            ib[n] = index[p.b]
        except KeyError as exc:
            raise MissingEmbedding(f"no embedding for window {exc.args[0]}") from None
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    return ia, ib, labels


def require_pairs(pairs: Sequence[LabeledPair]) -> None:
    labels = {p.label for p in pairs}
    if 1 not in labels:
        raise InsufficientPairs("no positive pairs to evaluate")
    if 0 not in labels:
        raise InsufficientPairs("no negative pairs to evaluate")


def score(emb: np.ndarray, ia, ib, labels, config: CalibrationConfig) -> GridResult:
    sims = pair_similarities(emb, ia, ib)
    rho, p = spearman(sims, labels)
    return GridResult(config, rho, p, len(labels))


def run_config(embeddings, pairs: Sequence[LabeledPair], config: CalibrationConfig) -> GridResult:
    """Score one embedding set. ``embeddings``: mapping WindowRef -> vector, or
    a ``(keys, matrix)`` tuple."""
    if isinstance(embeddings, tuple):
        keys, matrix = embeddings
    else:
        keys = list(embeddings)
        matrix = np.array([embeddings[k] for k in keys], dtype=np.float64)
    keys = [k if isinstance(k, WindowRef) else WindowRef(*k) for k in keys]
    ia, ib, labels = _pair_indices(pairs, keys)
    return score(np.asarray(matrix, dtype=np.float64), ia, ib, labels, config)


@dataclass
class ActivationSet:
    """Activations of many equal-length windows: ``data[N, L, n, H]``."""

    keys: list[WindowRef]
    data: np.ndarray

    def __post_init__(self):
        if len(self.keys) != self.data.shape[0]:
            raise EvaluationError("key count does not match activation count")

    @classmethod
    def from_list(cls, items) -> "ActivationSet":
        """``items``: iterable of (WindowRef, LayerActivations or array[L, n, H])."""
        keys, arrays = [], []
        for key, acts in items:
            keys.append(key)
            arrays.append(acts.data if hasattr(acts, "seq_len") else np.asarray(acts))
        if not arrays:
            raise EvaluationError("no activations")
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise EvaluationError(f"windows have differing activation shapes: {sorted(shapes)}")
        return cls(keys, np.stack(arrays).astype(np.float32))


def _block(acts: ActivationSet, ia, ib, labels, weighting, layer_avg, configs):
    raw = raw_embeddings(acts.data, layer_avg, weighting)
    out = []
    for cfg in configs:
        try:
            emb, _, _ = fit_and_calibrate(raw, cfg)
            out.append(score(emb, ia, ib, labels, cfg))
        except MusicSimError as exc:
            log.warning("config %s failed: %s", cfg.to_dict(), exc)
            out.append(GridResult(cfg, float("nan"), float("nan"), len(labels), str(exc)))
    return out


def grid_search(acts: ActivationSet, pairs: Sequence[LabeledPair], spec: GridSpec,
                jobs: int = 1) -> GridSearch:
    """Evaluate every configuration in ``spec``.

    Raw embeddings are pooled once per (weighting, layer_avg); SN/NATSV are
    fitted on the full window set for each configuration.
    """
    require_pairs(pairs)
    L = acts.data.shape[1]
    configs = spec.configs()
    for c in configs:
        c.validate(L)
    ia, ib, labels = _pair_indices(pairs, acts.keys)
    merged: dict[tuple, list] = {}
    for c in configs:
        merged.setdefault((c.weighting, c.layer_avg), []).append(c)
    work = [(w, la, cs) for (w, la), cs in merged.items()]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda t: _block(acts, ia, ib, labels, *t), work))
    else:
        parts = [_block(acts, ia, ib, labels, *t) for t in work]
    results = sorted((r for part in parts for r in part), key=lambda r: r.config.sort_key)
    return GridSearch(results, select_best(results))


# ---------------------------------------------------------------------------
# reports


def report_csv(results: Sequence[GridResult]) -> str:
    if not results:
        raise EmptyResults("no grid results to report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in sorted(results, key=lambda r: r.config.sort_key):
        c = r.config
        w.writerow([c.weighting.value, "on" if c.sn else "off", c.layer_avg, c.natsv_k,
                    f"{r.rho:.6f}", f"{r.p_value:.6f}", r.pair_count])
    return buf.getvalue()


def summary_json(search: GridSearch) -> str:
    best = search.best
    doc = {
        "configs": len(search.results),
        "errors": [{"config": r.config.to_dict(), "error": r.error} for r in search.errors],
        "best": None if best is None else {
            "config": best.config.to_dict(),
            "rho": best.rho,
            "p_value": best.p_value,
            "pairs": best.pair_count,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def report_svg(results: Sequence[GridResult], weighting: Weighting) -> str:
    """Line chart of rho against layer_avg, one series per (sn, natsv_k)."""
    rows = [r for r in results if r.ok and r.config.weighting is weighting]
    width, height, pad = 640, 400, 50
    xs = sorted({r.config.layer_avg for r in rows}) or [0]
    rhos = [r.rho for r in rows] or [0.0]
    lo, hi = min(rhos), max(rhos)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - lo) / (hi - lo) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{weighting.value}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">LayerAvg</text>',
             f'<text x="12" y="{height / 2:.1f}" transform="rotate(-90 12 {height / 2:.1f})" '
             f'text-anchor="middle">rho</text>']
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{height - pad + 15}" text-anchor="middle" '
                     f'font-size="10">{x}</text>')
    for y in (lo, hi):
        parts.append(f'<text x="{pad - 4}" y="{py(y):.1f}" text-anchor="end" '
                     f'font-size="10">{y:.3f}</text>')
    series = sorted({(r.config.sn, r.config.natsv_k) for r in rows})
    for i, (sn, k) in enumerate(series):
        pts = sorted((r.config.layer_avg, r.rho) for r in rows
                     if r.config.sn == sn and r.config.natsv_k == k)
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" points="{coords}"/>')
        parts.append(f'<text x="{width - pad + 2}" y="{pad + 14 * i}" font-size="10" '
                     f'fill="{color}">sn={"on" if sn else "off"} K={k}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(search, out_dir, svg: bool = True) -> list[Path]:
    """Write ``report.csv``, ``summary.json`` and optional per-weighting SVGs."""
    if not isinstance(search, GridSearch):
        search = GridSearch(list(search), select_best(list(search)))
    if not search.results:
        raise EmptyResults("no grid results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.csv", out / "summary.json"]
        written[0].write_text(report_csv(search.results), encoding="utf-8")
        written[1].write_text(summary_json(search), encoding="utf-8")
        if svg:
            for w in sorted({r.config.weighting for r in search.results}, key=lambda w: w.rank):
                p = out / f"report_{w.value}.svg"
                p.write_text(report_svg(search.results, w), encoding="utf-8")
                written.append(p)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return written
