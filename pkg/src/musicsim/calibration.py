"""Sentence embeddings from layer activations and their calibration.

Pipeline for one :class:`CalibrationConfig`::

    pool positions per layer  ->  average last L~ layers  ->  SN  ->  NATSV

``layer_avg == 0`` skips pooling and takes the last layer's last token.
SN and NATSV statistics are fitted on a whole embedding set and then applied
to each member; the order of the two can be swapped with ``sn_first``.
All arithmetic after pooling is float64.
"""

from __future__ import annotations

import enum
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySequence,
    InvalidConfig,
    LayerOutOfRange,
    MissingDirections,
    MissingStats,
    RankTooLow,
    TooFewEmbeddings,
)

SN_EPS = 1e-8
EMB_MAGIC = b"MEMB"
EMB_VERSION = 1


class Weighting(str, enum.Enum):
    UNIFORM = "uniform"
    LINEAR = "linear"
    INVERSE_LINEAR = "inverse_linear"

    @property
    def rank(self) -> int:
        return _WEIGHTING_ORDER[self]


_WEIGHTING_ORDER = {Weighting.UNIFORM: 0, Weighting.LINEAR: 1, Weighting.INVERSE_LINEAR: 2}


@dataclass(frozen=True)
class CalibrationConfig:
    layer_avg: int
    sn: bool = False
    natsv_k: int = 0
    weighting: Weighting = Weighting.UNIFORM
    natsv_center: bool = True
    sn_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "weighting", Weighting(self.weighting))
        if self.layer_avg < 0:
            raise InvalidConfig(f"layer_avg must be >= 0, got {self.layer_avg}")
        if self.natsv_k < 0:
            raise InvalidConfig(f"natsv_k must be >= 0, got {self.natsv_k}")
        if self.layer_avg == 0 and self.weighting is not Weighting.UNIFORM:
            raise InvalidConfig("layer_avg=0 (last token) only combines with uniform weighting")

    def validate(self, layers: int) -> None:
        if self.layer_avg > layers:
            raise LayerOutOfRange(f"layer_avg {self.layer_avg} > model layers {layers}")

    @property
    def sort_key(self):
        return (self.weighting.rank, self.sn, self.layer_avg, self.natsv_k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighting"] = self.weighting.value
        return d


@dataclass(frozen=True)
class SentenceEmbedding:
    vector: np.ndarray
    config: CalibrationConfig
    source: tuple[str, int] | None = None


@dataclass(frozen=True)
class NormalizationStats:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class PrincipalDirections:
    mean: np.ndarray
    components: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def k(self) -> int:
        return self.components.shape[0]


# ---------------------------------------------------------------------------
# pooling


def position_weights(n: int, weighting: Weighting) -> np.ndarray:
    """Normalised pooling weights for positions 1..n."""
    if n < 1:
        raise EmptySequence("cannot pool an empty sequence")
    weighting = Weighting(weighting)
    if weighting is Weighting.UNIFORM:
        return np.full(n, 1.0 / n)
    t = np.arange(1, n + 1, dtype=np.float64)
    total = n * (n + 1) / 2.0
    return (t if weighting is Weighting.LINEAR else t[::-1].copy()) / total


def pool_positions(states, weighting: Weighting) -> np.ndarray:
    """Pool ``states[..., n, H]`` over the position axis."""
    states = np.asarray(states)
    n = states.shape[-2]
    if n < 1:
        raise EmptySequence("cannot pool an empty sequence")
    x = states.astype(np.float64)
    weighting = Weighting(weighting)
    if weighting is Weighting.UNIFORM:
        return x.sum(axis=-2) / n
    t = np.arange(1, n + 1, dtype=np.float64)
    if weighting is Weighting.INVERSE_LINEAR:
        t = t[::-1].copy()
    return (x * t[:, None]).sum(axis=-2) / (n * (n + 1) / 2.0)


def _data(acts) -> np.ndarray:
    if isinstance(acts, np.ndarray):
        return acts
    return acts.data if hasattr(acts, "seq_len") else np.asarray(acts)


def pool_layer(acts, layer: int, weighting: Weighting = Weighting.UNIFORM) -> np.ndarray:
    """Pool one layer (1-based) of a single sequence's activations."""
    data = _data(acts)
    if not 1 <= layer <= data.shape[0]:
        raise LayerOutOfRange(f"layer {layer} not in 1..{data.shape[0]}")
    return pool_positions(data[layer - 1], weighting)


def average_last_layers(pooled: np.ndarray, layer_avg: int) -> np.ndarray:
    """Mean of the last ``layer_avg`` rows along axis -2 of ``pooled[..., L, H]``."""
    L = pooled.shape[-2]
    if not 1 <= layer_avg <= L:
        raise LayerOutOfRange(f"layer_avg {layer_avg} not in 1..{L}")
    return pooled[..., L - layer_avg:, :].sum(axis=-2) / layer_avg


def last_token(data: np.ndarray) -> np.ndarray:
    """``data[..., L, n, H]`` -> last layer, last position, as float64."""
    return data[..., -1, -1, :].astype(np.float64)


def raw_embedding(acts, layer_avg: int, weighting: Weighting = Weighting.UNIFORM) -> np.ndarray:
    data = _data(acts)
    L = data.shape[0]
    if not 0 <= layer_avg <= L:
        raise LayerOutOfRange(f"layer_avg {layer_avg} not in 0..{L}")
    if data.shape[1] < 1:
        raise EmptySequence("cannot embed an empty sequence")
    if layer_avg == 0:
        return last_token(data)
    return average_last_layers(pool_positions(data[L - layer_avg:], weighting), layer_avg)


def raw_embeddings(data: np.ndarray, layer_avg: int,
                   weighting: Weighting = Weighting.UNIFORM) -> np.ndarray:
    """Batched :func:`raw_embedding` over ``data[N, L, n, H]``."""
    L = data.shape[1]
    if not 0 <= layer_avg <= L:
        raise LayerOutOfRange(f"layer_avg {layer_avg} not in 0..{L}")
    if layer_avg == 0:
        return last_token(data)
    return average_last_layers(pool_positions(data[:, L - layer_avg:], weighting), layer_avg)


# ---------------------------------------------------------------------------
# standard normalisation


def fit_sn(embeddings) -> NormalizationStats:
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise TooFewEmbeddings("standard normalisation needs at least 2 embeddings")
    mu = E.mean(axis=0)
    sigma = np.maximum(E.std(axis=0), SN_EPS)
    return NormalizationStats(mu, sigma)


def apply_sn(v, stats: NormalizationStats) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != stats.mu.shape[0]:
        raise DimensionMismatch(f"vector dim {v.shape[-1]} vs stats dim {stats.mu.shape[0]}")
    return (v - stats.mu) / stats.sigma


# ---------------------------------------------------------------------------
# nulling away top singular vectors


def _fix_signs(components: np.ndarray) -> np.ndarray:
    out = components.copy()
    for i, row in enumerate(out):
        big = np.abs(row) > 1e-12 * max(np.abs(row).max(), 1e-300)
        nz = np.flatnonzero(big)
        if nz.size and row[nz[0]] < 0:
            out[i] = -row
    return out


def fit_natsv(embeddings, k: int, center: bool = True) -> PrincipalDirections:
    """Top-``k`` right singular vectors of the (centred) embedding matrix.

    If fewer than ``k`` directions carry variance, the available ones are
    returned and :class:`~musicsim.errors.RankTooLow` is warned.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise TooFewEmbeddings("NATSV needs a non-empty embedding matrix")
    count, H = E.shape
    mean = E.mean(axis=0) if center else np.zeros(H)
    if k == 0:
        return PrincipalDirections(mean, np.zeros((0, H)))
    X = E - mean
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    limit = min(count - 1 if center else count, H)
    tol = s[0] * max(count, H) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    avail = min(k, limit, rank)
    if avail < k:
        warnings.warn(f"requested {k} principal directions, only {avail} available",
                      RankTooLow, stacklevel=2)
    return PrincipalDirections(mean, _fix_signs(vt[:avail]))


def apply_natsv(v, dirs: PrincipalDirections) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != dirs.mean.shape[0]:
        raise DimensionMismatch(f"vector dim {v.shape[-1]} vs directions dim {dirs.mean.shape[0]}")
    w = v - dirs.mean
    if dirs.k == 0:
        return w
    U = dirs.components
    return w - (w @ U.T) @ U


# ---------------------------------------------------------------------------
# composition


def calibrate_vector(raw, config: CalibrationConfig, stats=None, dirs=None) -> np.ndarray:
    """Apply SN / NATSV to raw embedding(s) in the configured order."""
    if config.sn and stats is None:
        raise MissingStats("config has sn=True but no normalisation stats were given")
    if config.natsv_k > 0 and dirs is None:
        raise MissingDirections("config has natsv_k > 0 but no principal directions were given")
    v = np.asarray(raw, dtype=np.float64)
    steps = [("sn", config.sn), ("natsv", config.natsv_k > 0)]
    if not config.sn_first:
        steps.reverse()
    for name, on in steps:
        if not on:
            continue
        v = apply_sn(v, stats) if name == "sn" else apply_natsv(v, dirs)
    return v


def calibrate(acts, config: CalibrationConfig, stats: NormalizationStats | None = None,
              dirs: PrincipalDirections | None = None, source=None) -> SentenceEmbedding:
    data = _data(acts)
    config.validate(data.shape[0])
    raw = raw_embedding(data, config.layer_avg, config.weighting)
    return SentenceEmbedding(calibrate_vector(raw, config, stats, dirs), config, source)


def fit_and_calibrate(raw: np.ndarray, config: CalibrationConfig):
    """Fit SN/NATSV on the set ``raw[N, H]`` and calibrate every row.

    Returns ``(calibrated, stats, dirs)``; unused stages give ``None``.
    """
    v = np.asarray(raw, dtype=np.float64)
    stats = dirs = None
    steps = ["sn", "natsv"] if config.sn_first else ["natsv", "sn"]
    for name in steps:
        if name == "sn" and config.sn:
            stats = fit_sn(v)
            v = apply_sn(v, stats)
        elif name == "natsv" and config.natsv_k > 0:
            dirs = fit_natsv(v, config.natsv_k, center=config.natsv_center)
            v = apply_natsv(v, dirs)
    return v, stats, dirs


# ---------------------------------------------------------------------------
# embedding dumps

_EMB_HEADER = struct.Struct("<4sH2I")


def write_embeddings(path, matrix: np.ndarray, config: CalibrationConfig, keys=None,
                     stats: NormalizationStats | None = None,
                     dirs: PrincipalDirections | None = None) -> None:
    """``MEMB`` binary ([count][H] little-endian f32) plus a ``.json`` sidecar."""
    path = Path(path)
    m = np.asarray(matrix, dtype=np.float64)
    path.write_bytes(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, m.shape[0], m.shape[1])
                     + m.astype("<f4").tobytes())
    side = {
        "config": config.to_dict(),
        "count": int(m.shape[0]),
        "dim": int(m.shape[1]),
        "keys": [[str(p), int(w)] for p, w in keys] if keys is not None else None,
        "sn": None if stats is None else {"mu": stats.mu.tolist(), "sigma": stats.sigma.tolist()},
        "natsv": None if dirs is None else {"mean": dirs.mean.tolist(),
                                           "components": dirs.components.tolist()},
    }
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n",
                                         encoding="utf-8")


def read_embeddings(path) -> np.ndarray:
    from .errors import BadMagic, TruncatedPayload

    data = Path(path).read_bytes()
    if data[:4] != EMB_MAGIC:
        raise BadMagic(f"expected {EMB_MAGIC!r}, got {data[:4]!r}")
    _, _, count, dim = _EMB_HEADER.unpack_from(data)
    payload = data[_EMB_HEADER.size:]
    if len(payload) != 4 * count * dim:
        raise TruncatedPayload("embedding payload size does not match header")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
