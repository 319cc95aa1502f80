"""Per-layer activations from a small decoder-only Transformer, plus the
binary activation (``MACT``) and weight (``MWTS``) formats.

Architecture: learned token and position tables, ``L`` pre-LN blocks
(causal multi-head attention without biases, GELU feed-forward of width 4H
with biases), final layer norm. Hidden state of layer ``l`` is the residual
stream after block ``l``; the last layer is taken after the final layer norm
unless ``final_norm_last=False``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .errors import BadMagic, IdOutOfRange, SequenceTooLong, ShapeMismatch, TruncatedPayload
from .rng import SplitMix64

ACT_MAGIC = b"MACT"
WEIGHTS_MAGIC = b"MWTS"
FORMAT_VERSION = 1
INIT_SCALE = 0.02


@dataclass(frozen=True)
class ModelShape:
    layers: int = 12
    context: int = 1024
    hidden: int = 512
    vocab: int = 2000
    heads: int = 8

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @property
    def ffn(self) -> int:
        return 4 * self.hidden


# order here is the on-disk order inside each block
_LAYER_TENSORS = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                  "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


@dataclass
class ModelWeights:
    shape: ModelShape
    tok: np.ndarray      # (V, H)
    pos: np.ndarray      # (T, H)
    ln1_g: np.ndarray    # (L, H)
    ln1_b: np.ndarray
    wq: np.ndarray       # (L, H, H), applied as x @ w
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray       # (L, H, 4H)
    b1: np.ndarray       # (L, 4H)
    w2: np.ndarray       # (L, 4H, H)
    b2: np.ndarray       # (L, H)
    lnf_g: np.ndarray    # (H,)
    lnf_b: np.ndarray

    def __post_init__(self):
        expected = self.expected_shapes(self.shape)
        for name, shp in expected.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shp:
                raise ShapeMismatch(f"{name}: expected {shp}, got {arr.shape}")
            setattr(self, name, arr)

    @staticmethod
    def expected_shapes(s: ModelShape) -> dict[str, tuple[int, ...]]:
        L, H, F = s.layers, s.hidden, s.ffn
        return {
            "tok": (s.vocab, H), "pos": (s.context, H),
            "ln1_g": (L, H), "ln1_b": (L, H),
            "wq": (L, H, H), "wk": (L, H, H), "wv": (L, H, H), "wo": (L, H, H),
            "ln2_g": (L, H), "ln2_b": (L, H),
            "w1": (L, H, F), "b1": (L, F), "w2": (L, F, H), "b2": (L, H),
            "lnf_g": (H,), "lnf_b": (H,),
        }

    def tensor_order(self):
        """(name, array) in serialisation order; per-layer tensors interleave."""
        yield "tok", self.tok
        yield "pos", self.pos
        for l in range(self.shape.layers):
            for name in _LAYER_TENSORS:
                yield f"{name}[{l}]", getattr(self, name)[l]
        yield "lnf_g", self.lnf_g
        yield "lnf_b", self.lnf_b

    def to_bytes(self) -> bytes:
        s = self.shape
        head = WEIGHTS_MAGIC + struct.pack("<H5I", FORMAT_VERSION, s.layers, s.context,
                                           s.hidden, s.vocab, s.heads)
        return head + b"".join(a.astype("<f4").tobytes() for _, a in self.tensor_order())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelWeights":
        if data[:4] != WEIGHTS_MAGIC:
            raise BadMagic(f"expected {WEIGHTS_MAGIC!r}, got {data[:4]!r}")
        if len(data) < 26:
            raise TruncatedPayload("weights header cut short")
        version, L, T, H, V, heads = struct.unpack("<H5I", data[4:26])
        if version != FORMAT_VERSION:
            raise ShapeMismatch(f"unsupported weights version {version}")
        shape = ModelShape(L, T, H, V, heads)
        shapes = cls.expected_shapes(shape)
        total = sum(int(np.prod(v)) for v in shapes.values())
        payload = data[26:]
        if len(payload) < 4 * total:
            raise TruncatedPayload(f"weights payload has {len(payload)} bytes, need {4 * total}")
        if len(payload) > 4 * total:
            raise ShapeMismatch("trailing bytes after weights payload")
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
        arrays = {name: np.empty(shp, dtype=np.float32) for name, shp in shapes.items()}
        off = 0

        def take(shp):
            nonlocal off
            n = int(np.prod(shp))
            out = flat[off:off + n].reshape(shp)
            off += n
            return out

        arrays["tok"][...] = take(shapes["tok"])
        arrays["pos"][...] = take(shapes["pos"])
        for l in range(L):
            for name in _LAYER_TENSORS:
                arrays[name][l] = take(shapes[name][1:])
        arrays["lnf_g"][...] = take((H,))
        arrays["lnf_b"][...] = take((H,))
        return cls(shape, **arrays)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelWeights":
        return cls.from_bytes(Path(path).read_bytes())


def random_weights(shape: ModelShape, seed: int) -> ModelWeights:
    """Gaussian(0, 0.02) matrices from SplitMix64; unit gains, zero biases.

    Draw order: token table, position table, then per layer wq, wk, wv, wo,
    w1, w2 (row-major each).
    """
    rng = SplitMix64(seed)
    shapes = ModelWeights.expected_shapes(shape)

    def gauss(shp):
        n = int(np.prod(shp))
        return (rng.normal_block(n) * INIT_SCALE).astype(np.float32).reshape(shp)

    L = shape.layers
    tok = gauss(shapes["tok"])
    pos = gauss(shapes["pos"])
    mats = {name: np.empty(shapes[name], dtype=np.float32)
            for name in ("wq", "wk", "wv", "wo", "w1", "w2")}
    for l in range(L):
        for name in ("wq", "wk", "wv", "wo", "w1", "w2"):
            mats[name][l] = gauss(shapes[name][1:])
    ones = np.ones((L, shape.hidden), dtype=np.float32)
    zeros = np.zeros((L, shape.hidden), dtype=np.float32)
    return ModelWeights(
        shape, tok, pos,
        ln1_g=ones, ln1_b=zeros, ln2_g=ones.copy(), ln2_b=zeros.copy(),
        b1=np.zeros((L, shape.ffn), dtype=np.float32), b2=zeros.copy(),
        lnf_g=np.ones(shape.hidden, dtype=np.float32),
        lnf_b=np.zeros(shape.hidden, dtype=np.float32),
        **mats,
    )


@dataclass
class LayerActivations:
    """Hidden states indexed ``data[layer, position, dim]`` (0-based)."""

    shape: ModelShape
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        L, n, H = self.data.shape
        if L != self.shape.layers or H != self.shape.hidden:
            raise ShapeMismatch(f"data {self.data.shape} vs shape L={self.shape.layers} "
                                f"H={self.shape.hidden}")
        if not 1 <= n <= self.shape.context:
            raise ShapeMismatch(f"sequence length {n} not in 1..{self.shape.context}")

    @property
    def seq_len(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LayerActivations):
            return NotImplemented
        return (self.data.shape == other.data.shape
                and self.shape.layers == other.shape.layers
                and self.shape.context == other.shape.context
                and self.shape.hidden == other.shape.hidden
                and np.array_equal(self.data, other.data))


def forward(ids, weights: ModelWeights, final_norm_last: bool = True) -> LayerActivations:
    s = weights.shape
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise SequenceTooLong("ids must be a non-empty 1-d sequence")
    if ids.shape[0] > s.context:
        raise SequenceTooLong(f"{ids.shape[0]} tokens > context {s.context}")
    if ids.min() < 0 or ids.max() >= s.vocab:
        raise IdOutOfRange(f"token ids must lie in 0..{s.vocab - 1}")
    w = weights
    data = kernels.forward(ids, w.tok, w.pos, w.ln1_g, w.ln1_b, w.wq, w.wk, w.wv, w.wo,
                           w.ln2_g, w.ln2_b, w.w1, w.b1, w.w2, w.b2, w.lnf_g, w.lnf_b,
                           s.heads, final_norm_last)
    return LayerActivations(s, data)


# ---------------------------------------------------------------------------
# activation files

_ACT_HEADER = struct.Struct("<4sH4I")


def activations_to_bytes(acts: LayerActivations) -> bytes:
    L, n, H = acts.data.shape
    head = _ACT_HEADER.pack(ACT_MAGIC, FORMAT_VERSION, L, acts.shape.context, n, H)
    return head + acts.data.astype("<f4").tobytes()


def activations_from_bytes(data: bytes, heads: int = 1, vocab: int = 1) -> LayerActivations:
    if data[:4] != ACT_MAGIC:
        raise BadMagic(f"expected {ACT_MAGIC!r}, got {data[:4]!r}")
    if len(data) < _ACT_HEADER.size:
        raise TruncatedPayload("activation header cut short")
    _, version, L, T, n, H = _ACT_HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise ShapeMismatch(f"unsupported activation version {version}")
    if min(L, T, n, H) == 0 or n > T:
        raise ShapeMismatch(f"bad header L={L} T={T} n={n} H={H}")
    need = 4 * L * n * H
    payload = data[_ACT_HEADER.size:]
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, header implies {need}")
    if len(payload) > need:
        raise ShapeMismatch("trailing bytes after activation payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(L, n, H).astype(np.float32)
    if H % heads:
        heads = 1
    return LayerActivations(ModelShape(L, T, H, vocab, heads), arr)


def write_activations(acts: LayerActivations, sink) -> None:
    blob = activations_to_bytes(acts)
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        Path(sink).write_bytes(blob)


def read_activations(source) -> LayerActivations:
    if hasattr(source, "read"):
        return activations_from_bytes(source.read())
    return activations_from_bytes(Path(source).read_bytes())


def activation_filename(piece_id: str, window_index: int) -> str:
    return f"{piece_id}_{window_index}.mact"
