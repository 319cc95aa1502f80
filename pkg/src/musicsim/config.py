"""Run configuration: one INI file, checked up front, overridable by flags."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .calibration import Weighting
from .errors import ConfigError
from .evaluation import GridSpec
from .model import ModelShape
from .pairs import Exclusion, SamplerConfig
from .rng import MASK64, derive_seed
from .tokenizer import TokenizerConfig

CONFIG_ENV = "MUSICSIM_CONFIG"

_KNOWN = {
    "paths": {"manifest", "out"},
    "tokenizer": {"time_shift_bin_ms", "max_time_shift_bins", "velocity_bins",
                  "target_size", "max_word_events"},
    "model": {"layers", "context", "hidden", "heads", "weights", "seed", "final_norm_last"},
    "sampler": {"stride", "positives", "negatives", "seed", "exclusion"},
    "grid": {"layer_avg", "sn", "natsv_k", "weightings", "natsv_center", "sn_first", "svg"},
    "run": {"seed", "jobs"},
}


@dataclass
class RunConfig:
    manifest: Path | None = None
    out: Path = Path("musicsim-out")
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    target_size: int = 2000
    max_word_events: int = 8
    shape: ModelShape = field(default_factory=ModelShape)
    weights: Path | None = None  # None -> seeded random init
    model_seed: int = 0
    final_norm_last: bool = True
    stride: int | None = None
    positives: int = 1000
    negatives: int = 1000
    sampler_seed: int = 0
    exclusion: Exclusion = Exclusion.NONE
    layer_avg: tuple[int, ...] | None = None  # None -> 0..layers
    sn: tuple[bool, ...] = (False, True)
    natsv_k: tuple[int, ...] = (0, 1, 2)
    weightings: tuple[Weighting, ...] = tuple(Weighting)
    natsv_center: bool = True
    sn_first: bool = True
    svg: bool = True
    jobs: int = 1

    def with_seed(self, seed: int) -> "RunConfig":
        """Override every module seed by derivation from one global seed."""
        seed = int(seed)
        if not 0 <= seed <= MASK64:
            raise ConfigError(f"seed {seed} is not a 64-bit unsigned integer")
        return replace(self, model_seed=derive_seed(seed, "model"),
                       sampler_seed=derive_seed(seed, "pairs"))

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.shape.context, self.stride, self.positives, self.negatives,
                             self.sampler_seed, self.exclusion)

    def grid_spec(self) -> GridSpec:
        la = self.layer_avg if self.layer_avg is not None else tuple(range(self.shape.layers + 1))
        return GridSpec(la, self.sn, self.natsv_k, self.weightings, self.natsv_center,
                        self.sn_first)

    def validate(self) -> None:
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise ConfigError(f"manifest {self.manifest} does not exist")
        if self.weights is not None and not Path(self.weights).is_file():
            raise ConfigError(f"weights file {self.weights} does not exist")
        if self.target_size < self.tokenizer.base_size:
            raise ConfigError(f"target_size {self.target_size} < single-event vocabulary "
                              f"{self.tokenizer.base_size}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.sampler()
        self.grid_spec()
        for la in self.grid_spec().layer_avg:
            if la > self.shape.layers:
                raise ConfigError(f"layer_avg {la} > model layers {self.shape.layers}")


def _int_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path=None) -> RunConfig:
    """Read an INI run configuration; ``None`` falls back to ``$MUSICSIM_CONFIG``
    and then to defaults. Relative paths resolve against the file's folder."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(cp[section]) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {sorted(unknown)}")
    base = path.parent

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: [{section}] {key} = {raw!r}: {exc}") from None

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    cfg = RunConfig()
    cfg.manifest = get("paths", "manifest", rel, None)
    cfg.out = get("paths", "out", rel, base / "musicsim-out")
    try:
        cfg.tokenizer = TokenizerConfig(
            get("tokenizer", "time_shift_bin_ms", int, 10),
            get("tokenizer", "max_time_shift_bins", int, 100),
            get("tokenizer", "velocity_bins", int, 32),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg.target_size = get("tokenizer", "target_size", int, cfg.target_size)
    cfg.max_word_events = get("tokenizer", "max_word_events", int, cfg.max_word_events)
    layers = get("model", "layers", int, 12)
    context = get("model", "context", int, 1024)
    hidden = get("model", "hidden", int, 512)
    heads = get("model", "heads", int, 8)
    try:
        cfg.shape = ModelShape(layers, context, hidden, max(cfg.target_size, 1), heads)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    weights = get("model", "weights", str, "random").strip()
    cfg.weights = None if weights in ("", "random") else rel(weights)
    cfg.final_norm_last = get("model", "final_norm_last", _bool, True)
    cfg.stride = get("sampler", "stride", int, None)
    cfg.positives = get("sampler", "positives", int, cfg.positives)
    cfg.negatives = get("sampler", "negatives", int, cfg.negatives)
    cfg.exclusion = get("sampler", "exclusion", Exclusion, Exclusion.NONE)
    cfg.layer_avg = get("grid", "layer_avg", _int_list, None)
    cfg.sn = get("grid", "sn", lambda t: tuple(_bool(x) for x in t.split(",")), cfg.sn)
    cfg.natsv_k = get("grid", "natsv_k", _int_list, cfg.natsv_k)
    cfg.weightings = get("grid", "weightings",
                         lambda t: tuple(Weighting(x.strip()) for x in t.split(",")),
                         cfg.weightings)
    cfg.natsv_center = get("grid", "natsv_center", _bool, True)
    cfg.sn_first = get("grid", "sn_first", _bool, True)
    cfg.svg = get("grid", "svg", _bool, True)
    cfg.jobs = get("run", "jobs", int, 1)

    global_seed = get("run", "seed", int, None)
    if global_seed is not None:
        cfg = cfg.with_seed(global_seed)
    cfg.model_seed = get("model", "seed", int, cfg.model_seed)
    cfg.sampler_seed = get("sampler", "seed", int, cfg.sampler_seed)
    return cfg
