"""Experiment configuration: nested dataclasses with a canonical JSON form.

Relative paths are resolved against a base directory (the directory of the
config file, or the working directory for the built-in defaults).  The
serialized form keeps paths exactly as written so that the resolved config
saved next to the outputs does not depend on where the run happened.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .evaluation import Margin
from .features import FEATURE_ORDER, FrameSpec
from .nn.network import NetworkConfig
from .postprocess import TRIGGER_MODES
from .synth import SynthParams


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    corpus_dir: str = "run/corpus"
    cache_dir: str = "run/features"
    model_path: str = "run/model.bcnn"
    output_dir: str = "run/out"


@dataclass
class FeaturesConfig:
    names: list[str] = field(default_factory=lambda: ["power", "pitch", "variation"])
    window: float = 0.032
    shift: float = 0.010
    normalization: str = "conversation"
    pitch_mode: str = "semitone"
    embedding_file: str | None = None
    embedding_dim: int = 30


@dataclass
class ContextConfig:
    width: float = 1.5
    stride: int = 2


@dataclass
class DatasetConfig:
    lexicon_size: int = 150
    train_frac: float = 0.82
    valid_frac: float = 0.08
    eval_frac: float = 0.10
    neg_offset: float = 2.0
    sliding: int = 0


@dataclass
class NetworkSection:
    kind: str = "lstm"
    hidden_sizes: list[int] = field(default_factory=lambda: [70, 35])
    activation: str = "tanh"
    l2: float = 1e-4
    dropout: float = 0.0
    init: str = "glorot"
    optimizer: str = "adam"
    learning_rate: float | None = None


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 64
    patience: int = 10
    float32_inference: bool = False


@dataclass
class PostprocessConfig:
    sigma: float = 0.3
    cutoff_c: float = 1.0
    threshold: float = 0.5
    mode: str = "area_start"
    tune: bool = True
    method: str = "bayes"
    budget: int = 40
    resolution: int = 8
    sigma_bounds: list[float] = field(default_factory=lambda: [0.01, 1.0])
    cutoff_bounds: list[float] = field(default_factory=lambda: [0.0, 2.0])
    threshold_bounds: list[float] = field(default_factory=lambda: [0.0, 1.0])
    modes: list[str] = field(default_factory=lambda: list(TRIGGER_MODES))
    tune_margin: list[float] = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class EvalConfig:
    margins: list[list[float]] = field(default_factory=lambda: [[0.0, 1.0], [-0.2, 0.2], [-0.5, 0.5]])
    monologuing_only: bool = True
    baseline_multipliers: list[int] = field(default_factory=lambda: [1, 8])


@dataclass
class SeedsConfig:
    synth: int = 1
    split: int = 1
    dataset: int = 1
    network: int = 1
    tune: int = 1
    baseline: int = 1


@dataclass
class ExperimentConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: dict = field(default_factory=dict)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    jobs: int = 1
    base_dir: str = field(default=".", metadata={"serialize": False})

    # -- derived objects -------------------------------------------------

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def synth_params(self) -> SynthParams:
        return SynthParams(**{**self.synth, "seed": self.seeds.synth})

    def frame_spec(self) -> FrameSpec:
        return FrameSpec(window=self.features.window, shift=self.features.shift)

    def margins(self) -> list[Margin]:
        return [Margin(float(lo), float(hi)) for lo, hi in self.eval.margins]

    def network_config(self, feature_dim: int, n_rows: int) -> NetworkConfig:
        n = self.network
        input_dim = feature_dim if n.kind == "lstm" else feature_dim * n_rows
        return NetworkConfig(
            kind=n.kind,
            hidden_sizes=tuple(n.hidden_sizes),
            input_dim=input_dim,
            activation=n.activation,
            l2=n.l2,
            dropout=n.dropout,
            init=n.init,
            optimizer=n.optimizer,
            learning_rate=n.learning_rate,
            seed=self.seeds.network,
        )

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        try:
            self.synth_params().validate()
            self.frame_spec()
            self.margins()
            self.network_config(1, 1).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        f = self.features
        if not f.names:
            raise ConfigError("features.names is empty")
        for name in f.names:
            if name not in FEATURE_ORDER:
                raise ConfigError(f"unknown feature {name!r}")
        if len(set(f.names)) != len(f.names):
            raise ConfigError("duplicate feature names")
        if f.normalization not in ("conversation", "running", "none"):
            raise ConfigError(f"unknown normalization {f.normalization!r}")
        if f.pitch_mode not in ("semitone", "hz"):
            raise ConfigError(f"unknown pitch mode {f.pitch_mode!r}")
        if "word" in f.names and f.embedding_dim < 1:
            raise ConfigError("embedding_dim must be positive")
        if f.embedding_file is not None and not self.resolve(f.embedding_file).exists():
            raise ConfigError(f"embedding file not found: {self.resolve(f.embedding_file)}")
        if self.context.stride < 1 or self.context.width < f.shift * self.context.stride - 1e-9:
            raise ConfigError("context width must cover at least one strided frame")
        d = self.dataset
        fracs = (d.train_frac, d.valid_frac, d.eval_frac)
        if any(x < 0 for x in fracs) or abs(sum(fracs) - 1) > 1e-9:
            raise ConfigError("split fractions must be non-negative and sum to 1")
        if d.lexicon_size < 1 or d.neg_offset <= 0 or d.sliding < 0:
            raise ConfigError("dataset: lexicon_size >= 1, neg_offset > 0, sliding >= 0 required")
        t = self.training
        if t.epochs < 1 or t.batch_size < 1 or t.patience < 1:
            raise ConfigError("training: epochs, batch_size and patience must be >= 1")
        p = self.postprocess
        if p.mode not in TRIGGER_MODES or not p.modes or any(m not in TRIGGER_MODES for m in p.modes):
            raise ConfigError(f"trigger modes must be in {TRIGGER_MODES}")
        if not p.sigma > 0 or p.cutoff_c < 0 or not 0 <= p.threshold <= 1:
            raise ConfigError("postprocess: sigma > 0, cutoff_c >= 0, threshold in [0, 1] required")
        if p.method not in ("bayes", "grid") or p.budget < 2 or p.resolution < 2:
            raise ConfigError("postprocess: method bayes|grid, budget >= 2, resolution >= 2 required")
        for name in ("sigma_bounds", "cutoff_bounds", "threshold_bounds", "tune_margin"):
            b = getattr(p, name)
            if len(b) != 2 or b[0] > b[1]:
                raise ConfigError(f"postprocess.{name} must be [lo, hi] with lo <= hi")
        if not self.eval.margins:
            raise ConfigError("eval.margins is empty")
        if any(m < 1 for m in self.eval.baseline_multipliers):
            raise ConfigError("baseline multipliers must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if not f.metadata.get("serialize", True):
                continue
            v = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
        types = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in types or not types[key].metadata.get("serialize", True):
                raise ConfigError(f"unknown config section {key!r}")
            default = getattr(cls(), key)
            if dataclasses.is_dataclass(default):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                allowed = {f.name for f in dataclasses.fields(default)}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
                kwargs[key] = dataclasses.replace(default, **value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        if not isinstance(cfg.synth, dict):
            raise ConfigError("section 'synth' must be an object")
        allowed = {f.name for f in dataclasses.fields(SynthParams)} - {"seed"}
        bad = set(cfg.synth) - allowed
        if bad:
            raise ConfigError(f"unknown keys in 'synth': {sorted(bad)}")
        return cfg

    @classmethod
    def from_json(cls, text: str, base_dir: str | Path = ".") -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_json(path.read_text(encoding="utf-8"), base_dir=path.parent)


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``section.key=value`` to a config dict; ``value`` is JSON or a bare string."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-object {p!r}")
    node[parts[-1]] = value
