"""Experiment configuration: sectioned key-value files with strict keys.

Configs are INI text with one section per concern. Every key must match a
field of the section's spec dataclass; unknown sections or keys are hard
errors so a typo cannot silently fall back to a default. Values are coerced
by the field's annotated type (int, float, bool, str, or a comma list of
ints for subgraph sizes).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range configuration input."""


FEATURE_MODES = ("joint", "pretrained", "handcrafted")
REWARD_SUITES = ("circles", "ring", "supervised-dice", "mixed")
DATASET_KINDS = ("circles", "ring")


@dataclass
class DatasetSpec:
    """Scene source: a generator recipe, or a directory written by gen-data."""

    kind: str = "circles"
    data_dir: str = ""          # when set, read images/labels instead of generating
    count: int = 32
    size: int = 64
    min_objects: int = 5
    max_objects: int = 5
    radius_min: float = 6.0
    radius_max: float = 9.0
    boundary_perturb: float = 0.05
    noise: float = 0.03
    cells_min: int = 8          # ring scenes only
    cells_max: int = 12
    gradient_sigma: float = 1.2   # boundary evidence for the watershed
    watershed_sigma: float = 1.5  # seed-map smoothing


@dataclass
class FeatureSpec:
    """Node feature source for both networks."""

    mode: str = "joint"
    encoder_hidden: int = 16
    encoder_dim: int = 8
    boundary_sigma: float = 1.0  # smoothing of the superpixel-boundary channel
    encoder_path: str = ""       # frozen encoder for mode=pretrained; empty = train inline
    pretrain_epochs: int = 8
    pretrain_lr: float = 1e-3
    delta_v: float = 0.1
    delta_d: float = 1.0


@dataclass
class RewardSpec:
    """Reward suite selector plus the prior constants it needs.

    Zero-valued ring/box geometry fields are derived from the image size at
    run time; explicit values override.
    """

    suite: str = "supervised-dice"
    gamma: float = 0.8
    k: int = 5
    theta: float = 4.0
    r_min: float = 5.0
    r_max: float = 10.0
    global_scale: float = 0.5
    global_floor: float = 0.3
    ring_radius: float = 0.0
    box_long: float = 0.0
    box_short: float = 0.0
    tol_long: float = 0.0
    tol_short: float = 0.0
    tol_orient: float = 0.35


@dataclass
class AgentSpec:
    width: int = 32
    conv_layers: int = 3
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    temperature_lr: float = 1e-3
    batch_size: int = 4
    buffer_capacity: int = 512
    normalize_coverage: bool = False
    subgraph_sizes: tuple = (6, 12, 32)


@dataclass
class TrainSpec:
    steps: int = 5000
    eval_every: int = 250       # held-out reward cadence; also checkpoints
    seed: int = 0


@dataclass
class OutputSpec:
    out_dir: str = "run"


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    features: FeatureSpec = field(default_factory=FeatureSpec)
    rewards: RewardSpec = field(default_factory=RewardSpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    training: TrainSpec = field(default_factory=TrainSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def validate(self) -> "ExperimentConfig":
        d, f, r, a, t = (self.dataset, self.features, self.rewards,
                         self.agent, self.training)
        if d.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, "
                              f"got {d.kind!r}")
        if f.mode not in FEATURE_MODES:
            raise ConfigError(f"features.mode must be one of {FEATURE_MODES}, "
                              f"got {f.mode!r}")
        if r.suite not in REWARD_SUITES:
            raise ConfigError(f"rewards.suite must be one of {REWARD_SUITES}, "
                              f"got {r.suite!r}")
        if not d.data_dir:
            if d.count < 1:
                raise ConfigError(f"dataset.count must be >= 1, got {d.count}")
            if d.size < 8:
                raise ConfigError(f"dataset.size must be >= 8, got {d.size}")
            if d.min_objects < 1 or d.max_objects < d.min_objects:
                raise ConfigError("dataset object count range is invalid")
        if not a.subgraph_sizes:
            raise ConfigError("agent.subgraph_sizes must be non-empty")
        if any(s < 1 for s in a.subgraph_sizes):
            raise ConfigError(f"subgraph sizes must be positive, "
                              f"got {a.subgraph_sizes}")
        if len(set(a.subgraph_sizes)) != len(a.subgraph_sizes):
            raise ConfigError(f"subgraph sizes repeat: {a.subgraph_sizes}")
        for name, val in (("width", a.width), ("conv_layers", a.conv_layers),
                          ("batch_size", a.batch_size),
                          ("buffer_capacity", a.buffer_capacity)):
            if val < 1:
                raise ConfigError(f"agent.{name} must be >= 1, got {val}")
        if t.steps < 1 or t.eval_every < 1:
            raise ConfigError("training.steps and eval_every must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def snapshot(self) -> str:
        """Canonical JSON for manifests; key-sorted so equal configs match."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


_SECTIONS = {
    "dataset": DatasetSpec,
    "features": FeatureSpec,
    "rewards": RewardSpec,
    "agent": AgentSpec,
    "training": TrainSpec,
    "output": OutputSpec,
}


def _coerce(section: str, key: str, raw: str, target_type) -> object:
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is tuple:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as "
            f"{target_type.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown config section [{section}]; expected one of "
                f"{sorted(_SECTIONS)}")
        spec = getattr(cfg, section)
        known = {f.name: f.type for f in fields(spec)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]; expected one of "
                    f"{sorted(known)}")
            ftype = known[key]
            if isinstance(ftype, str):  # postponed annotations come as text
                ftype = {"int": int, "float": float, "bool": bool,
                         "str": str, "tuple": tuple}[ftype]
            setattr(spec, key, _coerce(section, key, raw, ftype))
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def render_config(cfg: ExperimentConfig) -> str:
    """ExperimentConfig back to INI text (round-trips through parse_config)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, _ in _SECTIONS.items():
        spec = getattr(cfg, section)
        parser[section] = {}
        for f in fields(spec):
            val = getattr(spec, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            parser[section][f.name] = str(val)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
