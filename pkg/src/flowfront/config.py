"""Layered run configuration: built-in presets < TOML file < command-line overrides.

The file format is TOML with one table per component::

    [stft]
    window_ms = 8.0

    [trainer]
    beta = 0.25

Overrides use dotted keys (``trainer.beta=0.25``); values are parsed as TOML
literals and fall back to bare strings.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .asr import PAPER_ASR, AsrConfig
from .beamformer import PAPER_BEAMFORMER, BeamformerConfig
from .datasim import CorpusCounts, MixConfig, SynthConfig
from .dsp import PAPER_STFT, MelConfig, StftConfig
from .errors import ConfigurationError
from .melflow import PAPER_FLOW, FlowConfig


@dataclass(frozen=True)
class TrainConfig:
    """Joint-training knobs.

    ``clean_ratio`` is the probability that a scheduled batch is clean;
    ``freeze`` names modules (``asr``, ``nb``, ``de``) that never step.
    ``lr_decay`` is ``"constant"`` or ``"cosine"`` (anneal every learning
    rate to 5% of its base value over ``steps``).
    """

    beta: float = 0.25
    ctc_weight: float = 0.5
    seed: int = 0
    batch_size: int = 1
    steps: int = 1000
    lr: float = 2e-3
    flow_lr: float = 2e-3
    lr_decay: str = "constant"
    clip_norm: float = 5.0
    clean_ratio: float = 0.5
    random_channel_prob: float = 0.5
    label_condition: bool = True
    manifest: str = ""
    clean_manifest: str = ""
    noisy_manifest: str = ""
    clean_split: str = "train-clean"
    noisy_split: str = "train-noisy"
    flow_pretrain_steps: int = 0
    freeze: tuple = ()
    log_every: int = 50

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError(f"beta must be nonnegative, got {self.beta}")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ConfigurationError(f"ctc_weight must lie in [0, 1], got {self.ctc_weight}")
        if not 0.0 <= self.clean_ratio <= 1.0:
            raise ConfigurationError(f"clean_ratio must lie in [0, 1], got {self.clean_ratio}")
        if self.lr_decay not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_decay must be 'constant' or 'cosine', got {self.lr_decay!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        unknown = set(self.freeze) - {"asr", "nb", "de"}
        if unknown:
            raise ConfigurationError(f"unknown modules in freeze list: {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid of the comparison run: a baseline plus one proposed model per (beta, conditioning)."""

    betas: tuple = (0.25,)
    label_conditions: tuple = (True,)
    seeds: tuple = (0,)
    eval_split: str = "eval"
    clean_eval: bool = True
    score_sdr: bool = True


@dataclass(frozen=True)
class Config:
    stft: StftConfig = field(default_factory=StftConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    beamformer: BeamformerConfig = field(default_factory=BeamformerConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    asr: AsrConfig = field(default_factory=AsrConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    corpus: CorpusCounts = field(default_factory=CorpusCounts)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        if self.flow.n_mels != self.mel.n_mels:
            raise ConfigurationError(
                f"flow.n_mels ({self.flow.n_mels}) must equal mel.n_mels ({self.mel.n_mels})"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


PRESETS = {
    "desk": Config(),
    "paper": Config(
        stft=PAPER_STFT,
        mel=MelConfig(n_mels=80),
        beamformer=PAPER_BEAMFORMER,
        flow=PAPER_FLOW,
        asr=PAPER_ASR,
        mix=MixConfig(channels=5),
    ),
}


def _coerce(value, annotation, where: str):
    """Convert a TOML value to the type a dataclass field declares."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if annotation is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if annotation is str:
        return str(value)
    return value


def _merge_section(obj, updates: dict, section: str):
    hints = typing.get_type_hints(type(obj))
    known = {f.name for f in fields(obj)}
    changes = {}
    for key, value in updates.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {section}.{key}")
        changes[key] = _coerce(value, hints[key], f"{section}.{key}")
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section}]: {exc}") from exc


def merge(cfg: Config, updates: dict) -> Config:
    """Apply a nested {section: {key: value}} mapping on top of ``cfg``."""
    changes = {}
    known = {f.name for f in fields(cfg)}
    for section, body in updates.items():
        if section not in known:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        changes[section] = _merge_section(getattr(cfg, section), body, section)
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` -> (section, key, parsed value)."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form section.key=value")
    lhs, raw = text.split("=", 1)
    parts = lhs.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigurationError(f"override key {lhs!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def resolve(
    preset: str = "desk",
    path=None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
) -> Config:
    """Build the effective configuration from its layers."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]
    if path is not None:
        cfg = merge(cfg, load_toml(path))
    nested: dict[str, dict] = {}
    for text in overrides:
        section, key, value = parse_override(text)
        nested.setdefault(section, {})[key] = value
    if nested:
        cfg = merge(cfg, nested)
    if seed is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, seed=seed))
    return cfg


def dump_toml(cfg: Config) -> str:
    """Render a config as TOML (flat tables, no nesting beyond one level)."""
    lines = []
    for section, body in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in body.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot render {v!r} as TOML")
