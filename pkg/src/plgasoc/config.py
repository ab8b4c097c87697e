"""Experiment configuration stored as an INI file with a strict schema.

Every section maps onto one dataclass; unknown sections or keys are rejected
and floats are written with ``repr`` so that save/load round-trips exactly.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InputError
from .generation import SamplerConfig
from .model import ModelConfig
from .trainer import OptimizerConfig


@dataclass
class TrainConfig:
    batch_size: int = 8
    log_window: int = 100
    dk_window: int = 50  # trailing window of the loss-spike detector
    dk_ratio: float = 2.0
    dk_margin: float = 1.0
    prompt_words: int = 200
    max_corpus_bytes: int = 0  # 0 -> read everything

    def __post_init__(self):
        if self.batch_size < 1 or self.log_window < 1 or self.dk_window < 1 or self.prompt_words < 1:
            raise InputError("batch_size, log_window, dk_window and prompt_words must be >= 1")
        if not self.dk_ratio > 0 or self.dk_margin < 0:
            raise InputError("dk_ratio must be positive and dk_margin non-negative")
        if self.max_corpus_bytes < 0:
            raise InputError("max_corpus_bytes must be >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    model_id: str = "model"
    corpus_path: str = ""
    prompt_path: str = ""
    out_dir: str = "out"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: RunConfig = field(default_factory=RunConfig)

    def check_paths(self, base: Path | None = None) -> None:
        for key in ("corpus_path", "prompt_path"):
            value = getattr(self.experiment, key)
            if value and not resolve(value, base).exists():
                raise InputError(f"{key} does not exist: {value}")


SECTIONS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def resolve(path: str, base: Path | None = None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise FormatError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _field_types(cls) -> dict[str, type]:
    # annotations are strings under ``from __future__ import annotations``
    names = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: names[str(f.type)] for f in dataclasses.fields(cls)}


def dumps(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise FormatError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise FormatError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    for f in dataclasses.fields(ExperimentConfig):
        cls = f.default_factory
        types = _field_types(cls)
        values = {}
        if parser.has_section(f.name):
            for key, raw in parser.items(f.name):
                if key not in types:
                    raise FormatError(f"unknown key {f.name}.{key}")
                values[key] = _parse(raw, types[key], f"{f.name}.{key}")
        parts[f.name] = cls(**values)
    return ExperimentConfig(**parts)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def load_config(path, check_paths: bool = True) -> ExperimentConfig:
    """Parse ``path``; relative data paths are resolved against its directory."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    cfg = loads(path.read_text(encoding="utf-8"))
    if check_paths:
        cfg.check_paths(path.parent)
    return cfg
