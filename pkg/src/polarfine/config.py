"""Run configuration: INI files in, fully resolved INI back out.

Sections map one-to-one onto the component configs ([model], [scene],
[train], [loss], [run]). Every key must name a known field; unknown
sections or keys, unparsable values, and values the component
constructors reject all raise ConfigInvalid. Field types are inferred
from the dataclass defaults, so the file format follows the code.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
import tempfile

from .losses import LossWeights
from .network import ModelConfig
from .synth import SceneConfig
from .train import TrainOptions


class ConfigInvalid(ValueError):
    """Raised for malformed or rejected run configuration."""


@dataclasses.dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    train_scenes: int = 120
    eval_scenes: int = 40
    score_thresh: float = 0.2
    eval_score_thresh: float = 0.05
    topk: int = 100
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.train_scenes < 1 or self.eval_scenes < 1:
            raise ValueError("scene counts must be positive")
        if not (0.0 <= self.nms_iou <= 1.0):
            raise ValueError("nms_iou must be in [0, 1]")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    scene: SceneConfig = SceneConfig()
    train: TrainOptions = TrainOptions()
    loss: LossWeights = LossWeights()
    run: RunSettings = RunSettings()


_SECTIONS = {"model": ModelConfig, "scene": SceneConfig,
             "train": TrainOptions, "loss": LossWeights, "run": RunSettings}


def _parse_scalar(raw: str, like, where: str):
    raw = raw.strip()
    if isinstance(like, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalid(f"{where}: expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigInvalid(f"{where}: cannot parse {raw!r}") from None
    if isinstance(like, tuple):
        if not raw:
            raise ConfigInvalid(f"{where}: empty list")
        try:
            return tuple(int(tok) for tok in raw.split(","))
        except ValueError:
            raise ConfigInvalid(f"{where}: expected comma-separated ints") from None
    return raw


def _field_defaults(cls) -> dict[str, object]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        else:
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"bad INI syntax: {exc}") from None

    built = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigInvalid(f"unknown section [{section}]")
        cls = _SECTIONS[section]
        defaults = _field_defaults(cls)
        values = {}
        for key, raw in parser.items(section):
            if key not in defaults:
                raise ConfigInvalid(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_scalar(raw, defaults[key], f"[{section}] {key}")
        try:
            built[section] = cls(**values)
        except ValueError as exc:
            raise ConfigInvalid(f"[{section}]: {exc}") from None
    return RunConfig(**built)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    for section, cls in _SECTIONS.items():
        instance = getattr(cfg, section)
        out.write(f"[{section}]\n")
        for f in dataclasses.fields(cls):
            out.write(f"{f.name} = {_format_value(getattr(instance, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
