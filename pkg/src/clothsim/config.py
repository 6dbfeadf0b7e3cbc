"""Scene configuration files.

Configs are TOML: human-readable, diffable, and deterministic experiment
records. ``parse_config`` and ``serialize_config`` round-trip exactly.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .stepper import StepConfig


class ConfigError(ValueError):
    pass


@dataclass
class MaterialConfig:
    density: float = 0.3
    stretch_stiffness: float = 160.0
    bend_stiffness: float = 3e-4


@dataclass
class SceneSection:
    kind: str = "free_fall"
    resolution: int = 32
    size: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "out"
    frame_stride: int = 10


@dataclass
class SceneConfig:
    name: str = "scene"
    steps: int = 100
    seed: int = 0
    scene: SceneSection = field(default_factory=SceneSection)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    solver: StepConfig = field(default_factory=StepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {
    "scene": SceneSection,
    "material": MaterialConfig,
    "output": OutputConfig,
    "solver": StepConfig,
}


def _build_section(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        if known[key].name == "gravity":
            value = tuple(float(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


def parse_config(text: str) -> SceneConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    top = {}
    for key in ("name", "steps", "seed"):
        if key in data:
            top[key] = data.pop(key)
    sections = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
        if not isinstance(value, dict):
            raise ConfigError(f"top-level key {key!r} is not a section")
        sections[key] = _build_section(_SECTIONS[key], value, key)
    return SceneConfig(**top, **sections)


def load_config(path) -> SceneConfig:
    return parse_config(Path(path).read_text())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value of type {type(v).__name__}")


def serialize_config(cfg: SceneConfig) -> str:
    lines = [
        f"name = {_format_value(cfg.name)}",
        f"steps = {_format_value(cfg.steps)}",
        f"seed = {_format_value(cfg.seed)}",
    ]
    for section in ("scene", "material", "solver", "output"):
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in asdict(getattr(cfg, section)).items():
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: SceneConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))
