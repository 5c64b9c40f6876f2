"""Line-oriented ``key = value`` run configuration.

Keys are dotted (``model.routing_iterations = 3``), ``#`` starts a comment,
and every key must be known.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentSpec
from .model import ArchitectureConfig, MarginLossConfig


class ConfigError(ValueError):
    pass


def parse_lines(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Return {key: (raw value, line number)}."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = (value, lineno)
    return out


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(","))


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(","))


@dataclass(frozen=True)
class OptimSettings:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    batch_size: int = 16
    folds: int = 5
    augment: bool = True
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass(frozen=True)
class PathSettings:
    data_root: str = ""
    manifest: str = ""
    output_dir: str = ""
    reference_image: str = ""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    loss: MarginLossConfig = field(default_factory=MarginLossConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    optim: OptimSettings = field(default_factory=OptimSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}"]
        for section in ("model", "loss", "augment", "optim", "train", "paths"):
            obj = getattr(self, section)
            for f in fields(obj):
                if section == "augment" and f.name == "seed":
                    continue
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = str(value).lower()
                lines.append(f"{section}.{f.name} = {value}")
        return "\n".join(lines) + "\n"


_SECTIONS = {
    "model": ArchitectureConfig,
    "loss": MarginLossConfig,
    "augment": AugmentSpec,
    "optim": OptimSettings,
    "train": TrainSettings,
    "paths": PathSettings,
}


def _converter(section: str, name: str, default):
    if name in ("conv_channels", "conv_strides"):
        return _ints
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _floats
    return str


def from_mapping(items: dict[str, tuple[str, int]], source: str = "<config>",
                 base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    updates: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    seed = base.seed
    for key, (raw, lineno) in items.items():
        where = f"{source}:{lineno}"
        if key == "seed":
            try:
                seed = int(raw)
            except ValueError:
                raise ConfigError(f"{where}: seed must be an integer, got {raw!r}") from None
            continue
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        known = {f.name for f in fields(cls)} if cls else set()
        if cls is None or name not in known or (section == "augment" and name == "seed"):
            raise ConfigError(f"{where}: unknown key {key!r}")
        default = getattr(getattr(base, section), name)
        try:
            updates[section][name] = _converter(section, name, default)(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    kwargs = {}
    for section, cls in _SECTIONS.items():
        current = getattr(base, section)
        extra = dict(updates[section])
        if section == "augment":
            extra["seed"] = seed
        try:
            kwargs[section] = replace(current, **extra)
        except (ValueError, KeyError) as exc:
            lines = sorted(items[f"{section}.{k}"][1] for k in updates[section]) or [0]
            raise ConfigError(f"{source}:{lines[0]}: invalid {section} settings: {exc}") from None
    return RunConfig(seed=seed, **kwargs)


def loads(text: str, source: str = "<config>", overrides: list[str] | None = None) -> RunConfig:
    items = parse_lines(text, source)
    for i, ov in enumerate(overrides or []):
        parsed = parse_lines(ov, f"--set #{i + 1}")
        for key, (value, _) in parsed.items():
            items[key] = (value, 0)
    return from_mapping(items, source)


def load(path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, str(path), overrides)
