"""Run configuration: flat ``key = value`` files with ``#`` comments.

Every key maps to a field of :class:`RunConfig`.  Values given on the command
line override values read from a file, which override the defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, UsageError
from .model import LoTeNetConfig, shape_plan
from .tensor_core import PRECISIONS
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    input: str = "auto"
    layers: int = 2
    kernel: int = 2
    beta: int = 5
    classes: int = 2
    shared: bool = False
    init_noise: float = 1e-2
    # training
    lr: float = 5e-4
    batch: int = 512
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    precision: str = "narrow"
    eval_batch: int = 256
    augment: bool = False
    # data
    data: str = ""
    synth_count: int = 2000
    synth_size: int = 16
    synth_seed: int = 1
    split: str = "0.6,0.2,0.2"
    split_seed: int = 1
    # outputs and subcommand options
    out: str = "runs"
    betas: str = "2,4,6,8,10"
    tolerance: float = 1e-4
    record_time: bool = False

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.input != "auto":
            parse_input(self.input)
        self.split_fractions()

    def split_fractions(self) -> list[float]:
        try:
            parts = [float(p) for p in self.split.split(",")]
        except ValueError:
            raise ConfigError(f"split must be comma-separated fractions, got {self.split!r}") from None
        if len(parts) not in (2, 3) or any(p <= 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError(f"split needs 2 or 3 positive fractions summing to 1, got {self.split!r}")
        return parts

    def beta_list(self) -> list[int]:
        try:
            values = [int(b) for b in self.betas.split(",") if b.strip()]
        except ValueError:
            raise ConfigError(f"betas must be comma-separated integers, got {self.betas!r}") from None
        if not values:
            raise ConfigError("betas is empty")
        dupes = sorted({b for b in values if values.count(b) > 1})
        if dupes:
            raise ConfigError(f"duplicate bond dimensions in betas: {dupes}")
        if min(values) < 1:
            raise ConfigError(f"bond dimensions must be >= 1, got {values}")
        return values

    def input_shape(self, fallback: tuple[int, int, int] | None = None) -> tuple[int, int, int]:
        if self.input != "auto":
            return parse_input(self.input)
        if fallback is not None:
            return fallback
        return (self.synth_size, self.synth_size, 1)

    def model_config(self, input_shape: tuple[int, int, int] | None = None) -> LoTeNetConfig:
        h, w, c = input_shape if input_shape is not None else self.input_shape()
        cfg = LoTeNetConfig(h, w, c, self.layers, self.kernel, self.beta, self.classes, self.shared)
        shape_plan(cfg)
        return cfg

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(self.lr, self.batch, self.patience, self.max_epochs, self.seed,
                               self.precision, self.eval_batch)
        except UsageError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))


def parse_input(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        dims = ()
    if len(dims) == 2:
        dims = dims + (1,)
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"input must look like HxW or HxWxC, got {text!r}")
    return dims


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(name: str, raw: str):
    """Convert text to the type of field ``name``."""
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown configuration key {name!r}")
    kind = types[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {line_no}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source} line {line_no}: {exc}") from None
    return values


def load_config(path=None, overrides: dict | None = None, base: RunConfig | None = None) -> RunConfig:
    """Defaults (or ``base``), then the file at ``path``, then ``overrides``."""
    values = dataclasses.asdict(base) if base is not None else {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_text(text, str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
