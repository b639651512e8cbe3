"""Run configuration: a flat ``key = value`` text file with ``#`` comments."""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import features, net
from .vocoder import TrainConfig, VocoderKind


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # analysis
    sample_rate: int = 24000
    frame_ms: float = 20.0
    shift_ms: float = 5.0
    lpc_order: int = 40
    # network (toy scale by default)
    n_blocks: int = 2
    layers_per_block: int = 6
    kernel: int = 2
    residual_channels: int = 64
    gate_channels: int = 64
    skip_channels: int = 64
    n_classes: int = 256
    # training / synthesis
    kind: str = "excitnet"
    seed: int = 0
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 4800
    checkpoint_every: int = 0
    target_loss: float = None
    mode: str = "argmax"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("sample_rate", "lpc_order", "n_blocks", "layers_per_block", "kernel",
                     "residual_channels", "gate_channels", "skip_channels", "n_classes",
                     "steps", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.checkpoint_every < 0 or self.seed < 0:
            raise ConfigError("checkpoint_every and seed must be non-negative")
        if not 0 < self.shift_ms <= self.frame_ms:
            raise ConfigError("need 0 < shift_ms <= frame_ms")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        try:
            VocoderKind.parse(self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode not in ("argmax", "sample"):
            raise ConfigError(f"mode must be argmax or sample, got {self.mode!r}")
        try:
            self.net_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def analysis_config(self):
        return features.AnalysisConfig(self.sample_rate, self.frame_ms, self.shift_ms,
                                       self.lpc_order)

    def net_config(self):
        return net.NetConfig(self.n_blocks, self.layers_per_block, self.kernel,
                             self.residual_channels, self.gate_channels, self.skip_channels,
                             self.n_classes, features.FEATURE_DIM, self.seed)

    def train_config(self):
        return TrainConfig(self.steps, self.lr, self.batch_size, self.seed,
                           self.checkpoint_every, self.target_loss)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def dump(self):
        return "\n".join(f"{f.name} = {_format(getattr(self, f.name))}"
                         for f in dataclasses.fields(self))


def _format(v):
    return "none" if v is None else str(v)


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, text):
    typ = _TYPES[key]
    if text.lower() == "none":
        if key == "target_loss":
            return None
        raise ConfigError(f"{key} cannot be none")
    try:
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def parse_config(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, val)
    return RunConfig(**values)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))
