"""Run configuration dataclasses and the flat ``key=value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

SET_OPS = ("MEAN", "MAX", "NONE")
SEQ_OPS = ("GRU", "NONE")
HEAD_COMBINES = ("max", "mean", "concat")
SOFTMAX_SCOPES = ("per_type", "all")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReadoutConfig:
    set_op: str = "MAX"
    seq_op: str = "GRU"

    def __post_init__(self):
        if self.set_op not in SET_OPS or self.seq_op not in SEQ_OPS:
            raise ConfigError(f"bad readout {self.set_op}/{self.seq_op}")
        if self.set_op == "NONE" and self.seq_op == "NONE":
            raise ConfigError("readout needs at least one of set_op / seq_op")

    @classmethod
    def parse(cls, text: str) -> "ReadoutConfig":
        """Parse the ``MEAN``, ``GRU``, ``MAX+GRU`` style names."""
        parts = [p.strip().upper() for p in text.split("+") if p.strip()]
        set_op = next((p for p in parts if p in ("MEAN", "MAX")), "NONE")
        seq_op = "GRU" if "GRU" in parts else "NONE"
        if any(p not in ("MEAN", "MAX", "GRU") for p in parts) or len(parts) != (set_op != "NONE") + (seq_op != "NONE"):
            raise ConfigError(f"bad readout {text!r}")
        return cls(set_op, seq_op)

    def __str__(self):
        return "+".join(op for op in (self.set_op, self.seq_op) if op != "NONE")


@dataclass
class ModelConfig:
    num_items: int = 0
    dim: int = 256
    num_levels: int = 2
    num_layers: int = 1
    num_heads: int = 4
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    head_combine: str = "max"
    softmax_scope: str = "per_type"
    negative_slope: float = 0.2
    dropout: float = 0.1
    scale: float = 12.0
    l2_norm: bool = True
    normalize_session: bool = True
    use_intra_edges: bool = True
    use_inter_edges: bool = True
    use_renorm: bool = True
    use_ifr: bool = True

    def __post_init__(self):
        if isinstance(self.readout, str):
            self.readout = ReadoutConfig.parse(self.readout)
        if min(self.dim, self.num_levels, self.num_layers, self.num_heads) < 1:
            raise ConfigError("dim, num_levels, num_layers and num_heads must be >= 1")
        if self.head_combine not in HEAD_COMBINES:
            raise ConfigError(f"head_combine must be one of {HEAD_COMBINES}")
        if self.softmax_scope not in SOFTMAX_SCOPES:
            raise ConfigError(f"softmax_scope must be one of {SOFTMAX_SCOPES}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 3
    batch_size: int = 512
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    eval_k: int = 20

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.lr_decay_every < 1:
            raise ConfigError("lr, batch_size, epochs and lr_decay_every must be positive")
        if self.weight_decay < 0 or not 0 < self.lr_decay <= 1 or self.patience < 1:
            raise ConfigError("bad weight_decay / lr_decay / patience")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step schedule: multiply by ``lr_decay`` every ``lr_decay_every`` epochs."""
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, ReadoutConfig):
        return ReadoutConfig.parse(value)
    return value.strip()


MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"num_items"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_overrides(pairs: dict[str, str], model: ModelConfig | None = None,
                    train: TrainConfig | None = None, extra_keys=()):
    """Apply string overrides to copies of the configs; unknown keys raise."""
    model = dataclasses.replace(model or ModelConfig())
    train = dataclasses.replace(train or TrainConfig())
    extra = {}
    for key, value in pairs.items():
        try:
            if key in MODEL_KEYS:
                setattr(model, key, _coerce(value, getattr(model, key)))
            elif key in TRAIN_KEYS:
                setattr(train, key, _coerce(value, getattr(train, key)))
            elif key in extra_keys:
                extra[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    # re-run validation after mutation
    model.__post_init__()
    train.__post_init__()
    return model, train, extra


def read_config_file(path) -> dict[str, str]:
    pairs = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def config_to_pairs(model: ModelConfig, train: TrainConfig | None = None, **extra) -> dict[str, str]:
    pairs = {}
    for f in fields(model):
        pairs[f.name] = str(getattr(model, f.name))
    if train is not None:
        for f in fields(train):
            pairs[f.name] = str(getattr(train, f.name))
    pairs.update({k: str(v) for k, v in extra.items()})
    return pairs


def write_config_file(path, pairs: dict[str, str]):
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in pairs.items():
            fh.write(f"{k}={v}\n")
