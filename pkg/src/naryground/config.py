"""Model/training configuration with paper-default constants, plus the flat
key-value config file format shared by the CLI commands."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

from .generator import GenConfig

ABLATIONS = ("full", "binary_only", "fully_connected", "no_graph")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128  # feature dim C
    heads: int = 8
    k1: int = 16
    k2: int = 16
    mlp_hidden: int | None = None  # defaults to dim
    dropout: float = 0.1
    dim_2d: int = 64  # toy 2D feature width, mapped into dim by the fusion MLP
    noise_sigma: float = 0.1
    text_layers: int = 2
    max_text_len: int = 32
    gat_self_loop: bool = True

    def __post_init__(self):
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden", self.dim)
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim={self.dim} not divisible by heads={self.heads}")
        if self.k2 > self.k1 * (self.k1 + 1) // 2:
            raise ConfigError(
                f"k2={self.k2} exceeds k1*(k1+1)/2={self.k1 * (self.k1 + 1) // 2}"
            )
        for name in ("dim", "heads", "k1", "k2", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def check_scene_size(self, n_objects: int) -> None:
        if self.k1 > n_objects * (n_objects - 1):
            raise ConfigError(
                f"k1={self.k1} exceeds ordered pair count "
                f"{n_objects * (n_objects - 1)} for N={n_objects}"
            )


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 0.1  # text classification weight
    lambda2: float = 0.5  # object classification weight
    lambda3: float = 2.0  # binary + n-ary relational weight
    batch_size: int = 20
    epochs: int = 60  # paper schedule runs 150 at full scale
    lr0: float = 5e-4
    decay: float = 0.65
    decay_every: int = 10
    decay_start: int = 30
    decay_end: int = 80
    seed: int = 0
    ablation: str = "full"
    hard_threshold: int = 2  # distractor count at which a scene counts as hard
    lref_over_all_objects: bool = False
    early_stop_acc: float | None = None  # stop once val accuracy reaches this

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        for name in ("lambda1", "lambda2", "lambda3", "batch_size", "epochs", "lr0", "decay"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


# --- flat key-value config files ---------------------------------------------
#
# One `key = value` (or `key: value`) pair per line; `#` starts a comment.
# Ranges use `lo..hi`, vectors use comma-separated floats.


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, val = line.partition(sep)
                break
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip().lower()
        val = val.strip()
        if not key or not val:
            raise ConfigError(f"line {lineno}: empty key or value")
        values[key] = val
    return values


def load_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _coerce(name: str, raw: str, target_type: Any) -> Any:
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type == tuple[int, int]:
            lo, _, hi = raw.partition("..")
            if not _:
                raise ValueError("expected 'lo..hi'")
            return (int(lo), int(hi))
        if target_type == tuple[float, float, float]:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError("expected three comma-separated floats")
            return tuple(parts)
    except ValueError as err:
        raise ConfigError(f"config key {name!r}: {err}") from None
    raise ConfigError(f"config key {name!r}: unsupported type {target_type}")


_OPTIONAL_FLOAT_KEYS = ("early_stop_acc",)
_OPTIONAL_INT_KEYS = ("mlp_hidden",)


def _from_mapping(cls, values: dict[str, str]):
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw = values[f.name]
        if f.name in _OPTIONAL_FLOAT_KEYS:
            kwargs[f.name] = None if raw.lower() == "none" else float(raw)
        elif f.name in _OPTIONAL_INT_KEYS:
            kwargs[f.name] = None if raw.lower() == "none" else int(raw)
        else:
            kwargs[f.name] = _coerce(f.name, raw, _FIELD_TYPES[cls][f.name])
    return cls(**kwargs)


def _field_types(cls) -> dict[str, Any]:
    import typing

    hints = typing.get_type_hints(cls)
    out = {}
    for f in fields(cls):
        t = hints[f.name]
        origin = typing.get_origin(t)
        if origin is typing.Union:  # Optional[...]
            args = [a for a in typing.get_args(t) if a is not type(None)]
            t = args[0]
        out[f.name] = t
    return out


_FIELD_TYPES = {}
for _cls in (ModelConfig, TrainConfig, GenConfig):
    _FIELD_TYPES[_cls] = _field_types(_cls)


def model_config_from(values: dict[str, str]) -> ModelConfig:
    return _from_mapping(ModelConfig, values)


def train_config_from(values: dict[str, str]) -> TrainConfig:
    return _from_mapping(TrainConfig, values)


def gen_config_from(values: dict[str, str]) -> GenConfig:
    return _from_mapping(GenConfig, values)
