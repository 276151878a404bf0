"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .dfl import DflConfig, default_scales
from .graph import HybridGraphConfig


class ConfigError(ValueError):
    pass


# config-file key -> attribute name, where they differ
KEY_ALIASES = {"N": "n_scales", "K": "mp_iterations", "lambda": "lam"}
ATTR_KEYS = {v: k for k, v in KEY_ALIASES.items()}

REDUCTIONS = ("mean", "sum")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    batch: int = 8
    crop: int = 64
    lam: float = 0.001
    iterations: int = 500
    seed: int = 0
    n_scales: int = 3
    mp_iterations: int = 3
    width_multiplier: Fraction = Fraction(1, 8)
    node_channels: int = 8
    back_end_dilation: int = 2
    adapter_hidden: int = 16
    scales: Optional[list[int]] = None
    sigma: float = 4.0
    sigma_loc: float = 1.0
    enable_cross_domain: bool = True
    enable_adapter: bool = True
    reduction: str = "mean"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.width_multiplier = Fraction(self.width_multiplier).limit_denominator(1 << 16)
        if self.scales is None:
            self.scales = default_scales(self.n_scales)
        self.scales = [int(s) for s in self.scales]
        self.validate()

    def validate(self) -> None:
        positive = ("lr", "beta1", "beta2", "epsilon", "batch", "crop", "iterations", "n_scales",
                    "width_multiplier", "node_channels", "back_end_dilation", "adapter_hidden",
                    "sigma", "sigma_loc")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{ATTR_KEYS.get(name, name)} must be positive, got {getattr(self, name)}")
        for name in ("lam", "weight_decay", "seed", "mp_iterations", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{ATTR_KEYS.get(name, name)} must be >= 0")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must be < 1")
        if len(self.scales) != self.n_scales:
            raise ConfigError(f"scales lists {len(self.scales)} bins but N = {self.n_scales}")
        if self.crop % 8:
            raise ConfigError("crop must be a multiple of 8")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}")

    def dfl_config(self) -> DflConfig:
        return DflConfig(
            width_multiplier=self.width_multiplier,
            scales=list(self.scales),
            node_channels=self.node_channels,
            back_end_dilation=self.back_end_dilation,
        )

    def graph_config(self) -> HybridGraphConfig:
        return HybridGraphConfig(
            n_scales=self.n_scales,
            iterations=self.mp_iterations,
            channels=self.node_channels,
            enable_cross_domain=self.enable_cross_domain,
            enable_adapter=self.enable_adapter,
            lam=self.lam,
            adapter_hidden=self.adapter_hidden,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(TrainConfig)}


def _parse_value(key: str, attr: str, raw: str, ftype: str):
    try:
        if "bool" in ftype:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if "Fraction" in ftype:
            return Fraction(raw)
        if "list" in ftype:
            return [int(v) for v in raw.replace(",", " ").split()]
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = _field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        attr = KEY_ALIASES.get(key, key)
        if attr not in types or key in ATTR_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if attr in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[attr] = _parse_value(key, attr, raw, types[attr])
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: TrainConfig) -> str:
    lines = []
    for attr, value in config.to_dict().items():
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{ATTR_KEYS.get(attr, attr)} = {value}")
    return "\n".join(lines) + "\n"
