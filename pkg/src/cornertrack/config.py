"""Tracker configuration: flat JSON keys with embedded defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .losses import LossWeights
from .selection import TrackerHyper

EXTRACTORS = ("toy", "oracle", "file")


class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


@dataclass(frozen=True)
class Config:
    eta: float = -0.1
    gamma: float = 0.3
    lr: float = 0.3
    top_n: int = 15
    t_wh: float = 0.5
    d: float = 0.5
    alpha: float = 2.0
    beta: float = 4.0
    lam: float = 1.0
    template_size: int = 127
    search_size: int = 255
    stride: int = 8
    nms_window: int = 3
    extractor: str = "oracle"
    params_path: str = ""
    seed: int = 0
    head_width: int = 16
    oracle_tolerance: float = 0.2

    def __post_init__(self):
        try:
            self.hyper()
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.template_size < 1 or self.search_size < self.template_size:
            raise ConfigError("need 1 <= template_size <= search_size")
        if self.stride < 1:
            raise ConfigError("stride must be positive")
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ConfigError("nms_window must be a positive odd integer")
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor must be one of {EXTRACTORS}, got {self.extractor!r}")
        if self.extractor == "file" and not self.params_path:
            raise ConfigError("extractor 'file' needs params_path")
        if self.head_width < 1:
            raise ConfigError("head_width must be positive")
        if self.oracle_tolerance <= 0:
            raise ConfigError("oracle_tolerance must be positive")

    def hyper(self) -> TrackerHyper:
        return TrackerHyper(eta=self.eta, gamma=self.gamma, lr=self.lr, n=self.top_n,
                            t_wh=self.t_wh, d=self.d)

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, lam=self.lam, radius_iou=self.d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(d) - set(types))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kw = {}
        for k, v in d.items():
            kind = types[k]
            if kind == "int" and not (isinstance(v, int) and not isinstance(v, bool)):
                raise ConfigError(f"{k} must be an integer")
            if kind == "float" and not (isinstance(v, (int, float)) and not isinstance(v, bool)):
                raise ConfigError(f"{k} must be a number")
            if kind == "str" and not isinstance(v, str):
                raise ConfigError(f"{k} must be a string")
            kw[k] = float(v) if kind == "float" else v
        return cls(**kw)

    def replace(self, **changes) -> "Config":
        merged = asdict(self)
        merged.update(changes)
        return Config.from_dict(merged)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return Config.from_dict(data)
