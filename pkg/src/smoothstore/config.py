"""Run configuration and reproducible random streams."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from .rangestore import ConfigurationError


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator per named stream, stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(stream.encode())]))


@dataclass
class RunConfig:
    n: int = 1_000_000
    N: int = 1_000_000
    L: int = 4096
    Z: int = 512
    alpha: float = 2.0
    theta: int = 5
    eps: float = 1.0
    lam: float = 512.0
    k: int = 8
    batch_size: int = 0            # 0 = 3 * n * selectivity / Z
    selectivity: float = 0.005
    rate: float = 0.0              # batches per second, 0 = back-to-back
    policy: str = "constant"
    seed: int = 0
    backend: str = "memory"        # memory | file:<path> | tcp:<host>:<port>

    def validate(self) -> "RunConfig":
        if self.Z < 1 or self.L < 1 or self.N < 1:
            raise ConfigurationError("Z, L and N must be positive")
        if self.alpha < 1:
            raise ConfigurationError("alpha must be at least 1")
        if self.theta < 0:
            raise ConfigurationError("theta must be non-negative")
        if self.eps <= 0 or self.lam < 4:
            raise ConfigurationError("need eps > 0 and lambda >= 4")
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        if self.rate < 0:
            raise ConfigurationError("rate must be non-negative")
        return self

    def effective_batch_size(self) -> int:
        if self.batch_size > 0:
            return self.batch_size
        from .smoothing import optimal_batch_size
        return optimal_batch_size(self.n, self.Z, self.selectivity)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    def update(self, values: dict) -> "RunConfig":
        """Apply string or typed values by field name (config file / CLI overrides)."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        out = self
        for name, raw in values.items():
            name = {"lambda": "lam", "bucket_size": "Z", "bucket-size": "Z"}.get(name, name)
            if name not in types:
                raise ConfigurationError(f"unknown config key {name!r}")
            cur = getattr(self, name)
            try:
                val = type(cur)(raw) if not isinstance(raw, type(cur)) else raw
            except ValueError:
                raise ConfigurationError(f"bad value {raw!r} for {name}") from None
            out = dataclasses.replace(out, **{name: val})
        return out.validate()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            values[key.strip()] = val.strip()
    return values
