"""Workload configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..engine import EngineConfig
from ..observer import ObserverConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadConfig:
    warehouses: int = 1
    partitions: int = 1
    seed: int = 0
    districts: int = 10
    customers_per_district: int = 300
    items: int = 100_000
    orderlines_per_order: int = 10
    orderline_spread: int = 5  # ol_cnt uniform in mean +- spread
    string_length: int = 24
    zipf_s: float = 1.2
    name_pool_size: int = 88_800
    eager_compression: bool = False
    ordered_dict: bool = False
    initial_orders: int = 10_000
    settle_ticks: int = 6
    tick_every_tx: int = 1_000
    snapshot_every_tx: int = 40_000
    bucket_tx: int = 1_000
    chunk_capacity: int = 65_536
    freezing: bool = True
    rle: bool = True
    max_freezes_per_tick: int = 4
    page_size: int = 4096
    huge_page_size: int = 2 * 1024 * 1024
    q1_prefix: str = "B"
    q1_date: str = "2007-01-02 00:00:00"

    def __post_init__(self):
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if self.warehouses < 1 or self.districts < 1 or self.customers_per_district < 1:
            raise ConfigError("warehouses, districts and customers must be >= 1")
        if self.zipf_s < 0:
            raise ConfigError("zipf_s must be >= 0")
        if self.orderline_spread < 0 or self.orderlines_per_order - self.orderline_spread < 1:
            raise ConfigError("orderlines per order must stay >= 1")
        for name in ("tick_every_tx", "snapshot_every_tx", "bucket_tx", "name_pool_size", "items"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            chunk_capacity=self.chunk_capacity,
            observer=ObserverConfig(page_size=self.page_size, huge_page_size=self.huge_page_size),
            eager_compression=self.eager_compression,
            freezing_enabled=self.freezing,
            max_freezes_per_tick=self.max_freezes_per_tick,
            rle_enabled=self.rle,
        )

    def replace(self, **changes: Any) -> "WorkloadConfig":
        return dataclasses.replace(self, **changes)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind: type, text: str):
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if kind is int:
            return int(text.replace("_", ""))
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {text!r}") from None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


_FIELD_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type] for f in dataclasses.fields(WorkloadConfig)}


def parse_config(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, _FIELD_TYPES[key], value)
    return out


def load_config(path: str | Path | None = None, **overrides: Any) -> WorkloadConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return WorkloadConfig(**values)
