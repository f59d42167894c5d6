"""Relation schemas and the mapping between external and stored values.

Stored (internal) representations:

* ``int32`` / ``int64``: Python ``int`` in a fixed-width numpy column.
* ``decimal(p,s)``: integer scaled by ``10**s`` in an ``int64`` column.
* ``timestamp``: microseconds since the Unix epoch in an ``int64`` column.
* ``char(n)`` / ``varchar(n)``: UTF-8 bytes, fixed ``n``-byte slots.
"""

from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Any, Sequence

import numpy as np

EPOCH = _dt.datetime(1970, 1, 1)
_MICRO = _dt.timedelta(microseconds=1)


class SchemaError(ValueError):
    """Raised for malformed schemas or values that do not fit them."""


class Kind(Enum):
    INT32 = "int32"
    INT64 = "int64"
    DECIMAL = "decimal"
    CHAR = "char"
    VARCHAR = "varchar"
    TIMESTAMP = "timestamp"


_INT_BOUNDS = {
    Kind.INT32: (-(2**31), 2**31 - 1),
    Kind.INT64: (-(2**63), 2**63 - 1),
}


@dataclass(frozen=True)
class AttrType:
    kind: Kind
    length: int = 0  # char/varchar byte length, decimal precision
    scale: int = 0  # decimal only

    def __post_init__(self):
        if self.kind in (Kind.CHAR, Kind.VARCHAR) and self.length < 1:
            raise SchemaError(f"{self.kind.value} length must be >= 1")
        if self.kind is Kind.DECIMAL and not (0 <= self.scale <= self.length <= 18):
            raise SchemaError("decimal requires 0 <= scale <= precision <= 18")

    @classmethod
    def parse(cls, text: str) -> "AttrType":
        """Parse ``int32``, ``decimal(6,2)``, ``char(24)`` and friends."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*", text)
        if not m:
            raise SchemaError(f"cannot parse type {text!r}")
        name, a, b = m.group(1).lower(), m.group(2), m.group(3)
        try:
            kind = Kind(name)
        except ValueError:
            raise SchemaError(f"unknown type {name!r}") from None
        if kind in (Kind.CHAR, Kind.VARCHAR):
            if a is None or b is not None:
                raise SchemaError(f"{name} needs exactly one length")
            return cls(kind, int(a))
        if kind is Kind.DECIMAL:
            if a is None:
                raise SchemaError("decimal needs a precision")
            return cls(kind, int(a), int(b or 0))
        if a is not None:
            raise SchemaError(f"{name} takes no parameters")
        return cls(kind)

    @property
    def is_string(self) -> bool:
        return self.kind in (Kind.CHAR, Kind.VARCHAR)

    @property
    def dtype(self) -> np.dtype:
        if self.is_string:
            return np.dtype(f"S{self.length}")
        if self.kind is Kind.INT32:
            return np.dtype(np.int32)
        return np.dtype(np.int64)

    @property
    def width(self) -> int:
        """Bytes per uncompressed element."""
        return self.dtype.itemsize

    def __str__(self) -> str:
        if self.is_string:
            return f"{self.kind.value}({self.length})"
        if self.kind is Kind.DECIMAL:
            return f"decimal({self.length},{self.scale})"
        return self.kind.value

    # -- conversion -------------------------------------------------------

    def to_internal(self, value: Any):
        kind = self.kind
        if kind is Kind.INT32 or kind is Kind.INT64:
            if type(value) is not int:
                if isinstance(value, (bool, float)) or not isinstance(value, (int, np.integer)):
                    raise SchemaError(f"expected integer for {self}, got {value!r}")
                value = int(value)
            lo, hi = _INT_BOUNDS[kind]
            if not lo <= value <= hi:
                raise SchemaError(f"{value} out of range for {self}")
            return value
        if self.is_string:
            if isinstance(value, str):
                raw = value.encode("utf-8")
            elif isinstance(value, bytes):
                raw = value
            else:
                raise SchemaError(f"expected string for {self}, got {value!r}")
            if len(raw) > self.length:
                raise SchemaError(f"{value!r} longer than {self}")
            if raw.endswith(b"\x00"):
                raise SchemaError("string values may not end in NUL")
            return raw
        if kind is Kind.DECIMAL:
            if isinstance(value, bool):
                raise SchemaError(f"expected decimal for {self}, got {value!r}")
            if isinstance(value, int):
                scaled = value * 10**self.scale
            elif isinstance(value, (Decimal, str)):
                d = Decimal(value).scaleb(self.scale)
                if d != d.to_integral_value():
                    raise SchemaError(f"{value} has more than {self.scale} decimals")
                scaled = int(d)
            else:
                raise SchemaError(f"expected decimal for {self}, got {value!r}")
            if abs(scaled) >= 10**self.length:
                raise SchemaError(f"{value} exceeds precision of {self}")
            return scaled
        # timestamp
        if isinstance(value, _dt.datetime):
            return (value - EPOCH) // _MICRO
        if isinstance(value, str):
            return (_dt.datetime.fromisoformat(value) - EPOCH) // _MICRO
        raise SchemaError(f"expected datetime for {self}, got {value!r}")

    def to_external(self, raw):
        kind = self.kind
        if kind is Kind.INT32 or kind is Kind.INT64:
            return int(raw)
        if self.is_string:
            return bytes(raw).decode("utf-8")
        if kind is Kind.DECIMAL:
            return Decimal(int(raw)).scaleb(-self.scale)
        return EPOCH + _dt.timedelta(microseconds=int(raw))


@dataclass(frozen=True)
class Attribute:
    name: str
    type: AttrType


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]
    primary_key: tuple[int, ...]
    _positions: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate attribute name(s): {', '.join(dup)}")
        if not self.attributes:
            raise SchemaError("schema needs at least one attribute")
        if not self.primary_key:
            raise SchemaError("primary key must not be empty")
        for i in self.primary_key:
            if not 0 <= i < len(self.attributes):
                raise SchemaError(f"primary key index {i} out of range")
        object.__setattr__(self, "_positions", {n: i for i, n in enumerate(names)})

    @classmethod
    def of(cls, columns: Sequence[tuple[str, str | AttrType]], primary_key: Sequence[str]) -> "Schema":
        """Build from ``[(name, "type"), ...]`` and primary-key names."""
        attrs = tuple(
            Attribute(n, t if isinstance(t, AttrType) else AttrType.parse(t)) for n, t in columns
        )
        pos = {a.name: i for i, a in enumerate(attrs)}
        try:
            pk = tuple(pos[n] for n in primary_key)
        except KeyError as e:
            raise SchemaError(f"primary key attribute {e.args[0]!r} not in schema") from None
        return cls(attrs, pk)

    def __len__(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def index_of(self, attr: int | str) -> int:
        if isinstance(attr, int):
            if not 0 <= attr < len(self.attributes):
                raise SchemaError(f"attribute index {attr} out of range")
            return attr
        try:
            return self._positions[attr]
        except KeyError:
            raise SchemaError(f"unknown attribute {attr!r}") from None

    def string_attributes(self) -> list[int]:
        return [i for i, a in enumerate(self.attributes) if a.type.is_string]

    def row_width(self) -> int:
        return sum(a.type.width for a in self.attributes)
