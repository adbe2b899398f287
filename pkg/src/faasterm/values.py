"""Value model for function bodies.

Every value carries a provenance set: the ids of the events whose
processing contributed to it. Provenance is ignored by ``==`` so that
``Hash(Int(42))`` compares equal regardless of which event computed it;
use :func:`canon` when provenance must be compared too.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable

__all__ = [
    "Value", "Undefined", "Bool", "Int", "Str", "Record", "List", "ErrorVal",
    "Hash", "Stored", "UNDEFINED", "record", "from_python", "to_json", "from_json",
    "display", "canon", "provenance_of",
]


@dataclass(frozen=True)
class Value:
    prov: frozenset = field(default=frozenset(), compare=False, kw_only=True)

    def tagged(self, events: Iterable[int]) -> "Value":
        """Return a copy whose provenance also includes ``events``."""
        extra = frozenset(events)
        if extra <= self.prov:
            return self
        return replace(self, prov=self.prov | extra)

    @cached_property
    def ckey(self) -> tuple:
        return canon(self)

    def __str__(self) -> str:
        return display(self)


@dataclass(frozen=True)
class Undefined(Value):
    pass


@dataclass(frozen=True)
class Bool(Value):
    value: bool


@dataclass(frozen=True)
class Int(Value):
    value: int


@dataclass(frozen=True)
class Str(Value):
    value: str


@dataclass(frozen=True)
class Record(Value):
    fields: tuple  # ((name, Value), ...) in insertion order

    def get(self, name: str) -> Value | None:
        for k, v in self.fields:
            if k == name:
                return v
        return None


@dataclass(frozen=True)
class List(Value):
    items: tuple


@dataclass(frozen=True)
class ErrorVal(Value):
    message: str


@dataclass(frozen=True)
class Hash(Value):
    """Symbolic hash: ``Hash(a) == Hash(b)`` iff ``a == b``."""

    of: Value


@dataclass(frozen=True)
class Stored(Value):
    """Opaque value held by the external store under ``key``."""

    key: str


UNDEFINED = Undefined()


def record(**kw: Value) -> Record:
    return Record(tuple(kw.items()))


def from_python(obj: Any, prov: Iterable[int] = ()) -> Value:
    """Convert plain JSON-ish Python data to a :class:`Value`."""
    p = frozenset(prov)
    if isinstance(obj, Value):
        return obj.tagged(p)
    if obj is None:
        return Undefined(prov=p)
    if isinstance(obj, bool):
        return Bool(obj, prov=p)
    if isinstance(obj, int):
        return Int(obj, prov=p)
    if isinstance(obj, str):
        return Str(obj, prov=p)
    if isinstance(obj, dict):
        return Record(tuple((str(k), from_python(v, p)) for k, v in obj.items()), prov=p)
    if isinstance(obj, (list, tuple)):
        return List(tuple(from_python(v, p) for v in obj), prov=p)
    raise TypeError(f"cannot convert {type(obj).__name__} to a Value")


def canon(v: Value) -> tuple:
    """Hashable canonical form including provenance."""
    p = tuple(sorted(v.prov))
    if isinstance(v, Undefined):
        return ("u", p)
    if isinstance(v, (Bool, Int, Str)):
        return (type(v).__name__[0].lower(), v.value, p)
    if isinstance(v, Record):
        return ("r", tuple((k, x.ckey) for k, x in v.fields), p)
    if isinstance(v, List):
        return ("l", tuple(x.ckey for x in v.items), p)
    if isinstance(v, ErrorVal):
        return ("e", v.message, p)
    if isinstance(v, Hash):
        return ("h", v.of.ckey, p)
    if isinstance(v, Stored):
        return ("st", v.key, p)
    raise TypeError(v)


def to_json(v: Value) -> dict:
    out: dict[str, Any]
    if isinstance(v, Undefined):
        out = {"t": "undefined"}
    elif isinstance(v, Bool):
        out = {"t": "bool", "v": v.value}
    elif isinstance(v, Int):
        out = {"t": "int", "v": v.value}
    elif isinstance(v, Str):
        out = {"t": "str", "v": v.value}
    elif isinstance(v, Record):
        out = {"t": "record", "v": [[k, to_json(x)] for k, x in v.fields]}
    elif isinstance(v, List):
        out = {"t": "list", "v": [to_json(x) for x in v.items]}
    elif isinstance(v, ErrorVal):
        out = {"t": "error", "v": v.message}
    elif isinstance(v, Hash):
        out = {"t": "hash", "v": to_json(v.of)}
    elif isinstance(v, Stored):
        out = {"t": "stored", "v": v.key}
    else:
        raise TypeError(v)
    out["prov"] = sorted(v.prov)
    return out


def from_json(d: dict) -> Value:
    p = frozenset(d.get("prov", ()))
    t, raw = d["t"], d.get("v")
    if t == "undefined":
        return Undefined(prov=p)
    if t == "bool":
        return Bool(raw, prov=p)
    if t == "int":
        return Int(raw, prov=p)
    if t == "str":
        return Str(raw, prov=p)
    if t == "record":
        return Record(tuple((k, from_json(x)) for k, x in raw), prov=p)
    if t == "list":
        return List(tuple(from_json(x) for x in raw), prov=p)
    if t == "error":
        return ErrorVal(raw, prov=p)
    if t == "hash":
        return Hash(from_json(raw), prov=p)
    if t == "stored":
        return Stored(raw, prov=p)
    raise ValueError(f"unknown value tag {t!r}")


def display(v: Value) -> str:
    """Render a value in the notation used by trace tables."""
    if isinstance(v, Undefined):
        return "undefined"
    if isinstance(v, Bool):
        return "true" if v.value else "false"
    if isinstance(v, Int):
        return str(v.value)
    if isinstance(v, Str):
        return f'"{v.value}"'
    if isinstance(v, Record):
        return "{" + ", ".join(f"{k}: {display(x)}" for k, x in v.fields) + "}"
    if isinstance(v, List):
        return "[" + ", ".join(display(x) for x in v.items) + "]"
    if isinstance(v, ErrorVal):
        return f"Error({v.message})"
    if isinstance(v, Hash):
        return f"H({display(v.of)})"
    if isinstance(v, Stored):
        return f"S({v.key})"
    raise TypeError(v)


def provenance_of(v: Value) -> frozenset:
    """Union of the provenance of ``v`` and every value nested inside it."""
    acc = set(v.prov)
    if isinstance(v, Record):
        for _, x in v.fields:
            acc |= provenance_of(x)
    elif isinstance(v, List):
        for x in v.items:
            acc |= provenance_of(x)
    elif isinstance(v, Hash):
        acc |= provenance_of(v.of)
    return frozenset(acc)
