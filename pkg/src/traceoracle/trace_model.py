"""In-memory trace representation shared by every other module.

A trace is the ordered list of completed method invocations of one test run
plus the final values of the subject's global variables.  Every value is a
depth-first flattening into 64-bit primitives.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

MASK64 = (1 << 64) - 1


class Tag(enum.Enum):
    I64 = "i64"
    F64 = "f64"
    U8 = "u8"
    BOOL = "bool"


class Verdict(enum.IntEnum):
    """FAIL is the positive class (value 1)."""

    PASS = 0
    FAIL = 1

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        try:
            return {"pass": cls.PASS, "fail": cls.FAIL}[text.lower()]
        except KeyError:
            raise ValueError(f"unknown verdict {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Primitive:
    tag: Tag
    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= MASK64:
            raise ValueError(f"raw pattern out of 64-bit range: {self.raw:#x}")
        if self.tag is Tag.U8 and self.raw > 0xFF:
            raise ValueError(f"u8 primitive uses more than 8 bits: {self.raw:#x}")
        if self.tag is Tag.BOOL and self.raw not in (0, 1):
            raise ValueError(f"bool primitive must be 0 or 1, got {self.raw}")

    @classmethod
    def i64(cls, v: int) -> "Primitive":
        if not -(1 << 63) <= v < (1 << 63):
            raise OverflowError(f"{v} does not fit in i64")
        return cls(Tag.I64, v & MASK64)

    @classmethod
    def f64(cls, v: float) -> "Primitive":
        return cls(Tag.F64, struct.unpack("<Q", struct.pack("<d", v))[0])

    @classmethod
    def u8(cls, v: int) -> "Primitive":
        return cls(Tag.U8, v)

    @classmethod
    def boolean(cls, v: bool) -> "Primitive":
        return cls(Tag.BOOL, int(bool(v)))

    @property
    def value(self):
        """Decoded Python value (int, float or bool)."""
        if self.tag is Tag.I64:
            return self.raw - (1 << 64) if self.raw >> 63 else self.raw
        if self.tag is Tag.F64:
            return struct.unpack("<d", struct.pack("<Q", self.raw))[0]
        if self.tag is Tag.BOOL:
            return bool(self.raw)
        return self.raw


@dataclass(frozen=True)
class Value:
    prims: tuple[Primitive, ...] = ()

    def __len__(self) -> int:
        return len(self.prims)

    @classmethod
    def of(cls, *prims: Primitive) -> "Value":
        return cls(tuple(prims))

    @classmethod
    def ints(cls, *vs: int) -> "Value":
        return cls(tuple(Primitive.i64(v) for v in vs))

    @classmethod
    def text(cls, s: bytes | str) -> "Value":
        """Strings decompose into one U8 primitive per byte."""
        if isinstance(s, str):
            s = s.encode("utf-8")
        return cls(tuple(Primitive.u8(b) for b in s))

    @classmethod
    def null(cls) -> "Value":
        """Absent reference: a single zero I64."""
        return cls((Primitive.i64(0),))

    def __add__(self, other: "Value") -> "Value":
        return Value(self.prims + other.prims)


EMPTY = Value()


@dataclass(frozen=True)
class TraceLine:
    caller: str
    callee: str
    args: Value = EMPTY
    ret: Value = EMPTY


@dataclass(frozen=True)
class GlobalBinding:
    name: str
    value: Value


@dataclass(frozen=True)
class Trace:
    trace_id: str
    subject: str
    lines: tuple[TraceLine, ...] = ()
    globals: tuple[GlobalBinding, ...] = ()
    label: Optional[Verdict] = None

    def with_lines(self, lines: Iterable[TraceLine]) -> "Trace":
        return Trace(self.trace_id, self.subject, tuple(lines), self.globals, self.label)

    def with_globals(self, globals_: Iterable[GlobalBinding]) -> "Trace":
        return Trace(self.trace_id, self.subject, self.lines, tuple(globals_), self.label)

    def with_label(self, label: Optional[Verdict]) -> "Trace":
        return Trace(self.trace_id, self.subject, self.lines, self.globals, label)


def validate_trace(t: Trace) -> list[str]:
    """Return one description per broken invariant; empty when well formed."""
    problems = []
    if not isinstance(t.trace_id, str):
        problems.append("trace_id: not a string")
    for i, line in enumerate(t.lines):
        if not line.caller:
            problems.append(f"line {i}: empty caller")
        if not line.callee:
            problems.append(f"line {i}: empty callee")
    seen = set()
    for j, g in enumerate(t.globals):
        if not g.name:
            problems.append(f"globals[{j}]: empty name")
        elif g.name in seen:
            problems.append(f"globals: duplicate name {g.name}")
        seen.add(g.name)
    if t.label is not None and not isinstance(t.label, Verdict):
        problems.append(f"label: not a verdict ({t.label!r})")
    return problems


def flatten_globals(bindings: Sequence[GlobalBinding]) -> dict[str, Value]:
    return {g.name: g.value for g in bindings}
