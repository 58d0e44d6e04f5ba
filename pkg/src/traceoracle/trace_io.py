"""Trace files, preprocessing and the method-name vocabulary.

The on-disk format is line-delimited JSON.  Each trace block opens with a
``meta`` record followed by its ``call`` records (completion order) and then
its ``global`` records::

    {"type":"meta","trace_id":"t0","subject":"fsm-proto","label":"pass"}
    {"type":"call","caller":"run","callee":"st_1","args":[{"t":"u8","v":65}],"ret":[]}
    {"type":"global","name":"g_state","value":[{"t":"i64","v":3}]}

A primitive may carry ``hex`` (16 hex digits); when present it is the
authoritative bit pattern, which is how F64 values survive bit-exactly.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence, TextIO

from .trace_model import (
    MASK64,
    GlobalBinding,
    Primitive,
    Tag,
    Trace,
    TraceLine,
    Value,
    Verdict,
    validate_trace,
)

UNK = "<UNK>"


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class InvalidTraceError(ValueError):
    def __init__(self, trace_id: str, violations: list[str]):
        super().__init__(f"trace {trace_id!r} is invalid: " + "; ".join(violations))
        self.violations = violations


# -- parsing -----------------------------------------------------------------

def _parse_prim(obj, lineno: int) -> Primitive:
    if not isinstance(obj, dict):
        raise TraceFormatError(lineno, f"primitive must be an object, got {obj!r}")
    try:
        tag = Tag(obj.get("t"))
    except ValueError:
        raise TraceFormatError(lineno, f"unknown primitive tag {obj.get('t')!r}") from None
    try:
        if obj.get("hex") is not None:
            h = obj["hex"]
            if not isinstance(h, str) or len(h) != 16:
                raise ValueError(f"hex must be 16 hex digits, got {h!r}")
            return Primitive(tag, int(h, 16))
        if "v" not in obj:
            raise ValueError("primitive without 'v' or 'hex'")
        v = obj["v"]
        if tag is Tag.F64:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"f64 value must be a number, got {v!r}")
            return Primitive.f64(float(v))
        if tag is Tag.BOOL:
            if v not in (True, False, 0, 1):
                raise ValueError(f"bool value must be true/false, got {v!r}")
            return Primitive.boolean(bool(v))
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError(f"{tag.value} value must be an integer, got {v!r}")
        if tag is Tag.U8:
            return Primitive.u8(v)
        return Primitive.i64(v)
    except (ValueError, OverflowError) as exc:
        raise TraceFormatError(lineno, str(exc)) from None


def _parse_value(items, lineno: int) -> Value:
    if not isinstance(items, list):
        raise TraceFormatError(lineno, f"value must be a list of primitives, got {items!r}")
    return Value(tuple(_parse_prim(p, lineno) for p in items))


def _str_field(rec: dict, key: str, lineno: int) -> str:
    v = rec.get(key)
    if not isinstance(v, str):
        raise TraceFormatError(lineno, f"field {key!r} must be a string")
    return v


class _Block:
    def __init__(self, meta: dict, lineno: int):
        self.trace_id = _str_field(meta, "trace_id", lineno)
        self.subject = _str_field(meta, "subject", lineno)
        label = meta.get("label")
        if label is None:
            self.label = None
        elif isinstance(label, str) and label.lower() in ("pass", "fail"):
            self.label = Verdict.parse(label)
        else:
            raise TraceFormatError(lineno, f"label must be 'pass', 'fail' or null, got {label!r}")
        self.lines: list[TraceLine] = []
        self.globals: list[GlobalBinding] = []

    def build(self) -> Trace:
        return Trace(self.trace_id, self.subject, tuple(self.lines), tuple(self.globals), self.label)


def parse_traces(lines: Iterable[str]) -> Iterator[Trace]:
    """Yield traces in file order; malformed input raises TraceFormatError."""
    block: Optional[_Block] = None
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(lineno, f"malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise TraceFormatError(lineno, "record must be a JSON object")
        kind = rec.get("type")
        if kind == "meta":
            if block is not None:
                yield block.build()
            block = _Block(rec, lineno)
            continue
        if kind not in ("call", "global"):
            raise TraceFormatError(lineno, f"unknown record type {kind!r}")
        if block is None:
            raise TraceFormatError(lineno, f"{kind} record before any meta record")
        if kind == "call":
            if block.globals:
                raise TraceFormatError(lineno, "call record after global records")
            block.lines.append(TraceLine(
                _str_field(rec, "caller", lineno),
                _str_field(rec, "callee", lineno),
                _parse_value(rec.get("args", []), lineno),
                _parse_value(rec.get("ret", []), lineno),
            ))
        else:
            block.globals.append(GlobalBinding(
                _str_field(rec, "name", lineno), _parse_value(rec.get("value", []), lineno)))
    if block is not None:
        yield block.build()


def load_traces(path) -> list[Trace]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_traces(fh))


# -- serialization -----------------------------------------------------------

def _prim_json(p: Primitive) -> dict:
    if p.tag is Tag.F64:
        v = p.value
        return {"t": "f64", "v": v if math.isfinite(v) else None, "hex": f"{p.raw:016x}"}
    if p.tag is Tag.BOOL:
        return {"t": "bool", "v": bool(p.raw)}
    return {"t": p.tag.value, "v": p.value}


def _value_json(v: Value) -> list:
    return [_prim_json(p) for p in v.prims]


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def iter_records(t: Trace) -> Iterator[str]:
    label = None if t.label is None else str(t.label)
    yield _dumps({"type": "meta", "trace_id": t.trace_id, "subject": t.subject, "label": label})
    for line in t.lines:
        yield _dumps({"type": "call", "caller": line.caller, "callee": line.callee,
                      "args": _value_json(line.args), "ret": _value_json(line.ret)})
    for g in t.globals:
        yield _dumps({"type": "global", "name": g.name, "value": _value_json(g.value)})


def serialize_traces(traces: Iterable[Trace]) -> str:
    out = []
    for t in traces:
        problems = validate_trace(t)
        if problems:
            raise InvalidTraceError(t.trace_id, problems)
        out.extend(iter_records(t))
    return "".join(r + "\n" for r in out)


def write_traces(path, traces: Iterable[Trace]) -> None:
    text = serialize_traces(traces)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- preprocessing -----------------------------------------------------------

def prune_external(t: Trace, defined) -> Trace:
    """Drop lines whose callee has no body in the subject."""
    return t.with_lines(line for line in t.lines if line.callee in defined)


def _shape(v: Value) -> tuple:
    return tuple(p.tag for p in v.prims)


def _mean_prims(column: Sequence[Primitive]) -> Primitive:
    tag = column[0].tag
    n = len(column)
    if tag is Tag.F64:
        vals = [p.value for p in column]
        if all(math.isfinite(v) for v in vals):
            # exact rational mean, rounded once
            return Primitive.f64(float(sum(map(Fraction, vals)) / n))
        return Primitive.f64(sum(vals) / n)  # inf/nan propagate
    if tag is Tag.BOOL:
        return Primitive.boolean(2 * sum(p.raw for p in column) >= n)
    s = sum(p.value for p in column)
    q = abs(s) // n
    q = -q if s < 0 else q
    return Primitive.i64(q) if tag is Tag.I64 else Primitive.u8(q)


def _mean_values(values: Sequence[Value]) -> Value:
    return Value(tuple(_mean_prims(col) for col in zip(*(v.prims for v in values))))


def pool_loop_lines(t: Trace) -> Trace:
    """Average-pool maximal runs of repeated (caller, callee) lines.

    Lines only pool together when their argument and return shapes (arity and
    per-position primitive tag) agree; a change of shape starts a new run.
    """
    out: list[TraceLine] = []
    run: list[TraceLine] = []

    def key(line):
        return line.caller, line.callee, _shape(line.args), _shape(line.ret)

    def flush():
        if len(run) == 1:
            out.append(run[0])
        elif run:
            first = run[0]
            out.append(TraceLine(first.caller, first.callee,
                                 _mean_values([r.args for r in run]),
                                 _mean_values([r.ret for r in run])))
        run.clear()

    for line in t.lines:
        if run and key(run[0]) != key(line):
            flush()
        run.append(line)
    flush()
    return t.with_lines(out)


# -- vocabulary --------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    names: tuple[str, ...]
    counts: dict = field(compare=False, hash=False)
    k_min: int = 2

    def __post_init__(self):
        if not self.names or self.names[-1] != UNK:
            raise ValueError("vocabulary must end with the UNK entry")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    @property
    def unk_index(self) -> int:
        return len(self.names) - 1

    def index_of(self, name: str) -> int:
        return self._index.get(name, self.unk_index)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "counts": dict(sorted(self.counts.items())),
                "k_min": self.k_min}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["names"]), dict(d["counts"]), int(d["k_min"]))


def count_names(traces: Iterable[Trace], callers: bool = True) -> Counter:
    counts: Counter = Counter()
    for t in traces:
        for line in t.lines:
            if callers:
                counts[line.caller] += 1
            counts[line.callee] += 1
    return counts


def vocab_from_counts(counts: Counter, k_min: int) -> Vocabulary:
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    kept = sorted((n for n, c in counts.items() if c >= k_min and n != UNK),
                  key=lambda n: (-counts[n], n))
    return Vocabulary(tuple(kept) + (UNK,), dict(counts), k_min)


def build_vocab(train: Sequence[Trace], k_min: int = 2) -> Vocabulary:
    """Vocabulary over caller and callee names of the training traces only."""
    if not train:
        raise ValueError("cannot build a vocabulary from an empty training set")
    return vocab_from_counts(count_names(train), k_min)
