"""Instrumentation and mutation machinery shared by the built-in subjects.

A subject is a small interpreter written as a :class:`Program` subclass.
Methods decorated with :func:`traced` emit one trace line when they return,
so lines come out in completion order.  Mutation sites are registered in the
class-level ``SITES`` table and consulted through the ``rel``/``logic``/
``swap``/``scalar``/``bound`` helpers; exactly one site changes per mutation.
"""
from __future__ import annotations

import dataclasses
import enum
import functools
import operator
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence

from ..trace_model import GlobalBinding, Primitive, Tag, Trace, TraceLine, Value, Verdict

ROOT = "_start"


class Op(enum.Enum):
    LOGICAL_CONNECTOR = "logical_connector"
    RELATIONAL_OP = "relational_op"
    ARG_SWAP = "arg_swap"
    SCALAR_VAR = "scalar_var"
    LOOP_BOUNDARY = "loop_boundary"

    @classmethod
    def parse(cls, text: str) -> "Op":
        try:
            return cls[text.upper()]
        except KeyError:
            return cls(text.lower())


REL = {"<": operator.lt, ">": operator.gt, "==": operator.eq,
       "<=": operator.le, ">=": operator.ge, "!=": operator.ne}


@dataclass(frozen=True)
class MutationPoint:
    id: str
    site: tuple          # (method name, site index)
    operator: Op
    variant: str


@dataclass(frozen=True)
class TestInput:
    id: str
    payload: Any

    __test__ = False  # not a pytest class


class UnknownMutationError(KeyError):
    pass


class InvalidPayloadError(ValueError):
    pass


def _variants(op: Op, original: str) -> list[str]:
    if op is Op.RELATIONAL_OP:
        return [o for o in REL if o != original]
    if op is Op.LOGICAL_CONNECTOR:
        return {"and": ["or"], "or": ["and"], "not": ["drop"]}[original]
    if op is Op.LOOP_BOUNDARY:
        return ["-1", "+1"]
    if op is Op.ARG_SWAP:
        return ["swap"]
    return ["alt"]


def site_points(sites: dict) -> list[MutationPoint]:
    out = []
    for key, (op, original) in sites.items():
        method, idx = key.split("#")
        for var in _variants(op, original):
            out.append(MutationPoint(f"{key}:{var}", (method, int(idx)), op, var))
    return out


class BigInt:
    """Fixed-width unsigned integer that flattens to 64-bit limbs (least significant first)."""

    __slots__ = ("v", "bits")

    def __init__(self, v: int, bits: int = 256):
        self.bits = bits
        self.v = v & ((1 << bits) - 1)

    def limbs(self) -> list[int]:
        return [(self.v >> (64 * i)) & ((1 << 64) - 1) for i in range(self.bits // 64)]

    def __eq__(self, other):
        return isinstance(other, BigInt) and (self.v, self.bits) == (other.v, other.bits)

    def __hash__(self):
        return hash((self.v, self.bits))

    def __repr__(self):
        return f"BigInt({self.v:#x})"


def to_value(obj) -> Value:
    """Depth-first flattening of a Python object into primitives."""
    return Value(tuple(_flatten(obj)))


def _flatten(obj) -> Iterable[Primitive]:
    if obj is None:
        yield Primitive.i64(0)
    elif isinstance(obj, bool):
        yield Primitive.boolean(obj)
    elif isinstance(obj, int):
        yield Primitive.i64(obj)
    elif isinstance(obj, float):
        yield Primitive.f64(obj)
    elif isinstance(obj, (bytes, bytearray)):
        for b in obj:
            yield Primitive.u8(b)
    elif isinstance(obj, str):
        yield from _flatten(obj.encode("utf-8"))
    elif isinstance(obj, BigInt):
        for limb in obj.limbs():
            yield Primitive(Tag.I64, limb)
    elif isinstance(obj, Primitive):
        yield obj
    elif isinstance(obj, Value):
        yield from obj.prims
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from _flatten(getattr(obj, f.name))
    elif isinstance(obj, (tuple, list)):
        for item in obj:
            yield from _flatten(item)
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__} into primitives")


def traced(name: Optional[str] = None, args: Optional[Callable] = None,
           ret: Optional[Callable] = None):
    """Record a trace line for every completed call of the decorated method.

    ``args``/``ret`` optionally map the call arguments / return value to the
    object that gets flattened (defaults: all positional arguments / result).
    """
    def deco(fn):
        callee = name or fn.__name__

        @functools.wraps(fn)
        def wrapper(self, *a):
            self._stack.append(callee)
            try:
                result = fn(self, *a)
            finally:
                self._stack.pop()
            self._emit(callee, args(*a) if args else a, ret(result) if ret else result)
            return result

        wrapper.traced_name = callee
        return wrapper
    return deco


class Program:
    """Base class for one execution of a (possibly mutated) subject."""

    SITES: dict = {}

    def __init__(self, mutations: Sequence[MutationPoint] = ()):
        self._active: dict[str, MutationPoint] = {}
        for m in mutations:
            key = f"{m.site[0]}#{m.site[1]}"
            if key not in self.SITES:
                raise UnknownMutationError(m.id)
            if key in self._active:
                raise ValueError(f"two mutations at site {key}")
            self._active[key] = m
        self._stack = [ROOT]
        self._lines: list[TraceLine] = []
        self.fired: set[str] = set()

    # -- recording -------------------------------------------------------
    def _emit(self, callee, args, ret):
        self._lines.append(TraceLine(self._stack[-1], callee, to_value(args), to_value(ret)))

    def external(self, callee: str, args=(), ret=None):
        """Record a call into a library function that has no body in the subject."""
        self._emit(callee, args, ret)
        return ret

    def final_globals(self) -> list[tuple[str, Any]]:
        raise NotImplementedError

    def main(self, payload):
        raise NotImplementedError

    # -- mutation helpers --------------------------------------------------
    def _mutation(self, site: str, op: Op) -> Optional[MutationPoint]:
        declared = self.SITES.get(site)
        if declared is None or declared[0] is not op:
            raise KeyError(f"site {site} is not registered as {op.name}")
        m = self._active.get(site)
        if m is not None:
            self.fired.add(m.id)
        return m

    def rel(self, site: str, a, b) -> bool:
        m = self._mutation(site, Op.RELATIONAL_OP)
        return REL[m.variant if m else self.SITES[site][1]](a, b)

    def logic(self, site: str, a: bool, b: bool = False) -> bool:
        m = self._mutation(site, Op.LOGICAL_CONNECTOR)
        kind = m.variant if m else self.SITES[site][1]
        if kind == "and":
            return bool(a and b)
        if kind == "or":
            return bool(a or b)
        if kind == "not":
            return not a
        return bool(a)  # negation dropped

    def swap(self, site: str, a, b) -> tuple:
        return (b, a) if self._mutation(site, Op.ARG_SWAP) else (a, b)

    def scalar(self, site: str, value, alternative):
        return alternative if self._mutation(site, Op.SCALAR_VAR) else value

    def bound(self, site: str, n: int) -> int:
        m = self._mutation(site, Op.LOOP_BOUNDARY)
        return n + int(m.variant) if m else n


@dataclass(frozen=True)
class RunResult:
    output: Any
    trace: Trace
    fired: frozenset


class Subject:
    """A built-in subject program: its interpreter, inputs and mutation points."""

    def __init__(self, name: str, program: type, description: str = "", **config):
        self.name = name
        self.program = program
        self.description = description
        self.config = config
        self._points = site_points(program.SITES)
        self._by_id = {p.id: p for p in self._points}

    def __repr__(self):
        return f"Subject({self.name!r})"

    @property
    def defined(self) -> frozenset:
        """Names of methods with a body in the subject."""
        return frozenset(getattr(v, "traced_name") for k in dir(self.program)
                         for v in [getattr(self.program, k)] if hasattr(v, "traced_name"))

    @property
    def global_names(self) -> tuple:
        return tuple(self.program.GLOBALS)

    def mutation_points(self, operators: Optional[Iterable[Op]] = None) -> list[MutationPoint]:
        if operators is None:
            return list(self._points)
        ops = set(operators)
        return [p for p in self._points if p.operator in ops]

    def mutation(self, mutation_id: str) -> MutationPoint:
        try:
            return self._by_id[mutation_id]
        except KeyError:
            raise UnknownMutationError(mutation_id) from None

    def generate_inputs(self, n: int, rng) -> list[TestInput]:
        raise NotImplementedError

    def check_payload(self, payload) -> None:
        pass

    def run(self, test: TestInput, mutations: Iterable[MutationPoint] = (),
            label: Optional[Verdict] = None, trace_id: Optional[str] = None) -> RunResult:
        mutations = list(mutations)
        for m in mutations:
            if self._by_id.get(m.id) != m:
                raise UnknownMutationError(m.id)
        self.check_payload(test.payload)
        prog = self.program(mutations, **self.config)
        output = prog.main(test.payload)
        globals_ = tuple(GlobalBinding(n, to_value(v)) for n, v in prog.final_globals())
        tag = "+".join(sorted(m.id for m in mutations)) or "ref"
        trace = Trace(trace_id or f"{self.name}/{test.id}/{tag}", self.name,
                      tuple(prog._lines), globals_, label)
        return RunResult(output, trace, frozenset(prog.fired))


def run_subject(s: Subject, test: TestInput, mutations: Iterable[MutationPoint] = ()):
    """Execute ``s`` on ``test`` with the given mutations; returns (output, trace)."""
    r = s.run(test, mutations)
    return r.output, r.trace
