import math

import pytest
from hypothesis import given, strategies as st

from traceoracle.trace_model import (
    MASK64, GlobalBinding, Primitive, Tag, Trace, TraceLine, Value, Verdict, validate_trace,
)

from conftest import f64_raw, traces


def test_verdict_fail_is_positive_class():
    assert int(Verdict.FAIL) == 1 and int(Verdict.PASS) == 0
    assert Verdict.parse("FAIL") is Verdict.FAIL
    assert str(Verdict.PASS) == "pass"
    with pytest.raises(ValueError):
        Verdict.parse("maybe")


@pytest.mark.parametrize("v,raw", [
    (0, 0), (1, 1), (-1, MASK64), (5, 5),
    (-(1 << 63), 1 << 63), ((1 << 63) - 1, (1 << 63) - 1),
])
def test_i64_twos_complement(v, raw):
    p = Primitive.i64(v)
    assert p.raw == raw
    assert p.value == v


@pytest.mark.parametrize("v", [1 << 63, -(1 << 63) - 1])
def test_i64_overflow(v):
    with pytest.raises(OverflowError):
        Primitive.i64(v)


@pytest.mark.parametrize("tag,raw", [(Tag.U8, 256), (Tag.BOOL, 2), (Tag.I64, 1 << 64), (Tag.F64, -1)])
def test_primitive_range_checks(tag, raw):
    with pytest.raises(ValueError):
        Primitive(tag, raw)


def test_f64_pattern_of_one():
    assert Primitive.f64(1.0).raw == 0x3FF0000000000000


@given(st.floats(allow_nan=False))
def test_f64_value_roundtrip(x):
    p = Primitive.f64(x)
    assert p.raw == f64_raw(x)
    assert p.value == x and math.copysign(1, p.value) == math.copysign(1, x)


def test_value_helpers():
    assert Value.text("AB").prims == (Primitive.u8(65), Primitive.u8(66))
    assert Value.null().prims == (Primitive(Tag.I64, 0),)
    assert len(Value.ints(1, 2) + Value.ints(3)) == 3
    assert len(Value()) == 0


def _trace(lines=(), globals_=()):
    return Trace("t", "s", tuple(lines), tuple(globals_))


def test_validate_well_formed():
    t = _trace([TraceLine("main", "f"), TraceLine("f", "g"), TraceLine("main", "h")])
    assert validate_trace(t) == []


def test_validate_empty_callee():
    t = _trace([TraceLine("main", "f"), TraceLine("main", ""), TraceLine("main", "h")])
    assert validate_trace(t) == ["line 1: empty callee"]


def test_validate_duplicate_global():
    t = _trace(globals_=[GlobalBinding("g", Value()), GlobalBinding("g", Value.ints(1))])
    assert validate_trace(t) == ["globals: duplicate name g"]


def test_validate_reports_each_violation():
    t = Trace("t", "s", (TraceLine("", ""),), (GlobalBinding("", Value()),), "pass")
    assert len(validate_trace(t)) == 4


@given(traces())
def test_validate_deterministic(t):
    assert validate_trace(t) == validate_trace(t) == []


def test_with_helpers_keep_identity():
    t = Trace("x", "s", (TraceLine("a", "b"),), (), Verdict.FAIL)
    assert t.with_lines(()).label is Verdict.FAIL
    assert t.with_label(None).lines == t.lines
    assert t.with_globals([GlobalBinding("g", Value())]).trace_id == "x"
