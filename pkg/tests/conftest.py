import math
import struct

import numpy as np
import pytest
from hypothesis import strategies as st

from traceoracle.trace_model import GlobalBinding, Primitive, Tag, Trace, TraceLine, Value, Verdict

NAMES = ["main", "f", "g", "h", "write"]


@st.composite
def primitives(draw):
    tag = draw(st.sampled_from(list(Tag)))
    if tag is Tag.U8:
        return Primitive(tag, draw(st.integers(0, 255)))
    if tag is Tag.BOOL:
        return Primitive(tag, draw(st.integers(0, 1)))
    return Primitive(tag, draw(st.integers(0, (1 << 64) - 1)))


values = st.lists(primitives(), max_size=4).map(lambda ps: Value(tuple(ps)))


@st.composite
def traces(draw, max_lines=8, labelled=None):
    n = draw(st.integers(0, max_lines))
    lines = tuple(TraceLine(draw(st.sampled_from(NAMES)), draw(st.sampled_from(NAMES)),
                            draw(values), draw(values)) for _ in range(n))
    gnames = draw(st.lists(st.sampled_from(["g_a", "g_b", "g_c"]), unique=True, max_size=3))
    globals_ = tuple(GlobalBinding(g, draw(values)) for g in gnames)
    if labelled is None:
        label = draw(st.sampled_from([None, Verdict.PASS, Verdict.FAIL]))
    elif labelled:
        label = draw(st.sampled_from([Verdict.PASS, Verdict.FAIL]))
    else:
        label = None
    tid = draw(st.text("abcdef0123456789/", min_size=1, max_size=8))
    return Trace(tid, "synthetic", lines, globals_, label)


def random_trace(rng: np.random.Generator, n_lines: int, n_globals: int = 2,
                 names=("main", "f", "g", "h"), label=None, tid="t") -> Trace:
    """Small random trace with I64/F64/U8/BOOL values, numpy-driven."""
    def value():
        out = []
        for _ in range(int(rng.integers(0, 4))):
            kind = int(rng.integers(0, 4))
            if kind == 0:
                out.append(Primitive.i64(int(rng.integers(-1000, 1000))))
            elif kind == 1:
                out.append(Primitive.f64(float(rng.normal())))
            elif kind == 2:
                out.append(Primitive.u8(int(rng.integers(0, 256))))
            else:
                out.append(Primitive.boolean(bool(rng.integers(0, 2))))
        return Value(tuple(out))

    lines = tuple(TraceLine(str(rng.choice(names)), str(rng.choice(names)), value(), value())
                  for _ in range(n_lines))
    gl = tuple(GlobalBinding(f"g{i}", value()) for i in range(n_globals))
    return Trace(tid, "synthetic", lines, gl, label)


def f64_raw(x: float) -> int:
    return struct.unpack(">Q", struct.pack(">d", x))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
