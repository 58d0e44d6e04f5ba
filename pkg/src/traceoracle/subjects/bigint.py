"""Block-difficulty pipeline over 256-bit integers with protocol eras.

Inputs are (parent difficulty, parent timestamp, timestamp, block number,
uncles flag).  The era picks the time-adjustment rule and the delay of the
exponential "bomb" term; arithmetic on difficulties goes limb by limb.
"""
from __future__ import annotations

from ..trace_model import Primitive, Tag
from .base import BigInt, InvalidPayloadError, Op, Program, Subject, TestInput, traced

MIN_DIFFICULTY = 131072
ERA_BOUNDS = (1_150_000, 4_370_000, 7_280_000)
FRONTIER, HOMESTEAD, BYZANTIUM, CONSTANTINOPLE = range(4)
BOMB_DELAY = {FRONTIER: 0, HOMESTEAD: 0, BYZANTIUM: 3_000_000, CONSTANTINOPLE: 5_000_000}
LIMB = 1 << 64
N_LIMBS = 4


def _raw(limb: int) -> Primitive:
    # limbs are unsigned; record their bit pattern
    return Primitive(Tag.I64, limb)


def _limb_args(a, b, carry):
    return _raw(a), _raw(b), carry


def _limb_ret(r):
    return _raw(r[0]), r[1]


class BigIntProgram(Program):
    GLOBALS = ("g_era", "g_calls")
    SITES = {
        "era_of#0": (Op.RELATIONAL_OP, "<"),
        "era_of#1": (Op.RELATIONAL_OP, "<"),
        "era_of#2": (Op.RELATIONAL_OP, "<"),
        "time_factor#0": (Op.RELATIONAL_OP, "<"),
        "time_factor#1": (Op.RELATIONAL_OP, "<"),
        "time_factor#2": (Op.LOGICAL_CONNECTOR, "not"),
        "time_factor#3": (Op.SCALAR_VAR, "delta"),
        "add_limbs#0": (Op.LOOP_BOUNDARY, "n_limbs"),
        "add_limbs#1": (Op.RELATIONAL_OP, ">="),
        "sub_limbs#0": (Op.LOOP_BOUNDARY, "n_limbs"),
        "sub_limbs#1": (Op.RELATIONAL_OP, "<"),
        "clamp_min#0": (Op.RELATIONAL_OP, "<"),
        "bomb_period#0": (Op.SCALAR_VAR, "number"),
        "bomb_period#1": (Op.RELATIONAL_OP, ">"),
        "pow2#0": (Op.LOOP_BOUNDARY, "exponent"),
        "difficulty#0": (Op.ARG_SWAP, "ts,parent_ts"),
        "difficulty#1": (Op.RELATIONAL_OP, ">"),
        "difficulty#2": (Op.LOGICAL_CONNECTOR, "and"),
        "apply_delta#0": (Op.LOGICAL_CONNECTOR, "not"),
    }

    def __init__(self, mutations=()):
        super().__init__(mutations)
        self.era = -1
        self.calls = 0

    @traced()
    def era_of(self, number):
        for era, bound in enumerate(ERA_BOUNDS):
            if self.rel(f"era_of#{era}", number, bound):
                return era
        return CONSTANTINOPLE

    @traced()
    def time_factor(self, ts, parent_ts, uncles, era):
        delta = ts - parent_ts
        if era == FRONTIER:
            return 1 if self.rel("time_factor#0", delta, 13) else -1
        if era == HOMESTEAD:
            adj = 1 - delta // 10
        else:
            base = 1 if self.logic("time_factor#2", uncles) else 2
            adj = base - self.scalar("time_factor#3", delta, parent_ts % 97) // 9
        return -99 if self.rel("time_factor#1", adj, -99) else adj

    @traced()
    def quotient(self, parent):
        return BigInt(parent.v // 2048)

    @traced(args=_limb_args, ret=_limb_ret)
    def add_limb(self, a, b, carry):
        s = a + b + carry
        c = 1 if self.rel("add_limbs#1", s, LIMB) else 0
        return (s - c * LIMB) % LIMB, c

    @traced(args=_limb_args, ret=_limb_ret)
    def sub_limb(self, a, b, borrow):
        d = a - b - borrow
        w = 1 if self.rel("sub_limbs#1", d, 0) else 0
        return (d + w * LIMB) % LIMB, w

    def _limbwise(self, fn, site, a, b):
        la, lb = a.limbs(), b.limbs()
        out = [0] * N_LIMBS
        carry = 0
        for i in range(min(self.bound(site, N_LIMBS), N_LIMBS)):
            out[i], carry = fn(la[i], lb[i], carry)
        return BigInt(sum(x << (64 * i) for i, x in enumerate(out)))

    @traced()
    def add_big(self, a, b):
        return self._limbwise(self.add_limb, "add_limbs#0", a, b)

    @traced()
    def sub_big(self, a, b):
        return self._limbwise(self.sub_limb, "sub_limbs#0", a, b)

    @traced()
    def apply_delta(self, parent, q, adj):
        step = BigInt(q.v * abs(adj))
        if self.logic("apply_delta#0", adj >= 0):
            return self.add_big(parent, step)
        return self.sub_big(parent, step)

    @traced()
    def clamp_min(self, d):
        floor = BigInt(MIN_DIFFICULTY)
        return floor if self.rel("clamp_min#0", d.v, MIN_DIFFICULTY) else d

    @traced()
    def bomb_period(self, number, era):
        fake = max(number - BOMB_DELAY[era], 0)
        period = self.scalar("bomb_period#0", fake, number) // 100_000
        return period if self.rel("bomb_period#1", period, 1) else 0

    @traced()
    def double(self, x):
        return BigInt(x.v << 1)

    @traced()
    def pow2(self, exponent):
        x = BigInt(1)
        for _ in range(self.bound("pow2#0", exponent)):
            x = self.double(x)
        return x

    def main(self, payload):
        parent, parent_ts, ts, number, uncles = payload
        parent = BigInt(parent)
        return self.difficulty(parent, parent_ts, ts, number, uncles).v

    @traced()
    def difficulty(self, parent, parent_ts, ts, number, uncles):
        era = self.era_of(number)
        self.era = era
        t1, t0 = self.swap("difficulty#0", ts, parent_ts)
        adj = self.time_factor(t1, t0, uncles, era)
        q = self.quotient(parent)
        # sign flip: a positive adjustment raises the difficulty
        d = self.apply_delta(parent, q, -adj)
        d = self.clamp_min(d)
        period = self.bomb_period(number, era)
        if self.logic("difficulty#2", self.rel("difficulty#1", period, 1), era != FRONTIER):
            d = self.add_big(d, self.pow2(period - 2))
        self.external("keccak_log", (d,))
        self.calls += 1
        return d

    def final_globals(self):
        return [("g_era", self.era), ("g_calls", self.calls)]


class BigIntSubject(Subject):
    def __init__(self, name="bigint-calc"):
        super().__init__(name, BigIntProgram, "difficulty pipeline over 256-bit integers")

    def check_payload(self, payload):
        if not (isinstance(payload, tuple) and len(payload) == 5):
            raise InvalidPayloadError("bigint-calc payload is (parent, parent_ts, ts, number, uncles)")
        parent, pts, ts, number, _ = payload
        if not (0 < parent < 1 << 200 and 0 <= pts < ts and number >= 0):
            raise InvalidPayloadError(f"invalid bigint-calc fields {payload!r}")

    def generate_inputs(self, n, rng):
        out = []
        for i in range(n):
            parent = int(rng.integers(MIN_DIFFICULTY, 1 << 62)) * int(rng.integers(1, 1 << 40))
            pts = int(rng.integers(1_400_000_000, 1_600_000_000))
            ts = pts + int(rng.integers(1, 120))
            number = int(rng.integers(0, 9_000_000))
            out.append(TestInput(f"in{i:05d}", (parent, pts, ts, number, bool(rng.random() < 0.3))))
        return out
