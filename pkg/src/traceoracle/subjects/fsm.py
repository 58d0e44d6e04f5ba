"""Protocol-detection state machine over byte strings.

The pattern is a sequence of segments ``(char class, min, max)``; consecutive
segments use disjoint classes so the greedy machine is deterministic.  One
handler method per segment (``st_0`` ... ``st_{K-1}``) consumes a byte and
returns the next ``(state, count)``.  Reaching the end of the last segment
moves to ACCEPT; an impossible byte moves to DEAD.  The observable output is
the match flag.
"""
from __future__ import annotations

from .base import InvalidPayloadError, Op, Program, Subject, TestInput, traced

DEAD = -1
ACCEPT = 99

# class id -> inclusive byte ranges
CLASSES = {
    0: ((0x30, 0x3F),),                              # digit
    1: ((0x40, 0x7F),),                              # letter
    2: ((0x20, 0x20),),                              # space
    3: ((0x30, 0x7F),),                              # alnum
    4: ((0x0D, 0x0D),),                              # CR
    5: ((0x0A, 0x0A),),                              # LF
    6: ((0x20, 0x2F),),                              # separator
    7: ((0x30, 0x3F), (0x60, 0x6F)),                 # hex
    8: ((0x60, 0x7F),),                              # lower
    9: ((0x40, 0x4F), (0x50, 0x5F)),                 # upper
}

PATTERNS = {
    # "220 Service ready\r\n"-style greeting
    "greeting": ((0, 3, 3), (6, 1, 1), (1, 1, 12), (2, 1, 1), (3, 1, 16), (4, 1, 1), (5, 1, 1)),
    # same transition structure, different alphabet
    "query": ((7, 3, 3), (9, 1, 1), (8, 1, 12), (2, 1, 1), (0, 1, 16), (4, 1, 1), (5, 1, 1)),
}


def _class_sites() -> tuple[dict, dict]:
    sites, index = {}, {}
    n = 0
    for cls, ranges in CLASSES.items():
        for r in range(len(ranges)):
            index[cls, r] = n
            sites[f"byte_class#{n}"] = (Op.RELATIONAL_OP, ">=")
            sites[f"byte_class#{n + 1}"] = (Op.RELATIONAL_OP, "<=")
            sites[f"byte_class#{n + 2}"] = (Op.LOGICAL_CONNECTOR, "and")
            n += 3
            if r:
                sites[f"byte_class#{n}"] = (Op.LOGICAL_CONNECTOR, "or")
                n += 1
    return sites, index


_CLASS_SITES, _CLASS_INDEX = _class_sites()
N_SEGMENTS = 7
# corruption: random byte, byte of a random class, deletion, truncation
CORRUPT_RATE = 0.5
CORRUPT_KINDS = (0.5, 0.2, 0.15, 0.15)


def _handler_sites(k: int, last: bool) -> dict:
    s = {f"st_{k}#0": (Op.LOGICAL_CONNECTOR, "and"),
         f"st_{k}#1": (Op.SCALAR_VAR, "cur"),
         f"st_{k}#2": (Op.RELATIONAL_OP, "<")}
    if not last:
        s.update({f"st_{k}#3": (Op.LOGICAL_CONNECTOR, "and"),
                  f"st_{k}#4": (Op.RELATIONAL_OP, ">=")})
    return s


class FsmProgram(Program):
    GLOBALS = ("g_state", "g_count", "g_match")
    SITES = {
        **_CLASS_SITES,
        **{k: v for i in range(N_SEGMENTS) for k, v in _handler_sites(i, i == N_SEGMENTS - 1).items()},
        "fsm_main#0": (Op.LOOP_BOUNDARY, "len"),
        "fsm_main#1": (Op.RELATIONAL_OP, "=="),
        "fsm_main#2": (Op.ARG_SWAP, "b,n"),
        "accept#0": (Op.RELATIONAL_OP, "=="),
        "accept#1": (Op.RELATIONAL_OP, ">="),
        "accept#2": (Op.LOGICAL_CONNECTOR, "or"),
        "accept#3": (Op.ARG_SWAP, "state,n"),
    }

    def __init__(self, mutations=(), pattern="greeting"):
        super().__init__(mutations)
        self.segments = PATTERNS[pattern]
        self.state = 0
        self.count = 0
        self.matched = False

    @traced()
    def read_packet(self, data):
        return len(data)

    @traced()
    def byte_class(self, b):
        """Bit mask of every class containing ``b``."""
        mask = 0
        for cls, ranges in CLASSES.items():
            hit = False
            for r, (lo, hi) in enumerate(ranges):
                n = _CLASS_INDEX[cls, r]
                inside = self.logic(f"byte_class#{n + 2}",
                                    self.rel(f"byte_class#{n}", b, lo),
                                    self.rel(f"byte_class#{n + 1}", b, hi))
                hit = self.logic(f"byte_class#{n + 3}", hit, inside) if r else inside
            if hit:
                mask |= 1 << cls
        return mask

    def _handle(self, k, b, n):
        segs = self.segments
        cls, lo, hi = segs[k]
        last = k == len(segs) - 1
        nxt = segs[0][0] if last else segs[k + 1][0]
        site = f"st_{k}#"
        mask = self.byte_class(b)
        stay = self.logic(site + "0",
                          bool(mask >> self.scalar(site + "1", cls, nxt) & 1),
                          self.rel(site + "2", n, hi))
        if stay:
            state, count = k, n + 1
        elif not last and self.logic(site + "3", self.rel(site + "4", n, lo), bool(mask >> nxt & 1)):
            state, count = k + 1, 1
        else:
            return DEAD, 0
        if state == len(segs) - 1 and count == segs[-1][2]:
            return ACCEPT, count
        return state, count

    # one traced handler per segment; names are shared across pattern variants
    @traced("st_0")
    def st_0(self, b, n): return self._handle(0, b, n)
    @traced("st_1")
    def st_1(self, b, n): return self._handle(1, b, n)
    @traced("st_2")
    def st_2(self, b, n): return self._handle(2, b, n)
    @traced("st_3")
    def st_3(self, b, n): return self._handle(3, b, n)
    @traced("st_4")
    def st_4(self, b, n): return self._handle(4, b, n)
    @traced("st_5")
    def st_5(self, b, n): return self._handle(5, b, n)
    @traced("st_6")
    def st_6(self, b, n): return self._handle(6, b, n)

    @traced()
    def init_machine(self):
        return 0, 0

    @traced()
    def accept(self, state, n):
        last = len(self.segments) - 1
        return self.logic("accept#2",
                          self.rel("accept#0", state, ACCEPT),
                          state == last and self.rel("accept#1", n, self.segments[last][1]))

    def main(self, data: bytes):
        handlers = (self.st_0, self.st_1, self.st_2, self.st_3, self.st_4, self.st_5, self.st_6)
        self.read_packet(bytes(data))
        state, n = self.init_machine()
        buf = bytes(data) + b"\x00"
        limit = self.bound("fsm_main#0", len(data))
        for i in range(min(limit, len(buf))):
            if state == ACCEPT or state == DEAD:
                break
            state, n = handlers[state](*self.swap("fsm_main#2", buf[i], n))
            if self.rel("fsm_main#1", state, DEAD):
                break
        matched = self.accept(*self.swap("accept#3", state, n))
        self.external("write", (matched,))
        self.state, self.count, self.matched = state, n, matched
        return matched

    def final_globals(self):
        return [("g_state", self.state), ("g_count", self.count), ("g_match", self.matched)]


def _sample_class(rng, cls) -> int:
    ranges = CLASSES[cls]
    lo, hi = ranges[int(rng.integers(len(ranges)))]
    return int(rng.integers(lo, hi + 1))


class FsmSubject(Subject):
    def __init__(self, name="fsm-proto", pattern="greeting"):
        super().__init__(name, FsmProgram, f"pattern matcher ({pattern})", pattern=pattern)
        self.pattern = PATTERNS[pattern]

    def check_payload(self, payload):
        if not isinstance(payload, (bytes, bytearray)) or len(payload) > 64:
            raise InvalidPayloadError("fsm-proto payload must be at most 64 bytes")

    def valid_string(self, rng) -> bytearray:
        out = bytearray()
        for cls, lo, hi in self.pattern:
            for _ in range(int(rng.integers(lo, hi + 1))):
                out.append(_sample_class(rng, cls))
        return out

    def generate_inputs(self, n, rng):
        """Well-formed messages, some with trailing bytes; most get one corruption."""
        inputs = []
        for i in range(n):
            s = self.valid_string(rng)
            if rng.random() < 0.3:
                s += bytes(int(b) for b in rng.integers(0, 256, size=int(rng.integers(1, 20))))
            if rng.random() < CORRUPT_RATE:
                kind = rng.choice(4, p=CORRUPT_KINDS)
                pos = int(rng.integers(len(s)))
                if kind == 0:
                    s[pos] = int(rng.integers(0, 256))
                elif kind == 1:
                    s[pos] = _sample_class(rng, int(rng.integers(len(CLASSES))))
                elif kind == 2:
                    del s[pos]
                else:
                    s = s[:max(1, pos)]
            inputs.append(TestInput(f"in{i:05d}", bytes(s[:64])))
        return inputs
