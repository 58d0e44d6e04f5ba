"""Operation-script interpreter over a reference-counted box.

A script is a list of ``(op, slot)`` pairs acting on eight handle slots:
NEW puts a fresh box in the slot, COPY shares the slot's box with the next
slot, RESET and DROP release the slot's reference, USE observes the count.
The output is the list of observed counts followed by the number of boxes
still alive after every handle is released.
"""
from __future__ import annotations

from .base import InvalidPayloadError, Op, Program, Subject, TestInput, traced

NEW, COPY, RESET, DROP, USE = range(5)
N_SLOTS = 8


class RefcountProgram(Program):
    GLOBALS = ("g_live", "g_next_id")
    SITES = {
        "release#0": (Op.RELATIONAL_OP, "=="),
        "retain#0": (Op.SCALAR_VAR, "rc"),
        "copy_handle#0": (Op.LOGICAL_CONNECTOR, "and"),
        "copy_handle#1": (Op.RELATIONAL_OP, "!="),
        "copy_handle#2": (Op.SCALAR_VAR, "src"),
        "copy_handle#3": (Op.ARG_SWAP, "obj,rc"),
        "reset_handle#0": (Op.LOGICAL_CONNECTOR, "not"),
        "drop_handle#0": (Op.RELATIONAL_OP, "<"),
        "drop_all#0": (Op.LOOP_BOUNDARY, "n_slots"),
        "use_handle#0": (Op.RELATIONAL_OP, ">"),
        "exec_op#0": (Op.RELATIONAL_OP, "=="),
        "make_box#0": (Op.RELATIONAL_OP, "!="),
    }

    def __init__(self, mutations=()):
        super().__init__(mutations)
        self.handles = [None] * N_SLOTS
        self.rc = {}
        self.live = 0
        self.next_id = 1
        self.observed = []

    @traced()
    def make_box(self, slot):
        obj = self.next_id
        self.next_id += 1
        self.rc[obj] = 1
        self.live += 1
        if self.rel("make_box#0", self.handles[slot] or 0, 0):
            self._release_slot(slot)
        self.handles[slot] = obj
        return obj, 1

    @traced()
    def retain(self, obj, rc):
        new = self.scalar("retain#0", rc, self.rc.get(obj, 0)) + 1
        if obj in self.rc:
            self.rc[obj] = new
        return new

    @traced()
    def destroy(self, obj):
        self.rc.pop(obj, None)
        self.live -= 1

    @traced()
    def release(self, obj, rc):
        new = rc - 1
        if obj in self.rc:
            self.rc[obj] = new
            if self.rel("release#0", new, 0):
                self.destroy(obj)
        return new

    def _release_slot(self, slot):
        obj = self.handles[slot]
        if obj is not None and obj in self.rc:
            self.release(obj, self.rc[obj])
        self.handles[slot] = None

    @traced()
    def copy_handle(self, slot):
        src = self.handles[slot]
        dst = (slot + 1) % N_SLOTS
        if self.logic("copy_handle#0", src is not None, self.rel("copy_handle#1", dst, slot)):
            if self.handles[dst] is not None:
                self._release_slot(dst)
            obj = self.scalar("copy_handle#2", src, self.handles[slot - 1])
            if obj is not None and obj in self.rc:
                self.retain(*self.swap("copy_handle#3", obj, self.rc[obj]))
            self.handles[dst] = obj
        return dst

    @traced()
    def reset_handle(self, slot):
        if self.logic("reset_handle#0", self.handles[slot] is None):
            self._release_slot(slot)

    @traced()
    def drop_handle(self, slot):
        # drop also compacts: the last occupied slot moves into the hole
        self._release_slot(slot)
        last = max((i for i, h in enumerate(self.handles) if h is not None), default=-1)
        if self.rel("drop_handle#0", slot, last):
            self.handles[slot], self.handles[last] = self.handles[last], None

    @traced()
    def use_count(self, obj):
        return self.rc.get(obj, 0)

    @traced()
    def use_handle(self, slot):
        obj = self.handles[slot]
        n = self.use_count(obj) if obj is not None else 0
        self.observed.append(n if self.rel("use_handle#0", n, 0) else 0)

    @traced()
    def exec_op(self, op, slot):
        if self.rel("exec_op#0", op, NEW):
            self.make_box(slot)
        elif op == COPY:
            self.copy_handle(slot)
        elif op == RESET:
            self.reset_handle(slot)
        elif op == DROP:
            self.drop_handle(slot)
        elif op == USE:
            self.use_handle(slot)

    @traced()
    def drop_all(self, n):
        for slot in range(min(self.bound("drop_all#0", n), N_SLOTS)):
            self._release_slot(slot)
        return self.live

    def main(self, script):
        for op, slot in script:
            self.exec_op(op, slot)
        live = self.drop_all(N_SLOTS)
        self.external("fflush", (live,))
        return tuple(self.observed) + (live,)

    def final_globals(self):
        return [("g_live", self.live), ("g_next_id", self.next_id)]


class RefcountSubject(Subject):
    def __init__(self, name="refcount-box"):
        super().__init__(name, RefcountProgram, "reference-counted container scripts")

    def check_payload(self, payload):
        if not isinstance(payload, (tuple, list)) or not payload:
            raise InvalidPayloadError("refcount-box payload is a non-empty op script")
        for item in payload:
            if (not isinstance(item, tuple) or len(item) != 2 or item[0] not in range(5)
                    or item[1] not in range(N_SLOTS)):
                raise InvalidPayloadError(f"bad script step {item!r}")

    def generate_inputs(self, n, rng):
        out = []
        weights = [0.3, 0.25, 0.1, 0.1, 0.25]
        for i in range(n):
            length = int(rng.integers(3, 31))
            ops = rng.choice(5, size=length, p=weights)
            slots = rng.integers(0, 4, size=length)
            out.append(TestInput(f"in{i:05d}", tuple((int(o), int(s)) for o, s in zip(ops, slots))))
        return out
