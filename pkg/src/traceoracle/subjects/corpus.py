"""Labelled corpus generation: reference runs pass, output-changing mutants fail."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ..rng import stream
from ..trace_model import Trace, Verdict
from .base import Op, Subject, TestInput

log = logging.getLogger(__name__)


class NoFailingTracesError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    trace_id: str
    input_id: str
    mutation_id: str      # "none" for reference runs
    label: Verdict


@dataclass
class Corpus:
    subject: str
    traces: list = field(default_factory=list)
    manifest: list = field(default_factory=list)
    attempts: int = 0

    def counts(self) -> dict:
        out = {"pass": 0, "fail": 0}
        for t in self.traces:
            out[str(t.label)] += 1
        return out

    def manifest_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trace_id", "input_id", "mutation_id", "label"])
        for r in self.manifest:
            w.writerow([r.trace_id, r.input_id, r.mutation_id, str(r.label)])
        return buf.getvalue()


def generate_corpus(subject: Subject, inputs: Sequence[TestInput], budget: int, seed: int,
                    operators: Optional[Iterable[Op]] = None,
                    balance: float = 1.0) -> Corpus:
    """Reference traces of every input plus single-mutant traces whose output differs.

    Generation runs in rounds over the inputs in a seeded order.  Each input
    owns a seeded ordering of the mutation points; in every round it tries
    its next ``budget // len(inputs)`` points (at least one) and keeps the
    first one that changes the output.  Rounds repeat until the failing count
    reaches ``balance * len(inputs)``, the budget is spent, or every point has
    been tried on every input.  Equivalent mutants (same output as the
    reference on that input) are discarded.
    """
    if not inputs:
        raise ValueError("generate_corpus needs at least one input")
    corpus = Corpus(subject.name)
    reference = {}
    for test in inputs:
        r = subject.run(test, label=Verdict.PASS)
        reference[test.id] = r.output
        corpus.traces.append(r.trace)
        corpus.manifest.append(ManifestRow(r.trace.trace_id, test.id, "none", Verdict.PASS))

    points = subject.mutation_points(operators)
    if not points:
        raise NoFailingTracesError(f"{subject.name}: no mutation points for operators {operators}")
    rng = stream(seed, "generation", subject.name)
    target = int(round(balance * len(inputs)))
    share = max(1, budget // len(inputs))
    visit = [int(i) for i in rng.permutation(len(inputs))]
    orders = {i: [int(j) for j in rng.permutation(len(points))] for i in visit}
    cursor = dict.fromkeys(visit, 0)
    fails = 0

    def done():
        return fails >= target or corpus.attempts >= budget

    while not done() and any(cursor[i] < len(points) for i in visit):
        for i in visit:
            if done():
                break
            test = inputs[i]
            stop = min(cursor[i] + share, len(points))
            while cursor[i] < stop and corpus.attempts < budget:
                point = points[orders[i][cursor[i]]]
                cursor[i] += 1
                corpus.attempts += 1
                r = subject.run(test, [point], label=Verdict.FAIL)
                if r.output != reference[test.id]:
                    fails += 1
                    corpus.traces.append(r.trace)
                    corpus.manifest.append(ManifestRow(r.trace.trace_id, test.id, point.id,
                                                       Verdict.FAIL))
                    break
    if fails == 0:
        raise NoFailingTracesError(
            f"{subject.name}: mutation budget of {budget} runs produced no failing trace")
    log.info("%s: %d pass, %d fail from %d mutant runs", subject.name, len(inputs), fails,
             corpus.attempts)
    return corpus
