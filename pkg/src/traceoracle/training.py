"""Splitting, supervised training, metrics, sweeps, ablations, cross-subject runs."""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import nn
from .oracle_net import (
    ModelParams,
    OracleConfig,
    Prepared,
    init_params,
    loss_and_grads,
    predict_proba,
    prepare,
    verdict_for,
)
from .rng import stream
from .trace_io import build_vocab
from .trace_model import Trace, Verdict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-4
    init_scale: float = 0.08
    mlp_init: str = "fan"       # or "uniform": classifier weights drawn like the cells


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0
    stratified: bool = True


# -- split -------------------------------------------------------------------

def split(corpus: Sequence[Trace], spec: SplitSpec) -> tuple[list[Trace], list[Trace]]:
    """Deterministic train/test partition with |train| = round(fraction * n)."""
    n = len(corpus)
    if any(t.label is None for t in corpus):
        raise ValueError("split needs a fully labelled corpus")
    if not 0.0 < spec.train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(round(spec.train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"train fraction {spec.train_fraction} leaves an empty "
                         f"{'training' if n_train == 0 else 'test'} set for {n} traces")
    rng = stream(spec.seed, "split")
    if spec.stratified:
        groups = [[i for i, t in enumerate(corpus) if t.label is v] for v in Verdict]
        if any(not g for g in groups):
            raise ValueError("stratified split needs both pass and fail traces")
        # largest-remainder allocation so the class quotas add up to n_train
        exact = [n_train * len(g) / n for g in groups]
        quota = [int(math.floor(e)) for e in exact]
        for k in sorted(range(len(groups)), key=lambda k: (-(exact[k] - quota[k]), k)):
            if sum(quota) == n_train:
                break
            quota[k] += 1
        chosen = []
        for g, q in zip(groups, quota):
            chosen.extend(np.asarray(g)[rng.permutation(len(g))[:q]].tolist())
    else:
        chosen = rng.permutation(n)[:n_train].tolist()
    mask = np.zeros(n, bool)
    mask[chosen] = True
    return ([t for t, m in zip(corpus, mask) if m], [t for t, m in zip(corpus, mask) if not m])


# -- training ----------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    losses: list
    epochs: int


def train(train_set: Sequence[Trace], config: OracleConfig = OracleConfig(),
          tconfig: TrainConfig = TrainConfig(), seed: int = 0, defined=None) -> TrainResult:
    labels = {t.label for t in train_set}
    if None in labels:
        raise ValueError("training traces must be labelled")
    if len(labels) < 2:
        raise ValueError("training set holds a single class; the classifier cannot be fitted")
    vocab = build_vocab(train_set, config.k_min)
    params = init_params(vocab, config, stream(seed, "init"), tconfig.init_scale, seed,
                         tconfig.mlp_init)
    data = [prepare(t, vocab, config, defined) for t in train_set]
    losses = fit(params, data, tconfig, stream(seed, "shuffle"))
    params.meta = {"epochs": len(losses), "train_size": len(data)}
    return TrainResult(params, losses, len(losses))


def fit(params: ModelParams, data: Sequence[Prepared], tconfig: TrainConfig,
        rng: np.random.Generator) -> list[float]:
    """Mini-batch Adam on mean BCE with early stopping on the training loss."""
    adam = nn.AdamState(lr=tconfig.lr)
    arrays = params.arrays()
    history: list[float] = []
    best = math.inf
    stale = 0
    for epoch in range(tconfig.max_epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for s in range(0, len(data), tconfig.batch_size):
            batch = [data[i] for i in order[s:s + tconfig.batch_size]]
            loss, grads = loss_and_grads(params, batch)
            nn.adam_step(adam, arrays, grads)
            total += loss * len(batch)
        mean = total / len(data)
        history.append(mean)
        log.debug("epoch %d loss %.6f", epoch, mean)
        if best - mean < tconfig.min_delta:
            stale += 1
            if stale >= tconfig.patience:
                break
        else:
            stale = 0
        best = min(best, mean)
    return history


# -- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @staticmethod
    def _ratio(a, b) -> Optional[float]:
        return a / b if b else None

    @property
    def precision(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> Optional[float]:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def f1(self) -> Optional[float]:
        if self.precision is None or self.recall is None:
            return None
        return self._ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_verdicts(cls, predicted: Iterable[Verdict], actual: Iterable[Verdict]) -> "EvalReport":
        tp = fp = tn = fn = 0
        for p, a in zip(predicted, actual, strict=True):
            p, a = Verdict(p), Verdict(a)
            if p is Verdict.FAIL:
                tp, fp = (tp + 1, fp) if a is Verdict.FAIL else (tp, fp + 1)
            else:
                fn, tn = (fn + 1, tn) if a is Verdict.FAIL else (fn, tn + 1)
        return cls(tp, fp, tn, fn)

    def row(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "precision": self.precision, "recall": self.recall,
                "specificity": self.specificity, "f1": self.f1}

    def summary(self) -> str:
        def f(x):
            return "n/a" if x is None else f"{x:.3f}"
        return (f"precision {f(self.precision)}  recall {f(self.recall)}  "
                f"specificity {f(self.specificity)}  f1 {f(self.f1)}  "
                f"(tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn})")


def predict(params: ModelParams, traces: Sequence[Trace], defined=None) -> list[tuple[float, Verdict]]:
    probs = predict_proba(params, [prepare(t, params.vocab, params.config, defined) for t in traces])
    return [(float(p), verdict_for(float(p), params.config.threshold)) for p in probs]


def evaluate(params: ModelParams, test: Sequence[Trace], defined=None) -> EvalReport:
    if any(t.label is None for t in test):
        raise ValueError("evaluate needs labelled traces")
    verdicts = [v for _, v in predict(params, test, defined)]
    return EvalReport.from_verdicts(verdicts, [t.label for t in test])


# -- experiments -------------------------------------------------------------

@dataclass
class RunRow:
    key: str
    report: EvalReport
    epochs: int
    seed: int
    extra: dict = field(default_factory=dict)


def train_and_evaluate(train_set, test_set, config=OracleConfig(), tconfig=TrainConfig(),
                       seed: int = 0, defined=None) -> tuple[TrainResult, EvalReport]:
    """Fit on ``train_set`` only, then score ``test_set``."""
    res = train(train_set, config, tconfig, seed, defined)
    return res, evaluate(res.params, test_set, defined)


def run_split(corpus, fraction, config, tconfig, seed, defined=None, stratified=True) -> RunRow:
    tr, te = split(corpus, SplitSpec(fraction, seed, stratified))
    res, report = train_and_evaluate(tr, te, config, tconfig, seed, defined)
    return RunRow(f"{fraction:g}", report, res.epochs, seed)


def sweep_fraction(corpus, fractions: Sequence[float], config=OracleConfig(),
                   tconfig=TrainConfig(), seed: int = 0, defined=None) -> list[RunRow]:
    """Independent split/train/evaluate per training fraction."""
    return [run_split(corpus, f, config, tconfig, seed, defined) for f in fractions]


class Ablation(enum.Enum):
    FUNCTION_NAMES = "function_names"
    RETURN_VALUES = "return_values"
    ARGUMENTS = "arguments"
    HALF_LINES = "half_lines"
    GLOBAL_STATE = "global_state"

    @classmethod
    def parse(cls, text: str) -> "Ablation":
        text = text.strip().lower().replace("-", "_")
        aliases = {"names": "function_names", "returns": "return_values", "args": "arguments",
                   "globals": "global_state", "lines": "half_lines"}
        return cls(aliases.get(text, text))


ABLATION_FIELDS = {
    Ablation.FUNCTION_NAMES: "drop_names",
    Ablation.ARGUMENTS: "drop_args",
    Ablation.RETURN_VALUES: "drop_returns",
    Ablation.GLOBAL_STATE: "drop_globals",
}


def ablate_trace(t: Trace) -> Trace:
    """HALF_LINES: keep lines 0, 2, 4, ... (label and id untouched)."""
    return t.with_lines(t.lines[::2])


def ablation_config(config: OracleConfig, flag: Ablation) -> OracleConfig:
    """Config that zeroes the flagged segment after preprocessing (identity for HALF_LINES)."""
    field_name = ABLATION_FIELDS.get(flag)
    return replace(config, **{field_name: True}) if field_name else config


def ablate(corpus, flags, fraction: float, config=OracleConfig(), tconfig=TrainConfig(),
           seed: int = 0, defined=None) -> RunRow:
    """Train and evaluate with one information channel removed from every trace.

    Names, arguments, returns and globals are zeroed in the encoded input, so
    the architecture is unchanged; HALF_LINES drops alternate lines of the
    pruned trace.  Train and test traces are treated identically.
    """
    flags = [flags] if isinstance(flags, Ablation) else list(flags)
    if not flags:
        raise ValueError("ablate needs an ablation flag")
    if len(flags) > 1:
        raise ValueError("ablate removes one channel at a time")
    flag = flags[0]
    if flag is Ablation.HALF_LINES:
        if defined is not None:
            # halve the lines the model would actually see
            from .trace_io import prune_external
            corpus = [prune_external(t, defined) for t in corpus]
        corpus = [ablate_trace(t) for t in corpus]
    row = run_split(corpus, fraction, ablation_config(config, flag), tconfig, seed, defined)
    row.key = flag.name
    return row


def cross_eval(corpus_a, corpus_b, fraction: float, config=OracleConfig(),
               tconfig=TrainConfig(), seed: int = 0, defined_a=None, defined_b=None) -> dict:
    """Train on a split of A, evaluate on every trace of B not used for training.

    Returns {subject name: EvalReport}.  When B is A this is the usual
    held-out evaluation; vocabulary comes from A alone, so B's unseen names
    fall back to UNK.
    """
    tr, _ = split(corpus_a, SplitSpec(fraction, seed))
    res = train(tr, config, tconfig, seed, defined_a)
    seen = {t.trace_id for t in tr}
    held = [t for t in corpus_b if t.trace_id not in seen]
    out = {}
    for subj in sorted({t.subject for t in held}):
        part = [t for t in held if t.subject == subj]
        out[subj] = evaluate(res.params, part, defined_b)
    return out


# -- reporting ---------------------------------------------------------------

CSV_COLUMNS = ["tp", "fp", "tn", "fn", "precision", "recall", "specificity", "f1", "epochs", "seed"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_csv(rows: Sequence[RunRow], key_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([key_name] + CSV_COLUMNS)
    for r in rows:
        d = {**r.report.row(), "epochs": r.epochs, "seed": r.seed}
        w.writerow([r.key] + [_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()
