"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria 1-8 are exact properties.  Criteria 9-14 are desk-scale runs on
generated corpora (marked slow, several minutes on one core); they share one
fsm-proto corpus and cache trainings so that no split is fitted twice.
"""
import itertools
import math
import struct
import time
from fractions import Fraction
from statistics import mean

import numpy as np
import pytest

from traceoracle import _kernels_py, kernels, training
from traceoracle.baseline import callee_vocab, distance_matrix, grid_search
from traceoracle.cli import main as cli_main
from traceoracle.oracle_net import (
    OracleConfig,
    bits_of,
    encode_globals,
    init_params,
    load_checkpoint,
    loss_and_grads,
    params_digest,
    prepare,
)
from traceoracle.rng import stream
from traceoracle.subjects import Op, generate_corpus, get_subject
from traceoracle.trace_io import UNK, Vocabulary, pool_loop_lines, prune_external
from traceoracle.trace_model import GlobalBinding, Primitive, Tag, Trace, TraceLine, Value, Verdict
from traceoracle.training import (
    Ablation,
    EvalReport,
    SplitSpec,
    TrainConfig,
    ablate,
    cross_eval,
    evaluate,
    run_split,
    split,
    train_and_evaluate,
)

from conftest import ACCEPTANCE, random_trace

try:
    from traceoracle import _kernels
except ImportError:
    _kernels = None


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


# -- 1. gradient correctness ---------------------------------------------------

def test_c01_gradients_match_finite_differences():
    t0 = time.perf_counter()
    cfg = OracleConfig(d_v=8, d_t=12, hidden=(16, 8))
    vocab = Vocabulary(("f", "g", "h", UNK), {})
    rng = np.random.default_rng(11)
    params = init_params(vocab, cfg, rng, scale=0.3)
    trace = random_trace(rng, 3, 2, names=("f", "g", "h", "x"), label=Verdict.FAIL)
    batch = [prepare(trace, vocab, cfg)]
    _, grads = loss_and_grads(params, batch)
    eps = 1e-5
    errors = []
    for name, arr in params.arrays().items():
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up, _ = loss_and_grads(params, batch)
            arr[idx] = old - eps
            down, _ = loss_and_grads(params, batch)
            arr[idx] = old
            fd = (up - down) / (2 * eps)
            errors.append(abs(g[idx] - fd) / (abs(g[idx]) + 1e-8))
    errors = np.array(errors)
    elapsed = time.perf_counter() - t0
    good = float(np.mean(errors < 1e-4))
    ok = good >= 0.999 and errors.max() < 1e-2 and elapsed < 60
    record(1, ok, f"{len(errors)} params, {good:.4%} below 1e-4, max rel err {errors.max():.2e}, "
                  f"{elapsed:.1f}s")


# -- 2. permutation invariance of global pooling ---------------------------------

def test_c02_global_pooling_permutation_invariant():
    cfg = OracleConfig(d_v=6, d_t=4, hidden=(4,))
    vocab = Vocabulary((UNK,), {})
    rng = np.random.default_rng(2)
    bad = 0
    for i in range(1000):
        params = init_params(vocab, cfg, rng, scale=float(rng.uniform(0.05, 2.0)))
        gl = list(random_trace(rng, 0, n_globals=int(rng.integers(1, 5))).globals)
        ref = encode_globals(params, gl).tobytes()
        bad += any(encode_globals(params, list(p)).tobytes() != ref for p in itertools.permutations(gl))
    record(2, bad == 0, f"1000 instances, {bad} with a permutation-dependent r_G")


# -- 3. bit fidelity ---------------------------------------------------------------

def _from_bits(b):
    return sum(int(x) << (63 - i) for i, x in enumerate(b))


def test_c03_bits_round_trip():
    rng = np.random.default_rng(3)
    prims = [Primitive.u8(v) for v in range(256)]
    prims += [Primitive.i64(v) for v in (0, 1, -1, -(1 << 63), (1 << 63) - 1)]
    floats = [1.0] + [float(x) for x in rng.normal(scale=1e3, size=499)]
    floats += [struct.unpack("<d", struct.pack("<Q", int(r)))[0]
               for r in rng.integers(0, 1 << 63, size=500, dtype=np.uint64) * 2 + rng.integers(0, 2, 500)]
    prims += [Primitive.f64(x) for x in floats]
    bad = [p for p in prims if _from_bits(bits_of(p)) != p.raw]
    one = _from_bits(bits_of(Primitive.f64(1.0))) == 0x3FF0000000000000
    record(3, not bad and one, f"{len(prims)} primitives, {len(bad)} mismatches, 1.0 pattern ok={one}")


# -- 4. preprocessing oracles --------------------------------------------------------

def ref_prune(t, defined):
    kept = []
    for line in t.lines:
        if line.callee in defined:
            kept.append(line)
    return t.with_lines(kept)


def ref_pool(t):
    def same(a, b):
        tags = lambda v: [p.tag for p in v.prims]
        return (a.caller, a.callee) == (b.caller, b.callee) and tags(a.args) == tags(b.args) \
            and tags(a.ret) == tags(b.ret)

    def avg(column):
        tag, n = column[0].tag, len(column)
        if tag is Tag.F64:
            return Primitive.f64(float(sum(Fraction(p.value) for p in column) / n))
        if tag is Tag.BOOL:
            return Primitive.boolean(sum(p.value for p in column) * 2 >= n)
        q = int(Fraction(sum(p.value for p in column), n))  # int() truncates toward zero
        return Primitive.i64(q) if tag is Tag.I64 else Primitive.u8(q)

    lines, out, i = t.lines, [], 0
    while i < len(lines):
        j = i
        while j + 1 < len(lines) and same(lines[i], lines[j + 1]):
            j += 1
        run = lines[i:j + 1]
        args = Value(tuple(avg([r.args.prims[k] for r in run]) for k in range(len(run[0].args))))
        ret = Value(tuple(avg([r.ret.prims[k] for r in run]) for k in range(len(run[0].ret))))
        out.append(run[0] if j == i else TraceLine(run[0].caller, run[0].callee, args, ret))
        i = j + 1
    return t.with_lines(out)


def loopy_trace(rng):
    """Random trace with many consecutive repeats and mostly-stable value shapes."""
    shapes = {"a": (Tag.I64,), "b": (Tag.F64, Tag.U8), "c": (Tag.BOOL,), "d": ()}

    def prim(tag):
        if tag is Tag.I64:
            return Primitive.i64(int(rng.integers(-50, 50)))
        if tag is Tag.F64:
            return Primitive.f64(float(rng.normal()))
        if tag is Tag.U8:
            return Primitive.u8(int(rng.integers(0, 256)))
        return Primitive.boolean(bool(rng.integers(0, 2)))

    lines = []
    for _ in range(int(rng.integers(0, 8))):
        callee = str(rng.choice(list(shapes)))
        shape = shapes[callee] if rng.random() < 0.8 else tuple(rng.choice(list(Tag), size=int(rng.integers(0, 3))))
        for _ in range(int(rng.integers(1, 5))):
            lines.append(TraceLine(str(rng.choice(["m", "n"])) if rng.random() < 0.2 else "m", callee,
                                   Value(tuple(prim(tg) for tg in shape)), Value((prim(Tag.I64),))))
    return Trace("t", "s", tuple(lines))


def test_c04_preprocessing_matches_reference():
    rng = np.random.default_rng(4)
    mismatches = not_idempotent = pooled = 0
    for _ in range(1000):
        t = loopy_trace(rng)
        defined = set(rng.choice(["a", "b", "c", "d"], size=int(rng.integers(0, 5))))
        p, q = prune_external(t, defined), pool_loop_lines(t)
        mismatches += (p != ref_prune(t, defined)) + (q != ref_pool(t))
        not_idempotent += (prune_external(p, defined) != p) + (pool_loop_lines(q) != q)
        pooled += len(q.lines) < len(t.lines)
    ok = mismatches == 0 and not_idempotent == 0
    record(4, ok, f"1000 traces ({pooled} with pooled runs): {mismatches} reference mismatches, "
                  f"{not_idempotent} idempotence failures")


# -- 5. metric identities ---------------------------------------------------------------

def test_c05_metrics_match_hand_arithmetic(monkeypatch):
    rng = np.random.default_rng(5)
    bad = 0
    for i in range(100):
        n = int(rng.integers(1, 60))
        labels = [Verdict(int(x)) for x in rng.integers(0, 2, n)]
        preds = [Verdict(int(x)) for x in rng.integers(0, 2, n)]
        test = [Trace(f"t{k}", "s", (), (), labels[k]) for k in range(n)]
        by_id = {t.trace_id: (0.5, v) for t, v in zip(test, preds)}
        monkeypatch.setattr(training, "predict", lambda params, ts, defined=None: [by_id[t.trace_id] for t in ts])
        r = evaluate(None, test)
        tp = sum(p == a == Verdict.FAIL for p, a in zip(preds, labels))
        fp = sum(p == Verdict.FAIL != a for p, a in zip(preds, labels))
        tn = sum(p == a == Verdict.PASS for p, a in zip(preds, labels))
        fn = n - tp - fp - tn
        ratio = lambda a, b: float(Fraction(a, b)) if b else None
        expected = (tp, fp, tn, fn, ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(tn, tn + fp))
        bad += (r.tp, r.fp, r.tn, r.fn, r.precision, r.recall, r.specificity) != expected
    record(5, bad == 0, f"100 random verdict/label sets, {bad} disagreements")


# -- 6. clustering oracle ----------------------------------------------------------------

def brute_merges(D, linkage):
    clusters = [[i] for i in range(len(D))]
    reduce = {0: np.min, 1: np.mean, 2: np.max}[linkage]
    merges = []
    while len(clusters) > 1:
        cand = [(reduce(D[np.ix_(clusters[a], clusters[b])]), min(clusters[a]), min(clusters[b]), a, b)
                for a, b in itertools.combinations(range(len(clusters)), 2)]
        m = min(c[0] for c in cand)
        _, i, j, a, b = min((c for c in cand if c[0] <= m + kernels.TIE_RTOL * abs(m)),
                            key=lambda c: (c[1], c[2]))
        merges.append((i, j))
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    return merges


def test_c06_clustering_matches_brute_force():
    rng = np.random.default_rng(6)
    backends = [_kernels_py] + ([_kernels] if _kernels is not None else [])
    bad = 0
    for it in range(200):
        n = int(rng.integers(1, 9))
        X = rng.poisson(1.5, size=(n, 4)) if it % 2 else rng.normal(size=(n, 3))
        D = distance_matrix(X)
        for linkage in (0, 1, 2):
            want = brute_merges(D, linkage)
            for b in backends:
                bad += [tuple(p) for p in b.agglomerate(D, linkage)[0].tolist()] != want
    names = "+".join(b.__name__.rsplit(".", 1)[-1] for b in backends)
    record(6, bad == 0, f"200 instances x 3 linkages on {names}: {bad} mismatches")


# -- 7. end-to-end determinism --------------------------------------------------------------

def test_c07_cli_runs_byte_identical(tmp_path):
    model = ["--d-v", "16", "--d-t", "24", "--hidden", "16,8", "--epochs", "5"]
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert cli_main(["gen", "--subject", "fsm-proto", "--inputs", "60", "--budget", "1200",
                         "--seed", "7", "--out", str(d)]) == 0
        assert cli_main(["train", "--traces", str(d / "traces.jsonl"), "--fraction", "0.3",
                         "--seed", "7", "--out", str(d), *model]) == 0
        assert cli_main(["eval", "--traces", str(d / "traces.jsonl"), "--checkpoint",
                         str(d / "checkpoint.json"), "--out", str(d / "eval")]) == 0
    files = ["traces.jsonl", "manifest.csv", "checkpoint.json", "report.csv", "verdicts.csv",
             "eval/verdicts.csv", "eval/report.csv"]
    differ = [f for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    same_digest = params_digest(load_checkpoint(tmp_path / "a" / "checkpoint.json")) == \
        params_digest(load_checkpoint(tmp_path / "b" / "checkpoint.json"))
    record(7, not differ and same_digest, f"{len(files)} files compared, differing: {differ or 'none'}")


# -- 8. no leakage ------------------------------------------------------------------------------

def test_c08_test_labels_never_reach_training():
    s = get_subject("refcount-box")
    corpus = generate_corpus(s, s.generate_inputs(40, stream(8, "inputs", s.name)), 800, 8).traces
    tr, te = split(corpus, SplitSpec(0.3, 8))
    flipped = [t.with_label(Verdict(1 - t.label)) for t in te]
    cfg, tcfg = OracleConfig(d_v=8, d_t=12, hidden=(8,)), TrainConfig(max_epochs=5, batch_size=8)
    a, _ = train_and_evaluate(tr, te, cfg, tcfg, 8, s.defined)
    b, _ = train_and_evaluate(tr, flipped, cfg, tcfg, 8, s.defined)
    same = all(np.array_equal(v, b.params.arrays()[k]) for k, v in a.params.arrays().items())
    record(8, same and a.losses == b.losses, f"parameters bit-identical after flipping {len(te)} test labels: {same}")


# -- 9-14. desk-scale runs ------------------------------------------------------------------------

SEEDS = (0, 1, 2)
CORPUS_SEED = 0


def make_corpus(name, n_inputs, seed=CORPUS_SEED, operators=None, budget=None):
    s = get_subject(name)
    inputs = s.generate_inputs(n_inputs, stream(seed, "inputs", s.name))
    return generate_corpus(s, inputs, budget or 20 * n_inputs, seed, operators).traces


class Runs:
    """Cache of split/train/evaluate results keyed by (fraction, seed)."""

    def __init__(self, corpus, defined):
        self.corpus, self.defined, self.rows, self.seconds = corpus, defined, {}, {}

    def get(self, fraction, seed):
        key = (fraction, seed)
        if key not in self.rows:
            t0 = time.perf_counter()
            self.rows[key] = run_split(self.corpus, fraction, OracleConfig(), TrainConfig(), seed, self.defined)
            self.seconds[key] = time.perf_counter() - t0
        return self.rows[key]


@pytest.fixture(scope="module")
def fsm():
    t0 = time.perf_counter()
    corpus = make_corpus("fsm-proto", 1000)
    runs = Runs(corpus, get_subject("fsm-proto").defined)
    runs.gen_seconds = time.perf_counter() - t0
    return runs


def _mean_metric(rows, name):
    return mean(getattr(r.report, name) or 0.0 for r in rows)


@pytest.mark.slow
def test_c09_oracle_quality(fsm):
    rows = [fsm.get(0.10, s) for s in SEEDS]
    p, r, s = (_mean_metric(rows, m) for m in ("precision", "recall", "specificity"))
    wall = fsm.gen_seconds + sum(fsm.seconds[(0.10, k)] for k in SEEDS)
    fails = sum(t.label is Verdict.FAIL for t in fsm.corpus)
    ok = min(p, r, s) >= 0.90 and wall <= 15 * 60
    record(9, ok, f"{len(fsm.corpus)} traces ({fails} fail), 10% training, 3 seeds: precision {p:.3f} "
                  f"recall {r:.3f} specificity {s:.3f}, {wall:.0f}s")


@pytest.mark.slow
def test_c10_training_fraction_sweep(fsm):
    fractions = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
    f1 = {f: fsm.get(f, 0).report.f1 or 0.0 for f in fractions}
    ok = f1[0.30] >= f1[0.05] - 0.03
    record(10, ok, "F1 by fraction " + " ".join(f"{int(round(f * 100))}%={v:.3f}" for f, v in f1.items()))


@pytest.mark.slow
def test_c11_baseline_gap(fsm):
    oracle_f1 = _mean_metric([fsm.get(0.10, s) for s in SEEDS], "f1")
    best, rows = grid_search(fsm.corpus, callee_vocab(fsm.corpus))
    gap = oracle_f1 - best.report.f1
    record(11, gap >= 0.15, f"oracle F1 {oracle_f1:.3f}, best baseline F1 {best.report.f1:.3f} "
                            f"({best.config.linkage.name.lower()} {best.config.fraction:g}), gap {gap:.3f}")


@pytest.mark.slow
def test_c12_argument_ablation(fsm):
    base = fsm.get(0.10, 0)
    ablated = ablate(fsm.corpus, Ablation.ARGUMENTS, 0.10, OracleConfig(), TrainConfig(), 0, fsm.defined)
    drop = (base.report.precision or 0.0) - (ablated.report.precision or 0.0)
    record(12, drop >= 0.10, f"fsm-proto precision {base.report.precision:.3f} -> "
                             f"{ablated.report.precision:.3f} without arguments (drop {drop:.3f})")


@pytest.mark.slow
def test_c13_unseen_bug_class():
    scalar = make_corpus("fsm-proto", 500, operators=[Op.SCALAR_VAR])
    relational = make_corpus("fsm-proto", 500, operators=[Op.RELATIONAL_OP])
    defined = get_subject("fsm-proto").defined
    reports = cross_eval(scalar, relational, 0.20, OracleConfig(), TrainConfig(), 0, defined, defined)
    rep = reports.get("fsm-proto")
    ok = rep is not None and rep.total > 0
    record(13, ok, f"SCALAR_VAR-trained on RELATIONAL_OP traces: {rep.summary() if rep else 'no report'}")


@pytest.mark.slow
def test_c14_cross_subject(fsm):
    other = make_corpus("fsm-proto-b", 500)
    reports = cross_eval(fsm.corpus, other, 0.10, OracleConfig(), TrainConfig(), 0,
                         fsm.defined, get_subject("fsm-proto-b").defined)
    rep = reports.get("fsm-proto-b")
    ok = list(reports) == ["fsm-proto-b"] and rep.total == len(other)
    record(14, ok, f"fsm-proto -> fsm-proto-b: {rep.summary() if rep else 'no report'}")
