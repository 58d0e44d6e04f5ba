"""The trace classifier: value encoder, trace encoder, pooled globals, MLP.

A trace line becomes ``[ValEnc(args), ValEnc(ret), onehot(caller),
onehot(callee)]``; the line vectors run through the trace LSTM, the global
values are encoded by the *same* value LSTM and max-pooled, and the MLP reads
``[trace encoding, pooled globals]`` to produce P(fail).
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import nn
from .trace_io import Vocabulary, pool_loop_lines, prune_external
from .trace_model import GlobalBinding, Primitive, Trace, TraceLine, Value, Verdict

PRIM_BITS = 64
CHECKPOINT_VERSION = 1
_BIT_SHIFTS = np.arange(PRIM_BITS - 1, -1, -1, dtype=np.uint64)


@dataclass(frozen=True)
class OracleConfig:
    d_v: int = 64
    d_t: int = 128
    hidden: tuple = (128, 64, 32)
    threshold: float = 0.5
    max_lines: int = 1000
    max_prims: int = 256
    k_min: int = 2
    # ablations: the named segment of every input vector is zeroed
    drop_names: bool = False
    drop_args: bool = False
    drop_returns: bool = False
    drop_globals: bool = False

    def __post_init__(self):
        if self.d_v <= 0 or self.d_t <= 0:
            raise ValueError("d_v and d_t must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.max_lines < 1 or self.max_prims < 1:
            raise ValueError("length caps must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class ModelParams:
    val_cell: nn.CellParams
    tr_cell: nn.CellParams
    classifier: nn.FeedForwardParams
    vocab: Vocabulary
    config: OracleConfig
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.vocab)

    @property
    def line_dim(self) -> int:
        return 2 * self.config.d_v + 2 * self.k

    def arrays(self) -> dict:
        """Named views of every learnable array (mutating them mutates the model)."""
        out = {"val.W": self.val_cell.W, "val.b": self.val_cell.b,
               "tr.W": self.tr_cell.W, "tr.b": self.tr_cell.b}
        for l, (W, b) in enumerate(zip(self.classifier.weights, self.classifier.biases)):
            out[f"mlp.W{l}"] = W
            out[f"mlp.b{l}"] = b
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            nn.CellParams(self.val_cell.W.copy(), self.val_cell.b.copy()),
            nn.CellParams(self.tr_cell.W.copy(), self.tr_cell.b.copy()),
            nn.FeedForwardParams([w.copy() for w in self.classifier.weights],
                                 [b.copy() for b in self.classifier.biases]),
            self.vocab, self.config, self.seed, dict(self.meta))


def init_params(vocab: Vocabulary, config: OracleConfig, rng: np.random.Generator,
                scale: float = 0.08, seed: Optional[int] = None,
                mlp_init: str = "fan") -> ModelParams:
    """Random parameters: recurrent cells uniform(-scale, scale); classifier
    weights fan-scaled (``mlp_init="fan"``) or the same plain uniform (``"uniform"``)."""
    if mlp_init not in ("fan", "uniform"):
        raise ValueError(f"unknown classifier init {mlp_init!r}")
    k = len(vocab)
    val = nn.CellParams.random(rng, PRIM_BITS, config.d_v, scale)
    tr = nn.CellParams.random(rng, 2 * config.d_v + 2 * k, config.d_t, scale)
    mlp = nn.FeedForwardParams.random(rng, [config.d_t + config.d_v, *config.hidden, 1], scale,
                                      fan_scaled=mlp_init == "fan")
    return ModelParams(val, tr, mlp, vocab, config, seed)


def zero_params(vocab: Vocabulary, config: OracleConfig) -> ModelParams:
    k = len(vocab)
    return ModelParams(
        nn.CellParams.zeros(PRIM_BITS, config.d_v),
        nn.CellParams.zeros(2 * config.d_v + 2 * k, config.d_t),
        nn.FeedForwardParams.zeros([config.d_t + config.d_v, *config.hidden, 1]),
        vocab, config)


# -- per-item encoders -------------------------------------------------------

def bits_of(p: Primitive) -> np.ndarray:
    """64-bit pattern of the primitive, most significant bit first."""
    return ((np.uint64(p.raw) >> _BIT_SHIFTS) & np.uint64(1)).astype(np.float64)


def value_bits(v: Value, max_prims: Optional[int] = None) -> np.ndarray:
    prims = v.prims if max_prims is None else v.prims[:max_prims]
    raw = np.array([p.raw for p in prims], dtype=np.uint64)
    return ((raw[:, None] >> _BIT_SHIFTS[None, :]) & np.uint64(1)).astype(np.float64)


def val_enc(params: ModelParams, v: Value) -> np.ndarray:
    cell = params.val_cell
    h = np.zeros(cell.hidden_dim)
    c = np.zeros(cell.hidden_dim)
    for row in value_bits(v, params.config.max_prims):
        h, c = nn.cell_step(cell, row, h, c)
    return h


def one_hot(vocab: Vocabulary, name: str) -> np.ndarray:
    out = np.zeros(len(vocab))
    out[vocab.index_of(name)] = 1.0
    return out


def encode_line(params: ModelParams, line: TraceLine) -> np.ndarray:
    cfg = params.config
    k = params.k
    names = (np.zeros(2 * k) if cfg.drop_names else
             np.concatenate([one_hot(params.vocab, line.caller), one_hot(params.vocab, line.callee)]))
    a = np.zeros(cfg.d_v) if cfg.drop_args else val_enc(params, line.args)
    r = np.zeros(cfg.d_v) if cfg.drop_returns else val_enc(params, line.ret)
    return np.concatenate([a, r, names])


def tr_enc(params: ModelParams, encoded_lines: Sequence[np.ndarray]) -> np.ndarray:
    cell = params.tr_cell
    h = np.zeros(cell.hidden_dim)
    c = np.zeros(cell.hidden_dim)
    for x in encoded_lines:
        h, c = nn.cell_step(cell, x, h, c)
    return h


def max_pool(vectors: Sequence[np.ndarray], dim: int) -> np.ndarray:
    """Element-wise maximum; the zero vector when there is nothing to pool."""
    if len(vectors) == 0:
        return np.zeros(dim)
    return np.max(np.stack(vectors), axis=0)


def encode_globals(params: ModelParams, bindings: Sequence[GlobalBinding]) -> np.ndarray:
    if params.config.drop_globals:
        return np.zeros(params.config.d_v)
    return max_pool([val_enc(params, g.value) for g in bindings], params.config.d_v)


def verdict_for(p_fail: float, threshold: float) -> Verdict:
    return Verdict.FAIL if p_fail >= threshold else Verdict.PASS


def classify_reference(params: ModelParams, t: Trace) -> tuple[float, Verdict]:
    """Unbatched classification of an already preprocessed trace."""
    lines = t.lines[:params.config.max_lines]
    h = tr_enc(params, [encode_line(params, line) for line in lines])
    r_g = encode_globals(params, t.globals)
    p = nn.ffn_forward(params.classifier, np.concatenate([h, r_g]))
    return p, verdict_for(p, params.config.threshold)


# -- preprocessing into arrays ----------------------------------------------

def preprocess(t: Trace, max_lines: int, defined=None) -> Trace:
    """prune external callees, pool loop runs, keep the first ``max_lines``."""
    if defined is not None:
        t = prune_external(t, defined)
    t = pool_loop_lines(t)
    if len(t.lines) > max_lines:
        t = t.with_lines(t.lines[:max_lines])
    return t


@dataclass
class Prepared:
    """A preprocessed trace converted to arrays for batched evaluation.

    Value slots are ordered args_0, ret_0, args_1, ret_1, ..., then globals.
    """
    trace_id: str
    slots: list           # (L, 64) bit matrices, L may be 0
    caller: np.ndarray
    callee: np.ndarray
    n_lines: int
    n_globals: int
    label: Optional[int]


def prepare(t: Trace, vocab: Vocabulary, config: OracleConfig, defined=None) -> Prepared:
    t = preprocess(t, config.max_lines, defined)
    # an empty slot encodes to the zero vector, which is how ablations zero a segment
    empty = np.zeros((0, PRIM_BITS))
    slots = []
    for line in t.lines:
        slots.append(empty if config.drop_args else value_bits(line.args, config.max_prims))
        slots.append(empty if config.drop_returns else value_bits(line.ret, config.max_prims))
    bindings = () if config.drop_globals else t.globals
    for g in bindings:
        slots.append(value_bits(g.value, config.max_prims))
    return Prepared(
        t.trace_id, slots,
        np.array([vocab.index_of(l.caller) for l in t.lines], dtype=np.int64),
        np.array([vocab.index_of(l.callee) for l in t.lines], dtype=np.int64),
        len(t.lines), len(bindings),
        None if t.label is None else int(t.label))


def _pack(lengths: np.ndarray):
    """Sort order (longest first) and per-step active row counts."""
    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    max_len = int(sorted_len[0]) if len(sorted_len) else 0
    counts = [int(np.count_nonzero(sorted_len > t)) for t in range(max_len)]
    return order, counts


class _Batch:
    """Forward pass over a list of prepared traces, retaining what backward needs."""

    def __init__(self, params: ModelParams, batch: Sequence[Prepared], keep_cache: bool):
        cfg = params.config
        d_v, k = cfg.d_v, params.k
        B = len(batch)
        self.params = params
        self.B = B

        # value encoder over every slot of every trace
        slot_arrays = [s for p in batch for s in p.slots]
        S = len(slot_arrays)
        lengths = np.array([s.shape[0] for s in slot_arrays], dtype=np.int64)
        order, counts = _pack(lengths)
        bits = (np.concatenate([s for s in slot_arrays if s.shape[0]], axis=0)
                if lengths.sum() else np.zeros((0, PRIM_BITS)))
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        sorted_off = offsets[order]
        steps = [bits[sorted_off[:n] + t] for t, n in enumerate(counts)]
        h_sorted, self.val_cache = nn.lstm_forward(params.val_cell, steps, S, keep_cache)
        H = np.empty((S, d_v))
        H[order] = h_sorted
        self.val_order = order

        # line vectors
        slot_base = np.concatenate([[0], np.cumsum([len(p.slots) for p in batch])[:-1]]).astype(np.int64)
        n_lines = np.array([p.n_lines for p in batch], dtype=np.int64)
        total = int(n_lines.sum())
        arg_idx = np.concatenate([slot_base[b] + 2 * np.arange(p.n_lines) for b, p in enumerate(batch)]
                                 ).astype(np.int64) if total else np.zeros(0, np.int64)
        ret_idx = arg_idx + 1
        X = np.zeros((total, 2 * d_v + 2 * k))
        X[:, :d_v] = H[arg_idx]
        X[:, d_v:2 * d_v] = H[ret_idx]
        if not cfg.drop_names and total:
            callers = np.concatenate([p.caller for p in batch])
            callees = np.concatenate([p.callee for p in batch])
            rows = np.arange(total)
            X[rows, 2 * d_v + callers] = 1.0
            X[rows, 2 * d_v + k + callees] = 1.0
        self.arg_idx, self.ret_idx = arg_idx, ret_idx

        # trace encoder
        line_off = np.concatenate([[0], np.cumsum(n_lines)[:-1]]).astype(np.int64)
        t_order, t_counts = _pack(n_lines)
        t_sorted_off = line_off[t_order]
        self.line_rows = [t_sorted_off[:n] + t for t, n in enumerate(t_counts)]
        tsteps = [X[r] for r in self.line_rows]
        h_tr_sorted, self.tr_cache = nn.lstm_forward(params.tr_cell, tsteps, B, keep_cache)
        h_tr = np.empty((B, cfg.d_t))
        h_tr[t_order] = h_tr_sorted
        self.tr_order = t_order
        self.total_lines = total

        # pooled globals
        r_g = np.zeros((B, d_v))
        self.g_argmax = []
        for b, p in enumerate(batch):
            if p.n_globals:
                first = slot_base[b] + 2 * p.n_lines
                M = H[first:first + p.n_globals]
                am = np.argmax(M, axis=0)
                r_g[b] = M[am, np.arange(d_v)]
                self.g_argmax.append(first + am)
            else:
                self.g_argmax.append(None)

        self.features = np.concatenate([h_tr, r_g], axis=1)
        self.p, self.mlp_acts = nn.ffn_forward(params.classifier, self.features, keep_cache=True)
        self.S = S

    def backward(self, dp: np.ndarray) -> dict:
        params = self.params
        cfg = params.config
        d_v = cfg.d_v
        dWs, dbs, dfeat = nn.ffn_backward(params.classifier, self.mlp_acts, dp)
        grads = {}
        for l, (dW, db) in enumerate(zip(dWs, dbs)):
            grads[f"mlp.W{l}"] = dW
            grads[f"mlp.b{l}"] = db

        dH = np.zeros((self.S, d_v))
        d_rg = dfeat[:, cfg.d_t:]
        cols = np.arange(d_v)
        for b, am in enumerate(self.g_argmax):
            if am is not None:
                np.add.at(dH, (am, cols), d_rg[b])

        d_htr = dfeat[:, :cfg.d_t][self.tr_order]
        dW, db, dsteps = nn.lstm_backward(params.tr_cell, self.tr_cache, d_htr)
        grads["tr.W"], grads["tr.b"] = dW, db
        if self.total_lines:
            dX = np.zeros((self.total_lines, dsteps[0].shape[1] if dsteps else 0))
            for rows, d in zip(self.line_rows, dsteps):
                dX[rows] = d
            dH[self.arg_idx] += dX[:, :d_v]
            dH[self.ret_idx] += dX[:, d_v:2 * d_v]

        dW, db, _ = nn.lstm_backward(params.val_cell, self.val_cache, dH[self.val_order])
        grads["val.W"], grads["val.b"] = dW, db
        return grads


def predict_proba(params: ModelParams, batch: Sequence[Prepared], chunk: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(batch), chunk):
        out.append(_Batch(params, batch[i:i + chunk], keep_cache=False).p)
    return np.concatenate(out) if out else np.zeros(0)


def loss_and_grads(params: ModelParams, batch: Sequence[Prepared], labels=None):
    """Mean BCE over the batch and its gradient for every parameter array."""
    y = np.array([p.label for p in batch] if labels is None else labels, dtype=float)
    fwd = _Batch(params, batch, keep_cache=True)
    loss = float(np.mean(nn.bce_loss(fwd.p, y)))
    grads = fwd.backward(nn.bce_grad(fwd.p, y) / len(batch))
    return loss, grads


def classify(params: ModelParams, t: Trace, defined=None) -> tuple[float, Verdict]:
    """P(fail) and verdict for one trace (preprocessing applied here)."""
    p = float(predict_proba(params, [prepare(t, params.vocab, params.config, defined)])[0])
    return p, verdict_for(p, params.config.threshold)


# -- checkpoints -------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def checkpoint_text(params: ModelParams) -> str:
    doc = {
        "format": "traceoracle-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "config": {**asdict(params.config), "hidden": list(params.config.hidden)},
        "vocab": params.vocab.to_dict(),
        "meta": params.meta,
        "tensors": {name: _encode_array(a) for name, a in params.arrays().items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(path, params: ModelParams) -> str:
    text = checkpoint_text(params)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "traceoracle-checkpoint":
        raise ValueError(f"{path}: not a traceoracle checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = OracleConfig(**doc["config"])
    vocab = Vocabulary.from_dict(doc["vocab"])
    t = {name: _decode_array(d) for name, d in doc["tensors"].items()}
    n_layers = len(config.hidden) + 1
    params = ModelParams(
        nn.CellParams(t["val.W"], t["val.b"]),
        nn.CellParams(t["tr.W"], t["tr.b"]),
        nn.FeedForwardParams([t[f"mlp.W{l}"] for l in range(n_layers)],
                             [t[f"mlp.b{l}"] for l in range(n_layers)]),
        vocab, config, doc.get("seed"), doc.get("meta", {}))
    check_dimensions(params)
    return params


def check_dimensions(params: ModelParams) -> None:
    cfg = params.config
    problems = []
    if params.val_cell.input_dim != PRIM_BITS or params.val_cell.hidden_dim != cfg.d_v:
        problems.append("value cell shape disagrees with d_v")
    if params.tr_cell.input_dim != params.line_dim or params.tr_cell.hidden_dim != cfg.d_t:
        problems.append(f"trace cell input {params.tr_cell.input_dim} != 2*d_v + 2*k = {params.line_dim}")
    if params.classifier.sizes != [cfg.d_t + cfg.d_v, *cfg.hidden, 1]:
        problems.append(f"classifier sizes {params.classifier.sizes} disagree with config")
    if problems:
        raise ValueError("checkpoint/config mismatch: " + "; ".join(problems))


def params_digest(params: ModelParams) -> str:
    return hashlib.sha256(checkpoint_text(params).encode()).hexdigest()
