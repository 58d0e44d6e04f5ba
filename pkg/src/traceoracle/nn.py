"""Numerical substrate: LSTM cell, sigmoid MLP, binary cross-entropy, Adam.

Everything is float64 numpy with hand-derived reverse-mode gradients.  Gate
rows of a cell's stacked weight matrix are ordered input, forget, output,
candidate; the matrix multiplies ``concat(x, h)``.

Sequences are processed *packed*: the batch is sorted by decreasing length so
that at step ``t`` the still-running sequences form a prefix of the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_CLAMP = 1e-7
GATES = ("input", "forget", "output", "candidate")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class CellParams:
    W: np.ndarray  # (4H, I + H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_dim(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.hidden_dim

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(weights, bias) views of one gate, weights shaped (H, I + H)."""
        k = GATES.index(name)
        H = self.hidden_dim
        return self.W[k * H:(k + 1) * H], self.b[k * H:(k + 1) * H]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "CellParams":
        return cls(np.zeros((4 * hidden_dim, input_dim + hidden_dim)), np.zeros(4 * hidden_dim))

    @classmethod
    def random(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int,
               scale: float = 0.08) -> "CellParams":
        W = rng.uniform(-scale, scale, size=(4 * hidden_dim, input_dim + hidden_dim))
        b = rng.uniform(-scale, scale, size=4 * hidden_dim)
        return cls(W, b)


@dataclass
class FeedForwardParams:
    weights: list  # weights[l] shaped (out_l, in_l)
    biases: list

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "FeedForwardParams":
        return cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])

    @classmethod
    def random(cls, rng: np.random.Generator, sizes: Sequence[int],
               scale: float = 0.08, fan_scaled: bool = False) -> "FeedForwardParams":
        """Uniform(-scale, scale) weights, or with ``fan_scaled`` the sigmoid
        Glorot limit 4*sqrt(6/(fan_in+fan_out)) per layer; biases always use ``scale``."""
        ws, bs = [], []
        for i, o in zip(sizes[:-1], sizes[1:]):
            lim = 4.0 * np.sqrt(6.0 / (i + o)) if fan_scaled else scale
            ws.append(rng.uniform(-lim, lim, size=(o, i)))
            bs.append(rng.uniform(-scale, scale, size=o))
        return cls(ws, bs)


# -- recurrent cell ----------------------------------------------------------

def cell_step(p: CellParams, x, h, c):
    """One LSTM update; x, h, c may be 1-D vectors or (batch, dim) arrays."""
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    H = p.hidden_dim
    if x.shape[-1] != p.input_dim or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(
            f"shape mismatch: cell expects input {p.input_dim}, hidden {H}; "
            f"got x {x.shape}, h {h.shape}, c {c.shape}")
    z = np.concatenate([x, h], axis=-1) @ p.W.T + p.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class _SeqCache:
    inputs: list = field(default_factory=list)   # concat(x_t, h_{t-1}) per step
    gates: list = field(default_factory=list)    # (i, f, o, g) per step
    c_prev: list = field(default_factory=list)
    tanh_c: list = field(default_factory=list)
    batch: int = 0


def lstm_forward(p: CellParams, steps: Sequence[np.ndarray], batch: int, keep_cache: bool = True):
    """Run the cell over packed steps, starting from h = c = 0.

    ``steps[t]`` holds the inputs of the first ``len(steps[t])`` sequences at
    time ``t``; row counts must be non-increasing.  Returns the final hidden
    state of every sequence, shape (batch, H); zero-length sequences get zeros.
    """
    H = p.hidden_dim
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    cache = _SeqCache(batch=batch) if keep_cache else None
    Wt = p.W.T
    for x in steps:
        n = x.shape[0]
        hc = np.concatenate([x, h[:n]], axis=1)
        z = hc @ Wt + p.b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        o = sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        cp = c[:n].copy()
        c_new = f * cp + i * g
        tc = np.tanh(c_new)
        c[:n] = c_new
        h[:n] = o * tc
        if cache is not None:
            cache.inputs.append(hc)
            cache.gates.append((i, f, o, g))
            cache.c_prev.append(cp)
            cache.tanh_c.append(tc)
    return h, cache


def lstm_backward(p: CellParams, cache: _SeqCache, dh_final: np.ndarray):
    """Gradients of a packed run given dL/d(final hidden state).

    Returns (dW, db, dsteps) with dsteps[t] shaped like the forward steps[t].
    """
    H = p.hidden_dim
    I = p.input_dim
    dW = np.zeros_like(p.W)
    db = np.zeros_like(p.b)
    dh = np.array(dh_final, dtype=float, copy=True)
    dc = np.zeros_like(dh)
    dsteps = [None] * len(cache.inputs)
    for t in range(len(cache.inputs) - 1, -1, -1):
        hc = cache.inputs[t]
        i, f, o, g = cache.gates[t]
        tc = cache.tanh_c[t]
        n = hc.shape[0]
        dh_t = dh[:n]
        dc_t = dc[:n] + dh_t * o * (1.0 - tc * tc)
        dz = np.empty((n, 4 * H))
        dz[:, :H] = dc_t * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc_t * cache.c_prev[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh_t * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc_t * i * (1.0 - g * g)
        dW += dz.T @ hc
        db += dz.sum(axis=0)
        dhc = dz @ p.W
        dsteps[t] = dhc[:, :I]
        dh[:n] = dhc[:, I:]
        dc[:n] = dc_t * f
    return dW, db, dsteps


# -- feed-forward classifier -------------------------------------------------

def ffn_forward(p: FeedForwardParams, x, keep_cache: bool = False):
    """Sigmoid MLP; returns P(fail) with shape (batch,) (or a scalar for 1-D x)."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != p.sizes[0]:
        raise ValueError(f"shape mismatch: classifier expects {p.sizes[0]} inputs, got {a.shape[1]}")
    acts = [a]
    for W, b in zip(p.weights, p.biases):
        a = sigmoid(a @ W.T + b)
        acts.append(a)
    out = a[:, 0]
    if single:
        out = float(out[0])
    return (out, acts) if keep_cache else out


def ffn_backward(p: FeedForwardParams, acts: list, dout: np.ndarray):
    """Backprop dL/d(output) through the MLP; returns (dWs, dbs, dx)."""
    da = np.asarray(dout, float).reshape(-1, 1)
    dWs = [None] * len(p.weights)
    dbs = [None] * len(p.biases)
    for l in range(len(p.weights) - 1, -1, -1):
        a_out = acts[l + 1]
        dz = da * a_out * (1.0 - a_out)
        dWs[l] = dz.T @ acts[l]
        dbs[l] = dz.sum(axis=0)
        da = dz @ p.weights[l]
    return dWs, dbs, da


# -- loss --------------------------------------------------------------------

def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_loss(p_fail, y):
    """Binary cross-entropy with FAIL = 1; probabilities are clamped first."""
    p = clamp_prob(np.asarray(p_fail, float))
    y = np.asarray(y, float)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def bce_grad(p_fail, y):
    """dL/dp, zero wherever the clamp is active."""
    p = np.asarray(p_fail, float)
    y = np.asarray(y, float)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    pc = clamp_prob(p)
    return np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)


# -- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 8e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Bias-corrected Adam update of ``params`` (name -> array) in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
