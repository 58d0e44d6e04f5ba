"""Clustering baseline: agglomerative clustering of bag-of-callee vectors.

Traces in clusters smaller than the mean cluster size are called failing.
The grid covers three linkages and five cluster-count fractions; labels are
only used to score each configuration.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .trace_io import Vocabulary, count_names, vocab_from_counts
from .trace_model import Trace, Verdict
from .training import EvalReport

FRACTIONS = (0.01, 0.05, 0.10, 0.20, 0.25)


class Linkage(enum.Enum):
    SINGLE = kernels.SINGLE
    AVERAGE = kernels.AVERAGE
    COMPLETE = kernels.COMPLETE

    @classmethod
    def parse(cls, text: str) -> "Linkage":
        return cls[text.upper()]


@dataclass(frozen=True)
class ClusterConfig:
    linkage: Linkage = Linkage.AVERAGE
    fraction: float = 0.10

    def n_clusters(self, n: int) -> int:
        return max(1, round(self.fraction * n))


def callee_vocab(traces: Sequence[Trace], k_min: int = 2) -> Vocabulary:
    return vocab_from_counts(count_names(traces, callers=False), k_min)


def featurize(traces: Sequence[Trace], vocab: Vocabulary) -> np.ndarray:
    """Row i counts the callee names of trace i; rare or unseen names land in UNK."""
    X = np.zeros((len(traces), len(vocab)), dtype=np.int64)
    for r, t in enumerate(traces):
        for line in t.lines:
            X[r, vocab.index_of(line.callee)] += 1
    return X


def distance_matrix(X: np.ndarray) -> np.ndarray:
    """Euclidean distances from exact row differences (symmetric, zero diagonal)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    D = np.empty((n, n))
    for i in range(n):
        D[i] = np.sqrt(((X - X[i]) ** 2).sum(axis=1))
    return D


def merge_history(X: np.ndarray, linkage: Linkage) -> tuple[np.ndarray, np.ndarray]:
    if len(X) == 0:
        raise ValueError("cannot cluster zero traces")
    return kernels.agglomerate(distance_matrix(X), linkage.value)


def cut(pairs: np.ndarray, n: int, n_clusters: int) -> np.ndarray:
    """Cluster labels after applying merges until ``n_clusters`` remain.

    Labels number clusters by their smallest member, in increasing order.
    """
    if not 1 <= n_clusters <= n:
        raise ValueError(f"cluster count {n_clusters} outside 1..{n}")
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs[:n - n_clusters]:
        parent[find(j)] = find(i)
    roots = np.array([find(a) for a in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels.astype(np.int64)


def cluster(X: np.ndarray, config: ClusterConfig) -> np.ndarray:
    pairs, _ = merge_history(np.asarray(X), config.linkage)
    n = len(X)
    return cut(pairs, n, config.n_clusters(n))


def classify_by_cluster(labels: Sequence[int]) -> list[Verdict]:
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    ids, sizes = np.unique(labels, return_counts=True)
    mean = labels.size / ids.size
    small = set(ids[sizes < mean].tolist())
    return [Verdict.FAIL if a in small else Verdict.PASS for a in labels.tolist()]


@dataclass(frozen=True)
class GridRow:
    config: ClusterConfig
    report: EvalReport


def grid_search(traces: Sequence[Trace], vocab: Optional[Vocabulary] = None,
                linkages: Sequence[Linkage] = tuple(Linkage),
                fractions: Sequence[float] = FRACTIONS) -> tuple[GridRow, list[GridRow]]:
    """Score every (linkage, fraction) pair; return the best row by F1 and the full grid."""
    if any(t.label is None for t in traces):
        raise ValueError("grid search needs labelled traces for scoring")
    vocab = vocab or callee_vocab(traces)
    X = featurize(traces, vocab)
    actual = [t.label for t in traces]
    n = len(traces)
    rows = []
    for linkage in linkages:
        pairs, _ = merge_history(X, linkage)
        for fraction in fractions:
            cfg = ClusterConfig(linkage, fraction)
            verdicts = classify_by_cluster(cut(pairs, n, cfg.n_clusters(n)))
            rows.append(GridRow(cfg, EvalReport.from_verdicts(verdicts, actual)))
    # first row wins on equal F1; undefined F1 ranks lowest
    best = max(rows, key=lambda r: -1.0 if r.report.f1 is None else r.report.f1)
    return best, rows


def grid_csv(rows: Sequence[GridRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["linkage", "fraction", "tp", "fp", "tn", "fn",
                "precision", "recall", "specificity", "f1"])
    for r in rows:
        m = r.report.row()
        w.writerow([r.config.linkage.name.lower(), r.config.fraction]
                   + [m[k] if m[k] is not None else "" for k in
                      ("tp", "fp", "tn", "fn", "precision", "recall", "specificity", "f1")])
    return buf.getvalue()
