"""Using a learned Mahalanobis matrix: distances, k-NN and retrieval."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

EIG_DROP = 1e-12
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class LearnedMetric:
    """A p.s.d. matrix ``X`` and, optionally, a factor ``P`` with ``P P^T = X``."""

    X: np.ndarray
    P: np.ndarray = None

    @classmethod
    def from_matrix(cls, X, materialize=True):
        X = np.asarray(getattr(X, "matrix", X), dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ValueError(f"metric matrix must be square, got {X.shape}")
        P = factorize(X) if materialize else None
        return cls(X, P)

    @classmethod
    def euclidean(cls, dim):
        """``X = I / D``: squared Euclidean distance scaled by ``1 / D``."""
        return cls.from_matrix(np.eye(dim) / dim)

    @property
    def dim(self):
        return self.X.shape[0]

    def embed(self, A):
        """Rows mapped so that Euclidean distance equals this metric."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[1] != self.dim:
            raise ValueError(f"samples have dimension {A.shape[1]}, metric has {self.dim}")
        if self.P is not None:
            return A @ self.P
        return A @ factorize(self.X)


def factorize(X):
    """``P`` (``D x d``) with ``P P^T = X`` from the eigendecomposition.

    Eigenvalues below ``1e-12`` are dropped.
    """
    w, V = np.linalg.eigh(X)
    keep = w > EIG_DROP
    if not keep.any():
        return np.zeros((X.shape[0], 1))
    return V[:, keep] * np.sqrt(w[keep])


def mahalanobis_dist(metric, a, b) -> float:
    """``(a - b)^T X (a - b)``."""
    X = metric.X if isinstance(metric, LearnedMetric) else np.asarray(metric, dtype=float)
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.shape != (X.shape[0],):
        raise ValueError(f"dimension mismatch: vectors {np.shape(a)}/{np.shape(b)}, metric {X.shape}")
    return float(d @ X @ d)


def pairwise_distances(metric: LearnedMetric, Q, G) -> np.ndarray:
    """Squared distances between rows of ``Q`` and rows of ``G``.

    Computed from explicit differences in the embedded space, so identical
    rows are exactly 0 apart.
    """
    q = metric.embed(Q)
    g = metric.embed(G)
    out = np.empty((q.shape[0], g.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, g.size))
    for s in range(0, q.shape[0], step):
        diff = q[s:s + step, None, :] - g[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _vote(neighbor_labels):
    labels, first, counts = np.unique(neighbor_labels, return_index=True, return_counts=True)
    best = counts == counts.max()
    # among tied labels, the one met first in distance order wins
    return labels[best][np.argmin(first[best])]


def knn_predict(metric: LearnedMetric, train_X, train_y, queries, k=3) -> np.ndarray:
    """Majority vote over the ``k`` nearest training samples.

    Distance ties go to the smaller training index; vote ties to the label
    of the nearest neighbour among the tied labels.
    """
    train_y = np.asarray(train_y)
    n = len(train_y)
    if n == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    D = pairwise_distances(metric, queries, train_X)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    return np.array([_vote(train_y[row]) for row in nn])


def knn_classify(metric: LearnedMetric, train_X, train_y, query, k=3):
    """Label of a single query; see :func:`knn_predict`."""
    return knn_predict(metric, train_X, train_y, np.atleast_2d(query), k)[0]


def error_rate(metric: LearnedMetric, train, test, k=3) -> float:
    """Fraction of ``test = (X, y)`` misclassified by k-NN on ``train = (X, y)``."""
    test_X, test_y = test
    if len(test_y) == 0:
        return 0.0
    pred = knn_predict(metric, train[0], train[1], test_X, k)
    return float(np.mean(pred != np.asarray(test_y)))


def retrieval_accuracy(metric: LearnedMetric, gallery_X, gallery_y, queries, query_y,
                       top_n=20) -> np.ndarray:
    """Mean precision of the ``n`` nearest gallery items, ``n = 1..top_n``.

    Each query's target class is its own label.
    """
    gallery_y = np.asarray(gallery_y)
    query_y = np.asarray(query_y)
    if gallery_y.size == 0:
        raise ValueError("empty gallery")
    if top_n > gallery_y.size:
        logger.warning("top_n=%d exceeds gallery size %d; clamping", top_n, gallery_y.size)
        top_n = gallery_y.size
    D = pairwise_distances(metric, queries, gallery_X)
    order = np.argsort(D, axis=1, kind="stable")[:, :top_n]
    hits = gallery_y[order] == query_y[:, None]
    return (np.cumsum(hits, axis=1) / np.arange(1, top_n + 1)).mean(axis=0)


def average_curves(curves) -> np.ndarray:
    """Average per-subset retrieval curves (each already averaged over its queries)."""
    return np.mean(np.vstack(curves), axis=0)


REPORT_COLUMNS = ("dataset", "split", "method", "error_rate", "std", "train_seconds")


def write_report(rows, path):
    """Evaluation rows (dicts keyed by :data:`REPORT_COLUMNS`) to CSV."""
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in REPORT_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v
