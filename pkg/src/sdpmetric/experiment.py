"""The benchmark protocol: split, preprocess, generate triplets, pick C on the
validation split, train, and score k-NN on the test split."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, SplitSpec, apply_pca, generate_triplets, make_splits, standardize
from .metric import LearnedMetric, error_rate
from .solver import HyperParams, SolverState, train

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = tuple(10.0 ** e for e in range(-3, 4))


@dataclass
class RunResult:
    seed: int
    C: float
    state: SolverState
    hp: HyperParams
    split: SplitSpec
    validation_error: float
    test_error: float
    euclidean_test_error: float
    train_seconds: float
    n_triplets: int


def preprocess(ds: Dataset, split: SplitSpec, pca_dim=None, zscore=False) -> Dataset:
    """Optional z-scoring and PCA, both fitted on the training rows only."""
    if zscore:
        ds = standardize(ds, split.train)
    if pca_dim:
        ds, _ = apply_pca(ds, split.train, int(pca_dim))
    return ds


def timed_train(triplets, hp, **kw):
    t = time.perf_counter()
    state = train(triplets, hp, **kw)
    return state, time.perf_counter() - t


def select_C(ds: Dataset, split: SplitSpec, triplets, hp: HyperParams, grid=DEFAULT_C_GRID, k=3,
             callback=None):
    """Train once per ``C`` and keep the lowest validation k-NN error.

    Ties go to the smaller ``C``. Returns ``(C, state, val_error, seconds)``.
    """
    train_set = ds.subset(split.train)
    val_set = ds.subset(split.validation)
    best = None
    for C in sorted(set(float(c) for c in grid)):
        state, secs = timed_train(triplets, hp.with_(C=float(C)), callback=callback)
        err = error_rate(LearnedMetric.from_matrix(state.X), train_set, val_set, k)
        logger.info("C=%g: validation error %.4f (%s, %.2fs)", C, err, state.status, secs)
        if best is None or err < best[2]:
            best = (float(C), state, err, secs)
    return best


def run_split(ds: Dataset, seed: int, hp: HyperParams, C_grid=None, m=3, k=3,
              fractions=(0.70, 0.15, 0.15), pca_dim=None, zscore=False,
              callback=None) -> RunResult:
    """One repeat of the protocol on the split drawn with ``seed``.

    With ``C_grid=None`` the value in ``hp`` is used and the validation split
    is only scored. ``callback`` is handed to every :func:`train` call.
    """
    split = make_splits(ds, seed, fractions)
    ds = preprocess(ds, split, pca_dim, zscore)
    triplets = generate_triplets(ds, split.train, m)
    train_set, test_set = ds.subset(split.train), ds.subset(split.test)
    if C_grid:
        C, state, val_err, secs = select_C(ds, split, triplets, hp, C_grid, k, callback)
    else:
        C = hp.C
        state, secs = timed_train(triplets, hp, callback=callback)
        val_err = error_rate(LearnedMetric.from_matrix(state.X), train_set,
                             ds.subset(split.validation), k)
    test_err = error_rate(LearnedMetric.from_matrix(state.X), train_set, test_set, k)
    eu_err = error_rate(LearnedMetric.euclidean(ds.dim), train_set, test_set, k)
    return RunResult(seed, C, state, hp.with_(C=C), split, val_err, test_err, eu_err, secs,
                     len(triplets))


def summarize(results):
    """Mean and standard deviation of the test errors over repeats."""
    learned = np.array([r.test_error for r in results])
    eu = np.array([r.euclidean_test_error for r in results])
    return {"learned_mean": float(learned.mean()), "learned_std": float(learned.std()),
            "euclidean_mean": float(eu.mean()), "euclidean_std": float(eu.std()),
            "train_seconds": float(np.mean([r.train_seconds for r in results]))}
