"""scikit-learn estimators around the solver."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset, generate_triplets
from .loss import parse_loss
from .metric import LearnedMetric, knn_predict
from .solver import HyperParams, train


class SDPMetricLearner(TransformerMixin, BaseEstimator):
    """Learn a Mahalanobis metric from nearest-neighbour triplets.

    ``transform`` maps samples so that Euclidean distance in the output
    equals the learned distance.

    Parameters
    ----------
    C : float, default=1.0
        Weight of the margin violations.
    loss : {"squared_hinge", "huber", "hinge"}, default="squared_hinge"
    h : float, default=0.5
        Huber half-width.
    n_triplet_neighbors : int, default=3
        Same-class and different-class neighbours per sample used to build
        triplets; gives up to ``n * m**2`` triplets.
    max_outer, max_inner : int
        Iteration limits of the alternating loop and the inner
        conditional-gradient loop.
    tol : float, default=1e-5
    init : {"ones", "leading-constraint"}, default="ones"
    stopping : {"gap", "eigenvalue"}, default="gap"

    Attributes
    ----------
    metric_ : LearnedMetric
    components_ : ndarray of shape (n_features, rank)
        Factor ``P`` with ``P P^T`` equal to the learned matrix.
    rho_ : float
    state_ : SolverState
    n_features_in_ : int
    """

    def __init__(self, C=1.0, loss="squared_hinge", h=0.5, n_triplet_neighbors=3,
                 max_outer=500, max_inner=100, tol=1e-5, init="ones", stopping="gap"):
        self.C = C
        self.loss = loss
        self.h = h
        self.n_triplet_neighbors = n_triplet_neighbors
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.tol = tol
        self.init = init
        self.stopping = stopping

    def _hyperparams(self):
        return HyperParams(C=float(self.C), loss=parse_loss(self.loss, self.h),
                           max_outer=self.max_outer, max_inner=self.max_inner, tol=self.tol,
                           init=self.init, stopping=self.stopping,
                           allow_nonsmooth=self.loss == "hinge")

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float)
        check_classification_targets(y)
        classes, codes = np.unique(y, return_inverse=True)
        if classes.size < 2:
            raise ValueError("only 1 class present; triplets need at least two")
        ds = Dataset(X, codes, name="fit", classes=tuple(classes.tolist()))
        triplets = generate_triplets(ds, np.arange(len(y)), self.n_triplet_neighbors)
        self.state_ = train(triplets, self._hyperparams())
        self.metric_ = LearnedMetric.from_matrix(self.state_.X)
        self.components_ = self.metric_.P
        self.rho_ = self.state_.rho
        return self

    def transform(self, X):
        check_is_fitted(self, "metric_")
        X = validate_data(self, X, dtype=float, reset=False)
        return X @ self.components_

    def get_mahalanobis_matrix(self):
        check_is_fitted(self, "metric_")
        return self.metric_.X


class MahalanobisKNNClassifier(ClassifierMixin, BaseEstimator):
    """k-NN under a learned metric (Euclidean ``I/D`` if ``metric`` is None).

    Distance ties go to the earlier training sample and vote ties to the
    label of the nearest neighbour among the tied labels.
    """

    def __init__(self, n_neighbors=3, metric=None):
        self.n_neighbors = n_neighbors
        self.metric = metric

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        M = self.metric
        if M is None:
            M = LearnedMetric.euclidean(X.shape[1])
        elif isinstance(M, SDPMetricLearner):
            M = M.metric_
        elif not isinstance(M, LearnedMetric):
            M = LearnedMetric.from_matrix(M)
        if M.dim != X.shape[1]:
            raise ValueError(f"metric has dimension {M.dim}, data has {X.shape[1]} features")
        self.metric_ = M
        self._X, self._y = X, y
        return self

    def predict(self, X):
        check_is_fitted(self, "metric_")
        X = validate_data(self, X, dtype=float, reset=False)
        return knn_predict(self.metric_, self._X, self._y, X, self.n_neighbors)
