"""Mahalanobis metric learning from triplet constraints by conditional gradient
ascent over trace-one p.s.d. matrices."""

from .data import (DataFormatError, Dataset, SplitSpec, TripletConstraint, TripletSet,
                   apply_pca, generate_triplets, load_dense, load_libsvm, make_splits,
                   standardize)
from .linalg import (DenseOperator, EigenConvergenceError, EigenPair, PCAProjection,
                     RankOneSumOperator, SymmetricOperator, leading_eigenpair, pca_fit)
from .loss import LossKind, loss_derivative, loss_value, parse_loss
from .metric import (LearnedMetric, error_rate, knn_classify, knn_predict, mahalanobis_dist,
                     pairwise_distances, retrieval_accuracy)
from .solver import (HyperParams, MahalanobisMatrix, SolverState, gradient_X, line_search,
                     load_model, objective, rho_step, save_model, train, x_step)

__version__ = "0.1.0"

__all__ = [
    "DataFormatError", "Dataset", "SplitSpec", "TripletConstraint", "TripletSet", "apply_pca",
    "generate_triplets", "load_dense", "load_libsvm", "make_splits", "standardize",
    "DenseOperator", "EigenConvergenceError", "EigenPair", "PCAProjection", "RankOneSumOperator",
    "SymmetricOperator", "leading_eigenpair", "pca_fit", "LossKind", "loss_derivative",
    "loss_value", "parse_loss", "LearnedMetric", "error_rate", "knn_classify", "knn_predict",
    "mahalanobis_dist", "pairwise_distances", "retrieval_accuracy", "HyperParams",
    "MahalanobisMatrix", "SolverState", "gradient_X", "line_search", "load_model", "objective",
    "rho_step", "save_model", "train", "x_step",
]
