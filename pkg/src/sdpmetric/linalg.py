"""Symmetric linear algebra used by the solver.

The solver never needs a full eigendecomposition of the gradient, only its
algebraically largest eigenpair, so the gradient is exposed as a matrix-free
operator and handed to a Lanczos iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000
# below this size one BLAS-3 densification plus LAPACK beats the ~D/2 BLAS-2
# matvecs Lanczos needs (measured on 1e3-1e4 rank-one terms)
DENSE_MAX_DIM = 256


class SymmetricOperator:
    """Abstract symmetric ``D x D`` operator ``w -> M w``."""

    dim: int

    def matvec(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, w):
        return self.matvec(np.asarray(w, dtype=float))

    def todense(self) -> np.ndarray:
        return np.column_stack([self.matvec(e) for e in np.eye(self.dim)])

    def norm_bound(self) -> float:
        """Cheap upper bound on the spectral radius."""
        raise NotImplementedError


class DenseOperator(SymmetricOperator):
    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
            raise ValueError("matrix is not symmetric")
        self.matrix = m
        self.dim = m.shape[0]

    def matvec(self, w):
        return self.matrix @ w

    def todense(self):
        return self.matrix.copy()

    def norm_bound(self):
        return float(np.abs(self.matrix).sum(axis=1).max())


class RankOneSumOperator(SymmetricOperator):
    """``M = sum_r c_r (u_r u_r^T - v_r v_r^T)`` kept in factored form.

    A matvec costs ``O(|S| D)``; rows with zero coefficient are dropped up
    front since most triplets sit in the flat part of the loss.
    """

    def __init__(self, coef, U, V):
        coef = np.asarray(coef, dtype=float)
        U = np.atleast_2d(np.asarray(U, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if U.shape != V.shape or coef.shape != (U.shape[0],):
            raise ValueError(
                f"shape mismatch: coef {coef.shape}, U {U.shape}, V {V.shape}")
        self.dim = U.shape[1]
        active = coef != 0.0
        self.coef = coef[active]
        self.U = U[active]
        self.V = V[active]

    def matvec(self, w):
        if self.coef.size == 0:
            return np.zeros(self.dim)
        return self.U.T @ (self.coef * (self.U @ w)) - self.V.T @ (self.coef * (self.V @ w))

    def todense(self):
        return (self.U.T * self.coef) @ self.U - (self.V.T * self.coef) @ self.V

    def norm_bound(self):
        return float(np.sum(np.abs(self.coef) * (
            np.einsum("ij,ij->i", self.U, self.U) + np.einsum("ij,ij->i", self.V, self.V))))


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float = 0.0
    iterations: int = 0


class EigenConvergenceError(RuntimeError):
    """Raised when the eigensolver runs out of iterations.

    The last iterate is attached so callers can decide whether it is usable.
    """

    def __init__(self, message, pair: EigenPair):
        super().__init__(message)
        self.pair = pair
        self.residual = pair.residual


def _start_vector(dim):
    return np.full(dim, 1.0 / np.sqrt(dim))


def _fix_sign(v):
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _tridiag_top(alpha, beta):
    k = len(alpha)
    if k == 1:
        return alpha[0], np.ones(1)
    w, s = eigh_tridiagonal(np.asarray(alpha), np.asarray(beta[: k - 1]),
                            select="i", select_range=(k - 1, k - 1))
    return w[0], s[:, 0]


_RITZ_EVERY = 6


def _lanczos(op, tol, max_iter, v0=None):
    D = op.dim
    n_max = min(max_iter, D)
    Q = np.zeros((n_max, D))
    alpha, beta = [], []
    q = _start_vector(D)
    if v0 is not None and np.linalg.norm(v0) > 0:
        q = np.asarray(v0, dtype=float) / np.linalg.norm(v0)
    broke_down = False
    scale = 0.0
    theta, s, resid = 0.0, np.ones(1), np.inf
    k = 0
    for k in range(n_max):
        Q[k] = q
        w = op.matvec(q)
        a = float(q @ w)
        w = w - a * q
        if k > 0:
            w -= beta[k - 1] * Q[k - 1]
        # two passes of classical Gram-Schmidt keep the basis orthogonal to
        # machine precision
        for _ in range(2):
            w -= Q[: k + 1].T @ (Q[: k + 1] @ w)
        b = float(np.linalg.norm(w))
        alpha.append(a)
        scale = max(scale, abs(a), b)
        tiny = b <= 1e-12 * max(scale, 1.0)
        # the Ritz solve costs more than a matvec, so only look every few steps
        if k + 1 == D or k + 1 == n_max or tiny or (k + 1) % _RITZ_EVERY == 0:
            theta, s = _tridiag_top(alpha, beta)
            resid = b * abs(s[-1])
        else:
            resid = np.inf
        if k + 1 == D:
            break
        if tiny:
            # Krylov space is invariant; restart in its orthogonal complement
            # with the coordinate direction it captures least
            broke_down = True
            proj = np.eye(D) - Q[: k + 1].T @ Q[: k + 1]
            j = int(np.argmax(np.einsum("ij,ij->i", proj, proj)))
            w = proj[j]
            for _ in range(2):
                w = w - Q[: k + 1].T @ (Q[: k + 1] @ w)
            q = w / np.linalg.norm(w)
            beta.append(0.0)
            continue
        # after a breakdown the top Ritz value may still come from an earlier
        # block, so only a full basis certifies it
        if not broke_down and resid <= tol * max(1.0, abs(theta)):
            break
        beta.append(b)
        q = w / b
    y = Q[: k + 1].T @ s
    y = _fix_sign(y / np.linalg.norm(y))
    true_resid = float(np.linalg.norm(op.matvec(y) - theta * y))
    pair = EigenPair(float(theta), y, true_resid, k + 1)
    converged = (k + 1 == D) or resid <= tol * max(1.0, abs(theta))
    if not converged:
        raise EigenConvergenceError(
            f"Lanczos did not converge in {k + 1} iterations (residual {true_resid:.3e})", pair)
    return pair


def _shifted_power(op, tol, max_iter):
    D = op.dim
    shift = op.norm_bound()
    v = _start_vector(D)
    best_resid, stalled_for, perturbed = np.inf, 0, False
    theta, resid = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = op.matvec(v)
        theta = float(v @ w)
        resid = float(np.linalg.norm(w - theta * v))
        if resid <= tol * max(1.0, abs(theta)):
            return EigenPair(theta, _fix_sign(v), resid, it)
        if resid < 0.5 * best_resid:
            best_resid, stalled_for = resid, 0
        else:
            stalled_for += 1
        if stalled_for > 50 and not perturbed:
            w = w + 1e-6 * np.eye(D)[0]
            perturbed = True
        w = w + shift * v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return EigenPair(0.0, _fix_sign(v), 0.0, it)
        v = w / nrm
    raise EigenConvergenceError(
        f"power iteration did not converge in {max_iter} iterations (residual {resid:.3e})",
        EigenPair(theta, _fix_sign(v), resid, max_iter))


def _dense(op):
    w, V = np.linalg.eigh(op.todense())
    y = _fix_sign(V[:, -1])
    resid = float(np.linalg.norm(op.matvec(y) - w[-1] * y))
    return EigenPair(float(w[-1]), y, resid, 1)


def leading_eigenpair(op, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                      method: str = "auto", v0=None) -> EigenPair:
    """Algebraically largest eigenvalue of a symmetric operator.

    Parameters
    ----------
    op : SymmetricOperator or array_like
        Dense arrays are wrapped in :class:`DenseOperator`.
    tol : float
        Relative residual target ``|Mv - lv| <= tol * max(1, |l|)``.
    max_iter : int
    method : {"auto", "lanczos", "dense", "power"}
        ``"auto"`` densifies operators up to 256 x 256 and runs LAPACK,
        otherwise Lanczos with full reorthogonalisation. ``"power"`` is
        shifted power iteration; slow on clustered spectra, kept as an
        independent cross-check.
    v0 : ndarray, optional
        Lanczos start vector, e.g. the previous answer when the operator
        changes slowly. Ignored by the other methods.

    Returns
    -------
    EigenPair
        Unit vector with its first non-negligible entry positive.

    Raises
    ------
    EigenConvergenceError
        If the residual target is not met within ``max_iter`` iterations.
    """
    if not isinstance(op, SymmetricOperator):
        op = DenseOperator(op)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method == "auto":
        method = "dense" if op.dim <= DENSE_MAX_DIM else "lanczos"
    if method == "dense":
        return _dense(op)
    if method == "lanczos":
        return _lanczos(op, tol, max_iter, v0)
    if method == "power":
        return _shifted_power(op, tol, max_iter)
    raise ValueError(f"unknown eigensolver {method!r}")


def quad_form(X, w) -> float:
    """``w^T X w``."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or w.shape != (X.shape[0],):
        raise ValueError(f"dimension mismatch: X {X.shape}, w {w.shape}")
    return float(w @ X @ w)


@dataclass(frozen=True)
class PCAProjection:
    components: np.ndarray  # D x d, orthonormal columns
    mean: np.ndarray
    explained_variance: np.ndarray

    def transform(self, samples):
        return (np.asarray(samples, dtype=float) - self.mean) @ self.components


def pca_fit(samples, target_dim: int) -> PCAProjection:
    """Top-variance orthonormal directions of mean-centred data.

    Columns are ordered by decreasing variance and each is signed so that its
    first non-negligible entry is positive.
    """
    A = np.asarray(samples, dtype=float)
    if A.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n, D = A.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    if not 1 <= target_dim <= min(D, n):
        raise ValueError(f"target_dim must be in [1, {min(D, n)}], got {target_dim}")
    mean = A.mean(axis=0)
    _, sing, Vt = np.linalg.svd(A - mean, full_matrices=False)
    if Vt.shape[0] < target_dim:
        raise ValueError(f"target_dim {target_dim} exceeds the data rank")
    comps = np.column_stack([_fix_sign(Vt[i]) for i in range(target_dim)])
    var = sing[:target_dim] ** 2 / (n - 1)
    return PCAProjection(comps, mean, var)
