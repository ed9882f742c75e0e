"""Soft-margin Mahalanobis metric learning over the trace-one p.s.d. cone.

The objective is

    f(X, rho) = rho - C * sum_r loss(<A_r, X> - rho)

maximised by alternating an exact 1-D update of ``rho`` with conditional
gradient steps on ``X``: each step moves ``X`` towards ``v v^T`` where ``v``
is the leading eigenvector of the gradient, so ``X`` stays a convex
combination of unit-trace rank-one matrices and never leaves the feasible
set. Only triplet margins are updated per step (``O(|S| D)``); ``X`` itself is
touched once per accepted step.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import TripletSet
from .linalg import RankOneSumOperator, SymmetricOperator, leading_eigenpair
from .loss import SQUARED_HINGE, LossKind, _derivative, loss_sum, zero_threshold

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-12
MAX_HALVINGS = 50


@dataclass(frozen=True)
class HyperParams:
    """Solver settings.

    ``max_outer`` and ``max_inner`` bound the alternating loop and the
    conditional-gradient loop per ``rho`` update. ``stopping="gap"`` ends the
    inner loop once the Frank-Wolfe gap drops below ``tol``;
    ``stopping="eigenvalue"`` uses the leading eigenvalue of the gradient
    instead. ``eig_method`` is passed to
    :func:`~sdpmetric.linalg.leading_eigenpair`.
    """

    C: float = 1.0
    loss: LossKind = field(default_factory=LossKind)
    max_outer: int = 500
    max_inner: int = 100
    tol: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    stopping: str = "gap"
    init: str = "ones"
    allow_nonsmooth: bool = False
    eig_tol: float = 1e-8
    eig_max_iter: int = 1000
    eig_method: str = "auto"
    track_atoms: bool = False

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_outer < 0 or self.max_inner < 0:
            raise ValueError("iteration limits must be non-negative")
        if self.stopping not in ("gap", "eigenvalue"):
            raise ValueError(f"unknown stopping rule {self.stopping!r}")
        if self.eig_method not in ("auto", "dense", "lanczos", "power"):
            raise ValueError(f"unknown eigensolver {self.eig_method!r}")
        if self.init not in ("ones", "leading-constraint"):
            raise ValueError(f"unknown init {self.init!r}")
        if not self.loss.smooth and not self.allow_nonsmooth:
            raise ValueError("the hinge loss is not differentiable; "
                             "set allow_nonsmooth=True to run subgradient steps anyway")

    def with_(self, **kw) -> "HyperParams":
        return replace(self, **kw)


class MahalanobisMatrix:
    """Trace-one p.s.d. matrix, optionally with its rank-one decomposition.

    ``atoms`` holds ``(weight, unit vector)`` pairs with ``X = sum w v v^T``
    when tracking is enabled.
    """

    def __init__(self, matrix, atoms=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.atoms = atoms

    @classmethod
    def rank_one(cls, v, track=False):
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v), [(1.0, v)] if track else None)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def step_towards(self, v, alpha):
        """``(1 - alpha) X + alpha v v^T``."""
        X = (1.0 - alpha) * self.matrix + alpha * np.outer(v, v)
        atoms = None
        if self.atoms is not None:
            atoms = [(w * (1.0 - alpha), a) for w, a in self.atoms] + [(alpha, v)]
        return MahalanobisMatrix(X, atoms)

    def check(self, tol=1e-9):
        """Raise ``AssertionError`` if any feasibility invariant fails."""
        X = self.matrix
        assert np.allclose(X, X.T, rtol=0, atol=1e-12), "X is not symmetric"
        assert abs(self.trace - 1.0) <= tol, f"trace {self.trace!r} != 1"
        assert self.min_eigenvalue() >= -tol, f"min eigenvalue {self.min_eigenvalue()!r} < 0"
        if self.atoms is not None:
            w = np.array([a[0] for a in self.atoms])
            assert np.all(w >= 0) and abs(w.sum() - 1.0) <= tol, "atom weights invalid"


@dataclass
class SolverState:
    X: MahalanobisMatrix
    rho: float
    objective: float
    fw_gap: float = np.nan
    outer_iter: int = 0
    inner_iter: int = 0
    history: list = field(default_factory=list)
    status: str = "max_iter"
    message: str = ""


def _as_matrix(X):
    return X.matrix if isinstance(X, MahalanobisMatrix) else np.asarray(X, dtype=float)


def _objective_from_margins(m, rho, hp):
    return float(rho - hp.C * loss_sum(hp.loss, np.asarray(m, dtype=float) - rho))


def objective(X, rho, triplets: TripletSet, hp: HyperParams) -> float:
    """``f(X, rho)`` evaluated through the factored triplet margins."""
    if len(triplets) == 0:
        raise ValueError("no triplets")
    m = triplets.margins(_as_matrix(X))
    if not (np.all(np.isfinite(m)) and np.isfinite(rho)):
        raise ValueError("non-finite margin or rho")
    return _objective_from_margins(m, rho, hp)


def _gradient_coef(m, rho, hp):
    return -hp.C * _derivative(hp.loss, np.asarray(m) - rho)


def gradient_X(X, rho, triplets: TripletSet, hp: HyperParams) -> SymmetricOperator:
    """``grad_X f = sum_r c_r (u_r u_r^T - v_r v_r^T)`` with ``c_r = -C loss'(z_r)``."""
    if not hp.loss.smooth and not hp.allow_nonsmooth:
        raise ValueError("gradient of the hinge loss is undefined")
    m = triplets.margins(_as_matrix(X))
    return RankOneSumOperator(_gradient_coef(m, rho, hp), triplets.U, triplets.V)


def gradient_rho(X, rho, triplets: TripletSet, hp: HyperParams) -> float:
    m = triplets.margins(_as_matrix(X))
    return float(1.0 + hp.C * np.sum(_derivative(hp.loss, m - rho)))


def _rho_squared_hinge(m, C):
    # On (m_(k), m_(k+1)] the k smallest margins are active and the
    # stationarity condition 1 - 2C sum_{i<=k} (rho - m_(i)) = 0 is linear.
    ms = np.sort(m)
    csum = np.cumsum(ms)
    for k in range(1, len(ms) + 1):
        rho = (0.5 / C + csum[k - 1]) / k
        hi = ms[k] if k < len(ms) else np.inf
        if rho <= hi:
            return float(rho)
    return float((0.5 / C + csum[-1]) / len(ms))


def _rho_bisect(m, hp, lo, hi, tol=1e-10):
    def slope(r):
        return 1.0 + hp.C * np.sum(_derivative(hp.loss, m - r))
    width_tol = tol * max(1.0, hi)
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _rho_from_margins(m, hp, rho_prev=None):
    m = np.asarray(m, dtype=float)
    cap = max(1.0, 2.0 * float(m.max()))
    if rho_prev is not None:
        cap = max(cap, rho_prev)

    def slope(r):
        return 1.0 + hp.C * np.sum(_derivative(hp.loss, m - r))

    if slope(cap) > 0:
        logger.warning("objective still increasing in rho at the cap %.6g; returning the cap", cap)
        rho = cap
    elif slope(RHO_FLOOR) <= 0:
        rho = RHO_FLOOR
    elif hp.loss.name == SQUARED_HINGE:
        rho = min(max(_rho_squared_hinge(m, hp.C), RHO_FLOOR), cap)
    else:
        rho = _rho_bisect(m, hp, RHO_FLOOR, cap)
    if rho_prev is not None and (_objective_from_margins(m, rho, hp)
                                 < _objective_from_margins(m, rho_prev, hp)):
        rho = rho_prev
    return rho


def rho_step(X, triplets: TripletSet, hp: HyperParams, rho_prev=None) -> float:
    """Maximiser of the concave function ``rho -> f(X, rho)`` on ``(0, cap]``.

    ``cap = max(1, 2 max_r <A_r, X>)``. Closed form for the squared hinge
    loss, bisection on the monotone derivative otherwise.
    """
    return _rho_from_margins(triplets.margins(_as_matrix(X)), hp, rho_prev)


def _search_1d(m, dm, rho, hp, f0=None):
    """Backtracking on ``phi(a) = f`` along margin direction ``dm``.

    Returns ``(alpha, phi(alpha))``; ``alpha == 0`` means no acceptable step.
    """
    C, kind = hp.C, hp.loss
    z0 = np.asarray(m, dtype=float) - rho
    dm = np.asarray(dm, dtype=float)
    # margins are affine in alpha: a triplet in the zero-loss region at both
    # ends of [0, 1] contributes nothing anywhere on the segment
    act = np.minimum(z0, z0 + dm) < zero_threshold(kind)
    z0, dm = z0[act], dm[act]

    def phi(a):
        return rho - C * loss_sum(kind, z0 + a * dm)

    def dphi(a):
        return float(-C * (_derivative(kind, z0 + a * dm) @ dm))

    if f0 is None:
        f0 = phi(0.0)
    g0 = dphi(0.0)
    if not g0 > 0:
        return 0.0, f0
    alpha, fallback = 1.0, None
    for _ in range(MAX_HALVINGS + 1):
        fa = phi(alpha)
        if fa >= f0 + hp.c1 * alpha * g0 and fa > f0:
            if abs(dphi(alpha)) <= hp.c2 * abs(g0):
                return alpha, fa
            if fallback is None:
                fallback = (alpha, fa)
        alpha *= 0.5
    if fallback is not None:
        logger.debug("curvature condition never met; accepting sufficient increase at %g", fallback[0])
        return fallback
    return 0.0, f0


def line_search(X, p, rho, triplets: TripletSet, hp: HyperParams) -> float:
    """Step size in ``(0, 1]`` along an ascent direction ``p``.

    Halves from 1 until sufficient increase and the curvature condition both
    hold; if that never happens within 50 halvings the largest step with
    sufficient increase is returned, and 0 if there is none.
    """
    m = triplets.margins(_as_matrix(X))
    dm = triplets.margins(np.asarray(p, dtype=float))
    return _search_1d(m, dm, rho, hp)[0]


def _leading(coef, triplets, hp, v0=None):
    op = RankOneSumOperator(coef, triplets.U, triplets.V)
    return leading_eigenpair(op, tol=hp.eig_tol, max_iter=hp.eig_max_iter,
                            method=hp.eig_method, v0=v0)


def _direction_margins(v, triplets):
    return (triplets.U @ v) ** 2 - (triplets.V @ v) ** 2


def x_step(X, rho, triplets: TripletSet, hp: HyperParams):
    """One conditional-gradient step on ``X`` at fixed ``rho``.

    Returns ``(X_new, fw_gap)``. When the gap is below ``tol`` or no step is
    accepted, ``X`` is returned unchanged.
    """
    Xm = X if isinstance(X, MahalanobisMatrix) else MahalanobisMatrix(X)
    m = triplets.margins(Xm.matrix)
    coef = _gradient_coef(m, rho, hp)
    pair = _leading(coef, triplets, hp)
    dm = _direction_margins(pair.vector, triplets) - m
    gap = float(coef @ dm)
    if gap < hp.tol:
        return Xm, gap
    alpha, _ = _search_1d(m, dm, rho, hp)
    if alpha == 0.0:
        return Xm, gap
    return Xm.step_towards(pair.vector, alpha), gap


def initial_matrix(triplets: TripletSet, hp: HyperParams) -> MahalanobisMatrix:
    D = triplets.dim
    if hp.init == "ones":
        v = np.ones(D)
    else:
        v = leading_eigenpair(RankOneSumOperator(np.ones(len(triplets)), triplets.U, triplets.V),
                              tol=hp.eig_tol, max_iter=hp.eig_max_iter).vector
    return MahalanobisMatrix.rank_one(v, track=hp.track_atoms)


def train(triplets: TripletSet, hp: HyperParams = HyperParams(), X0=None, dim=None,
          callback=None) -> SolverState:
    """Alternating maximisation of ``f`` over ``rho`` and ``X``.

    Parameters
    ----------
    triplets : TripletSet
    hp : HyperParams
    X0 : array_like or MahalanobisMatrix, optional
        Feasible starting point; defaults to ``u u^T`` with ``u`` the
        normalised all-ones vector.
    dim : int, optional
        Expected dimension, checked against the triplets.
    callback : callable, optional
        Called as ``callback(state)`` after every accepted step.

    Returns
    -------
    SolverState
        ``status`` is ``"converged"``, ``"max_iter"`` or ``"stalled"``.
    """
    if len(triplets) == 0:
        raise ValueError("no triplets")
    if dim is not None and dim != triplets.dim:
        raise ValueError(f"dimension {dim} does not match triplet dimension {triplets.dim}")
    if X0 is None:
        X = initial_matrix(triplets, hp)
    else:
        X = X0 if isinstance(X0, MahalanobisMatrix) else MahalanobisMatrix(X0)
        if X.matrix.shape != (triplets.dim, triplets.dim):
            raise ValueError(f"X0 shape {X.matrix.shape} does not match dimension {triplets.dim}")
        X.check()
    m = triplets.margins(X.matrix)
    rho = _rho_from_margins(m, hp)
    f = _objective_from_margins(m, rho, hp)
    state = SolverState(X, rho, f, history=[f])

    rho_prev, v_prev = rho, None
    for k in range(1, hp.max_outer + 1):
        f_prev_rho = _objective_from_margins(m, rho_prev, hp)
        rho = _rho_from_margins(m, hp, rho_prev) if k > 1 else rho_prev
        f_new_rho = _objective_from_margins(m, rho, hp)
        if k > 1:
            state.history.append(f_new_rho)
        f = f_new_rho
        stalled = False
        for i in range(hp.max_inner):
            coef = _gradient_coef(m, rho, hp)
            pair = _leading(coef, triplets, hp, v0=v_prev)
            v_prev = pair.vector
            dm = _direction_margins(pair.vector, triplets) - m
            gap = float(coef @ dm)
            state.fw_gap = gap
            if hp.stopping == "gap" and gap < hp.tol:
                break
            if hp.stopping == "eigenvalue" and pair.value < hp.tol:
                break
            alpha, f_alpha = _search_1d(m, dm, rho, hp, f0=f)
            if alpha == 0.0:
                stalled = i == 0 and gap > hp.tol
                break
            X = X.step_towards(pair.vector, alpha)
            m = m + alpha * dm
            f = f_alpha
            state.inner_iter += 1
            state.history.append(f)
            state.X, state.rho, state.objective = X, rho, f
            if callback is not None:
                callback(state)
        state.X, state.rho, state.objective, state.outer_iter = X, rho, f, k
        if stalled:
            state.status = "stalled"
            state.message = f"line search found no ascent step at outer iteration {k} (gap {gap:.3e})"
            logger.warning(state.message)
            return state
        if k > 1 and abs(f - f_new_rho) < hp.tol and abs(f_new_rho - f_prev_rho) < hp.tol:
            state.status = "converged"
            break
        rho_prev = rho
    else:
        if hp.max_outer == 0:
            state.status = "converged"
            state.message = "no iterations requested"
    return state


def model_to_json(state: SolverState, hp: HyperParams, extra=None) -> str:
    """Serialise a trained model; matrix entries carry 17 significant digits."""
    X = state.X.matrix
    head = {"dim": int(X.shape[0]), "trace": 1.0}
    tail = {"rho": state.rho, "loss": hp.loss.name, "h": hp.loss.h, "C": hp.C,
            "status": state.status, "history": [float(f) for f in state.history]}
    if extra:
        tail.update(extra)
    matrix = "[" + ", ".join("%.17g" % x for x in X.ravel()) + "]"
    body = json.dumps(head)[:-1] + ', "matrix": ' + matrix + ", " + json.dumps(tail)[1:]
    return body + "\n"


def save_model(path, state: SolverState, hp: HyperParams, extra=None):
    Path(path).write_text(model_to_json(state, hp, extra))


def load_model(path) -> dict:
    """Read a model file; ``"matrix"`` is returned as a ``D x D`` array."""
    d = json.loads(Path(path).read_text())
    D = int(d["dim"])
    M = np.asarray(d["matrix"], dtype=float)
    if M.size != D * D:
        raise ValueError(f"{path}: matrix has {M.size} entries, expected {D}x{D}")
    d["matrix"] = M.reshape(D, D)
    return d
