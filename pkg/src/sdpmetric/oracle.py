"""Brute-force verifiers for the solver.

These are deliberately naive and share no code path with the solver beyond
the loss definitions: the 2-D grid search enumerates the feasible set
directly and the finite-difference gradient only calls an objective
evaluator.
"""
from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import loss as loss_mod
from . import solver as solver_mod
from .data import TripletSet
from .linalg import RankOneSumOperator, leading_eigenpair
from .loss import HUBER, SQUARED_HINGE, LossKind, loss_derivative, loss_value
from .solver import HyperParams, gradient_X, gradient_rho, objective, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the ``(x, y, rho)`` grid; ``rho_max=None`` picks a bound
    that covers every achievable margin."""

    resolution: int = 401
    rho_resolution: int = 401
    rho_max: float = None

    def __post_init__(self):
        for r in (self.resolution, self.rho_resolution):
            if r < 3 or r % 2 == 0:
                raise ValueError(f"grid resolution must be odd and >= 3, got {r}")


@dataclass(frozen=True)
class GridResult:
    objective: float
    X: np.ndarray
    rho: float
    lipschitz_bound: float


def _default_rho_max(triplets):
    top = 0.0
    for r in range(len(triplets)):
        A = np.outer(triplets.U[r], triplets.U[r]) - np.outer(triplets.V[r], triplets.V[r])
        top = max(top, float(np.linalg.eigvalsh(A)[-1]))
    return max(1.0, 2.0 * top)


def grid_solve_2d(triplets: TripletSet, hp: HyperParams, grid: GridSpec = GridSpec()) -> GridResult:
    """Exhaustive maximum of ``f`` over ``X = [[x, y], [y, 1-x]]`` and a ``rho`` grid.

    ``x`` runs over ``[0, 1]``, ``y`` over ``[-1/2, 1/2]`` restricted to
    ``y^2 <= x (1 - x)``. Ties go to the lexicographically smallest
    ``(x, y, rho)`` index.
    """
    if triplets.dim != 2:
        raise ValueError(f"grid oracle needs D = 2, got D = {triplets.dim}")
    n = grid.resolution
    xs = np.linspace(0.0, 1.0, n)
    ys = np.linspace(-0.5, 0.5, n)
    rho_max = grid.rho_max if grid.rho_max is not None else _default_rho_max(triplets)
    rhos = np.linspace(0.0, rho_max, grid.rho_resolution)

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    feasible = gy * gy <= gx * (1.0 - gx)
    px, py = gx[feasible], gy[feasible]

    U, V = triplets.U, triplets.V
    # <A_r, X> = a_r x + b_r y + c_r
    a = U[:, 0] ** 2 - U[:, 1] ** 2 - V[:, 0] ** 2 + V[:, 1] ** 2
    b = 2.0 * (U[:, 0] * U[:, 1] - V[:, 0] * V[:, 1])
    c = U[:, 1] ** 2 - V[:, 1] ** 2

    best, best_pt, best_rho = -np.inf, 0, 0
    chunk = max(1, 2_000_000 // (len(rhos) * len(triplets)))
    for s in range(0, px.size, chunk):
        m = np.outer(px[s:s + chunk], a) + np.outer(py[s:s + chunk], b) + c
        z = m[:, None, :] - rhos[None, :, None]
        f = rhos[None, :] - hp.C * loss_value(hp.loss, z).sum(axis=2)
        j = int(np.argmax(f))
        if f.flat[j] > best:
            best = float(f.flat[j])
            best_pt, best_rho = s + j // len(rhos), j % len(rhos)
    x, y = px[best_pt], py[best_pt]

    # crude global bound on |df| over one half grid cell
    z_max = float(np.max(np.abs(a)) + np.max(np.abs(b)) + np.max(np.abs(c)) + rho_max)
    dmax = {SQUARED_HINGE: 2.0 * z_max}.get(hp.loss.name, 1.0)
    step_x, step_y = xs[1] - xs[0], ys[1] - ys[0]
    step_r = rhos[1] - rhos[0]
    lip = 0.5 * (step_x * hp.C * dmax * np.sum(np.abs(a))
                 + step_y * hp.C * dmax * np.sum(np.abs(b))
                 + step_r * (1.0 + hp.C * dmax * len(triplets)))
    return GridResult(best, np.array([[x, y], [y, 1.0 - x]]), float(rhos[best_rho]), float(lip))


def finite_diff_grad(f, X, rho, delta=1e-6):
    """Central differences of ``f(X, rho)``.

    Off-diagonal entries ``(i, j)`` and ``(j, i)`` are perturbed together so
    ``X`` stays symmetric; the returned matrix is the symmetric gradient.
    Returns ``(G, df/drho)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    X = np.asarray(X, dtype=float)
    D = X.shape[0]
    G = np.zeros((D, D))
    for i in range(D):
        for j in range(i, D):
            E = np.zeros((D, D))
            E[i, j] = E[j, i] = 1.0
            g = (f(X + delta * E, rho) - f(X - delta * E, rho)) / (2.0 * delta)
            if i == j:
                G[i, i] = g
            else:
                G[i, j] = G[j, i] = 0.5 * g
    g_rho = (f(X, rho + delta) - f(X, rho - delta)) / (2.0 * delta)
    return G, g_rho


# ---------------------------------------------------------------- instances

def random_triplets(rng, n_triplets, dim, scale=1.0):
    """Gaussian triplets ``(a_i, a_j, a_k)`` with iid N(0, scale^2) entries."""
    a_i, a_j, a_k = (scale * rng.standard_normal((n_triplets, dim)) for _ in range(3))
    return TripletSet(a_i - a_k, a_i - a_j)


def random_feasible(rng, dim):
    """Random trace-one p.s.d. matrix of full rank."""
    B = rng.standard_normal((dim, dim))
    X = B @ B.T + 0.1 * np.eye(dim)
    return X / np.trace(X)


def oracle_instance(seed, n_triplets=None):
    """Seeded 2-D instance used by the grid-equivalence check."""
    rng = np.random.default_rng(seed)
    S = int(n_triplets or rng.integers(4, 11))
    T = random_triplets(rng, S, 2, scale=0.7)
    kind = LossKind(HUBER, 0.5) if seed % 2 else LossKind(SQUARED_HINGE)
    return T, HyperParams(C=0.5, loss=kind)


# ------------------------------------------------------------------- checks

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)


def check_loss_values():
    sq, hub = LossKind(SQUARED_HINGE), LossKind(HUBER, 0.5)
    cases = [(sq, 0.0, 0.0), (sq, -1.0, 1.0), (hub, -0.5, 0.5), (hub, 0.0, 0.125),
             (LossKind("hinge"), -2.0, 2.0)]
    bad = [(k.label, z, loss_value(k, z), want) for k, z, want in cases if loss_value(k, z) != want]
    return Check("loss values", not bad, f"mismatches: {bad}" if bad else f"{len(cases)} exact values")


def check_loss_derivatives(delta=1e-5, tol=1e-6):
    zs = np.linspace(-3.0, 3.0, 1000)
    worst = 0.0
    for kind in (LossKind(SQUARED_HINGE), LossKind(HUBER, 0.01), LossKind(HUBER, 0.1),
                 LossKind(HUBER, 0.5)):
        fd = (loss_value(kind, zs + delta) - loss_value(kind, zs - delta)) / (2 * delta)
        worst = max(worst, float(np.max(np.abs(loss_derivative(kind, zs) - fd))))
    return Check("loss derivative finite differences", worst <= tol, f"max error {worst:.2e}")


def check_gradients(seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in (LossKind(SQUARED_HINGE), LossKind(HUBER, 0.5)):
        T = random_triplets(rng, 20, 5)
        hp = HyperParams(C=0.7, loss=kind)
        X = random_feasible(rng, 5)
        m = T.margins(X)
        rho = float(np.median(m))
        G, g_rho = finite_diff_grad(lambda Y, r: objective(Y, r, T, hp), X, rho)
        Ga = gradient_X(X, rho, T, hp).todense()
        scale = max(1.0, float(np.max(np.abs(Ga))))
        worst = max(worst, float(np.max(np.abs(G - Ga))) / scale,
                    abs(g_rho - gradient_rho(X, rho, T, hp)) / max(1.0, abs(g_rho)))
    return Check("objective gradient finite differences", worst <= tol, f"max rel error {worst:.2e}")


def check_eigensolver(seed=0, tol=1e-8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dim in (5, 40, 300):
        T = random_triplets(rng, 30, dim)
        op = RankOneSumOperator(rng.uniform(0, 1, 30), T.U, T.V)
        ref = np.linalg.eigvalsh(op.todense())[-1]
        for method in ("lanczos", "auto"):
            got = leading_eigenpair(op, method=method).value
            worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    return Check("leading eigenvalue vs dense eigvalsh", worst <= tol, f"max rel error {worst:.2e}")


def check_training(seed=0):
    rng = np.random.default_rng(seed)
    T = random_triplets(rng, 60, 6)
    hp = HyperParams(C=0.2, loss=LossKind(HUBER, 0.5), max_outer=20, max_inner=20)
    worst_tr, worst_eig = 0.0, 0.0

    def cb(state):
        nonlocal worst_tr, worst_eig
        worst_tr = max(worst_tr, abs(state.X.trace - 1.0))
        worst_eig = max(worst_eig, -state.X.min_eigenvalue())

    st = train(T, hp, callback=cb)
    drops = float(np.max(-np.diff(st.history), initial=0.0))
    ok = worst_tr <= 1e-9 and worst_eig <= 1e-9 and drops <= 1e-10
    return Check("feasibility and monotonicity during training", ok,
                 f"|tr-1| {worst_tr:.1e}, -min eig {worst_eig:.1e}, max drop {drops:.1e}")


def check_fw_gap(seed=0, n_probe=1000):
    rng = np.random.default_rng(seed)
    T = random_triplets(rng, 40, 8)
    hp = HyperParams(C=0.5, loss=LossKind(SQUARED_HINGE))
    X = random_feasible(rng, 8)
    op = gradient_X(X, float(np.median(T.margins(X))), T, hp)
    pair = leading_eigenpair(op)
    W = rng.standard_normal((n_probe, 8))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    q = np.einsum("ij,ij->i", W @ op.todense(), W)
    excess = float(np.max(q) - pair.value)
    return Check("leading eigenvalue bounds rank-one ascent", excess <= 1e-6 * max(1, abs(pair.value)),
                 f"max w'Gw - l = {excess:.2e}")


def check_grid_equivalence(n_instances=5, grid=GridSpec(), tol=1e-3):
    gaps = []
    for seed in range(n_instances):
        T, hp = oracle_instance(seed)
        ref = grid_solve_2d(T, hp, grid).objective
        got = train(T, hp).objective
        gaps.append(ref - got)
    worst = max(gaps)
    return Check("train() vs exhaustive 2-D grid", worst <= tol,
                 f"max(grid - train) = {worst:.2e} over {n_instances} instances")


ALL_CHECKS = (check_loss_values, check_loss_derivatives, check_gradients, check_eigensolver,
              check_fw_gap, check_training, check_grid_equivalence)


@contextlib.contextmanager
def inject_fault(name):
    """Deliberately break a component to confirm the checks notice.

    ``"huber-sign"`` flips the sign of the Huber derivative.
    """
    if name is None:
        yield
        return
    if name != "huber-sign":
        raise ValueError(f"unknown fault {name!r}")
    original = loss_mod._derivative

    def flipped(kind, z):
        out = original(kind, z)
        return -out if kind.name == HUBER else out

    loss_mod._derivative = flipped
    solver_mod._derivative = flipped
    try:
        yield
    finally:
        loss_mod._derivative = original
        solver_mod._derivative = original


def run_verification(fault=None, checks=ALL_CHECKS, out=print):
    """Run every check, print one line each, return True iff all pass."""
    results = []
    with inject_fault(fault):
        for chk in checks:
            t = time.perf_counter()
            try:
                r = chk()
            except Exception as exc:  # a crash is a failed check, not an abort
                r = Check(chk.__name__, False, f"raised {type(exc).__name__}: {exc}")
            results.append(r)
            out(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} "
                f"[{time.perf_counter() - t:.1f}s]")
    return all(r.passed for r in results)
