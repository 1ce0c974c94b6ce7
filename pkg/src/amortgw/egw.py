"""Entropic Gromov-Wasserstein baseline and exhaustive permutation oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .annealing import AnnealSchedule, epsilon_at
from .errors import InvalidInputError, NumericalError
from .geometry import DistanceMatrix
from .sinkhorn import Coupling, check_marginal, neg_entropy, sinkhorn_solve

MAX_BRUTE_FORCE_N = 10


@dataclass
class Permutation:
    """Bijection ``i -> mapping[i]`` from points of X to points of Y."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        n = m.shape[0]
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(n)):
            raise InvalidInputError("mapping is not a permutation of 0..N-1")
        self.mapping = m

    def matrix(self):
        n = self.mapping.shape[0]
        P = np.zeros((n, n))
        P[np.arange(n), self.mapping] = 1.0
        return P

    def plan(self, mu=None):
        n = self.mapping.shape[0]
        mu = np.full(n, 1.0 / n) if mu is None else mu
        return mu[:, None] * self.matrix()


@dataclass
class GWResult:
    coupling: Coupling
    gw_loss: float
    outer_iterations: int
    loss_trace: list = field(default_factory=list)
    gw_trace: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    converged: bool = False

    @property
    def plan(self):
        return self.coupling.plan


def _values(D):
    return D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)


def _plan(coupling):
    return coupling.plan if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=np.float64)


def _check_shapes(DX, DY, P):
    if DX.ndim != 2 or DX.shape[0] != DX.shape[1] or DY.ndim != 2 or DY.shape[0] != DY.shape[1]:
        raise InvalidInputError("distance matrices must be square")
    if P.shape != (DX.shape[0], DY.shape[0]):
        raise InvalidInputError(f"plan shape {P.shape} does not match distance shapes {DX.shape}, {DY.shape}")


def gw_loss(D_X, D_Y, coupling):
    r"""Measure-weighted squared GW loss of a coupling.

    Computes :math:`\sum_{i,j,k,l} (D^X_{ik} - D^Y_{jl})^2 \pi_{ij}\pi_{kl}`
    in O(N^3) by expanding the square, using the actual marginals of the
    plan so the identity holds for infeasible plans as well.
    """
    DX, DY, P = _values(D_X), _values(D_Y), _plan(coupling)
    _check_shapes(DX, DY, P)
    a, b = P.sum(1), P.sum(0)
    cross = np.sum((DX @ P @ DY.T) * P)
    val = a @ (DX**2) @ a + b @ (DY**2) @ b - 2.0 * cross
    return float(max(val, 0.0))


def gw_frobenius(D_X, D_Y, coupling, scale=1.0):
    """Raw matrix-form objective ``||D_X - (sP) D_Y (sP)^T||_F^2``.

    Differs from :func:`gw_loss` by the marginal weighting; with
    ``scale=N`` and a uniform permutation plan it equals the unweighted
    sum of squared distance disagreements.
    """
    DX, DY, P = _values(D_X), _values(D_Y), _plan(coupling)
    _check_shapes(DX, DY, P)
    Ps = scale * P
    R = DX - Ps @ DY @ Ps.T
    return float(np.sum(R * R))


def argmax_assignment(plan):
    """Row-wise argmax (ties go to the smallest column index)."""
    return np.argmax(_plan(plan), axis=1)


def hard_plan(assignment, mu, m):
    """Plan putting all of row ``i``'s mass on column ``assignment[i]``."""
    n = len(assignment)
    P = np.zeros((n, m))
    P[np.arange(n), assignment] = mu
    return P


def rounded_gw_loss(D_X, D_Y, plan, mu=None):
    P = _plan(plan)
    mu = P.sum(1) if mu is None else mu
    return gw_loss(D_X, D_Y, hard_plan(argmax_assignment(P), mu, P.shape[1]))


def linearized_cost(DX, DY, P):
    # gradient of the cross term -2<DX P DY^T, P>; row/column constants dropped
    return -2.0 * (DX @ P @ DY.T + DX.T @ P @ DY)


class _GWTerms:
    """Loss and linearised cost at a plan, sharing the ``D_X P D_Y^T`` product."""

    def __init__(self, DX, DY):
        self.DX, self.DY = DX, DY
        self.DX2, self.DY2 = DX**2, DY**2
        self.symmetric = np.array_equal(DX, DX.T) and np.array_equal(DY, DY.T)

    def at(self, P):
        DX, DY = self.DX, self.DY
        M = DX @ P @ DY.T
        a, b = P.sum(1), P.sum(0)
        loss = float(max(a @ self.DX2 @ a + b @ self.DY2 @ b - 2.0 * np.sum(M * P), 0.0))
        cost = -4.0 * M if self.symmetric else -2.0 * (M + DX.T @ P @ DY)
        return loss, cost


def entropic_gw_solve(
    D_X,
    D_Y,
    mu=None,
    nu=None,
    epsilon=0.1,
    outer_iters=200,
    tol=1e-7,
    inner_max_iters=2000,
    inner_tol=1e-9,
):
    """Entropic GW by successive linearisation and Sinkhorn projection.

    Each outer step replaces the quadratic objective by its gradient at the
    current plan and solves the resulting entropic OT problem. For
    conditionally negative definite ``D_X``, ``D_Y`` (e.g. Euclidean
    distance matrices) the loss is concave on the coupling polytope and
    ``loss_trace`` (``gw_loss + eps <P, log P>`` at fixed ``eps``) is
    non-increasing.

    Parameters
    ----------
    epsilon : float or AnnealSchedule
        A schedule is evaluated at the outer-iteration index, so
        ``decay_steps`` counts outer iterations.
    outer_iters : int
        Budget of outer iterations.
    tol : float
        Stop once ``||P_{k+1} - P_k||_F <= tol``.

    Returns
    -------
    GWResult
    """
    DX, DY = _values(D_X), _values(D_Y)
    n, m = DX.shape[0], DY.shape[0]
    mu = np.full(n, 1.0 / n) if mu is None else check_marginal(mu, "mu", n)
    nu = np.full(m, 1.0 / m) if nu is None else check_marginal(nu, "nu", m)
    P = np.outer(mu, nu)
    _check_shapes(DX, DY, P)
    schedule = epsilon if isinstance(epsilon, AnnealSchedule) else None
    if schedule is None and epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")

    def eps_at(k):
        return epsilon_at(schedule, k) if schedule is not None else float(epsilon)

    eps0 = eps_at(0)
    terms = _GWTerms(DX, DY)
    gw, C = terms.at(P)
    gw_trace = [gw]
    loss_trace = [gw + eps0 * neg_entropy(P)]
    epsilons = [eps0]
    potentials = None
    converged = False
    k = 0
    for k in range(1, outer_iters + 1):
        eps = eps_at(k - 1)
        if not np.all(np.isfinite(C)):
            raise NumericalError(f"non-finite linearised cost at outer iteration {k}", step=k, epsilon=eps)
        res = sinkhorn_solve(C, mu, nu, eps, max_iters=inner_max_iters, tol=inner_tol, init=potentials)
        P_new = res.plan
        if not np.all(np.isfinite(P_new)):
            raise NumericalError(f"inner Sinkhorn diverged at outer iteration {k}", step=k, epsilon=eps)
        potentials = (res.f, res.g)
        change = float(np.linalg.norm(P_new - P))
        P = P_new
        gw, C = terms.at(P)
        gw_trace.append(gw)
        loss_trace.append(gw + eps * neg_entropy(P))
        epsilons.append(eps)
        if change <= tol and (schedule is None or k - 1 >= schedule.decay_steps):
            converged = True
            break
    return GWResult(
        coupling=Coupling(P, mu, nu),
        gw_loss=gw,
        outer_iterations=k,
        loss_trace=loss_trace,
        gw_trace=gw_trace,
        epsilons=epsilons,
        converged=converged,
    )


def _perm_losses(DX, DY, perms, norm):
    sub = DY[perms[:, :, None], perms[:, None, :]]
    diff = DX[None] - sub
    if norm == "frobenius_sq":
        return np.einsum("kij,kij->k", diff, diff)
    return np.abs(diff).max(axis=(1, 2))


def brute_force_qap(D_X, D_Y, norm="frobenius_sq", chunk=40320):
    """Exact minimiser of ``||D_X - P D_Y P^T||`` over all permutations.

    ``norm='frobenius_sq'`` gives the hard-assignment GW value (squared
    Frobenius norm), ``norm='sup'`` the Gromov-Hausdorff distortion.
    Refuses ``N > 10``. Ties resolve to the lexicographically first
    permutation.

    Returns
    -------
    (Permutation, float)
    """
    DX, DY = _values(D_X), _values(D_Y)
    n = DX.shape[0]
    if DX.shape != DY.shape or DX.shape != (n, n):
        raise InvalidInputError("brute_force_qap needs two square matrices of equal size")
    if n > MAX_BRUTE_FORCE_N:
        raise InvalidInputError(f"brute_force_qap enumerates N! permutations; N={n} exceeds the limit {MAX_BRUTE_FORCE_N}")
    if norm not in ("frobenius_sq", "sup"):
        raise InvalidInputError(f"unknown norm {norm!r}")
    best_val, best_perm = math.inf, None
    it = itertools.permutations(range(n))
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            break
        perms = np.array(block, dtype=np.int64)
        vals = _perm_losses(DX, DY, perms, norm)
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val, best_perm = float(vals[idx]), perms[idx]
    return Permutation(best_perm), best_val
