"""Entropy-regularised linear optimal transport (log-domain Sinkhorn)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class Coupling:
    """Transport plan together with the marginals it was solved for."""

    plan: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def shape(self):
        return self.plan.shape

    def marginal_error(self):
        return max(
            float(np.max(np.abs(self.plan.sum(1) - self.mu))),
            float(np.max(np.abs(self.plan.sum(0) - self.nu))),
        )


@dataclass
class SinkhornResult:
    coupling: Coupling
    log_u: np.ndarray
    log_v: np.ndarray
    iterations: int
    marginal_error: float
    epsilon: float
    converged: bool

    @property
    def plan(self):
        return self.coupling.plan

    @property
    def f(self):
        return self.epsilon * self.log_u

    @property
    def g(self):
        return self.epsilon * self.log_v


def check_marginal(p, name, n):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (n,):
        raise InvalidInputError(f"{name} must have shape ({n},), got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidInputError(f"{name} must be a finite nonnegative vector")
    s = p.sum()
    if s <= 0:
        raise InvalidInputError(f"{name} has zero total mass")
    if abs(s - 1.0) > 1e-9:
        warnings.warn(f"{name} sums to {s!r}; renormalising to a probability vector", stacklevel=3)
        p = p / s
    return p


def check_cost(cost):
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise InvalidInputError(f"cost must be a matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        bad = np.argwhere(~np.isfinite(C))[0]
        raise InvalidInputError(f"cost has a non-finite entry at {tuple(int(i) for i in bad)}")
    return C


def logsumexp_rows(M):
    """``log(sum(exp(M), axis=1))`` with the row max factored out."""
    m = M.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def plan_from_potentials(cost, f, g, epsilon):
    return np.exp((f[:, None] + g[None, :] - cost) / epsilon)


def sinkhorn_solve(cost, mu=None, nu=None, epsilon=0.1, max_iters=2000, tol=1e-6, init=None, method="scaling"):
    """Solve ``min <P, C> + eps <P, log P>`` over couplings of ``mu`` and ``nu``.

    Alternating dual updates are carried out entirely on the potentials
    ``f, g`` with log-sum-exp reductions, so the Gibbs kernel ``exp(-C/eps)``
    is never formed. The loop stops once the row-marginal violation (the
    column marginals are exact after each ``g`` update) drops to ``tol``.
    Running out of iterations is not an error: ``converged`` is ``False``
    and ``marginal_error`` holds the achieved violation.

    With ``method='scaling'`` the same potential updates are applied as
    ``f += eps * log(mu / rowsum(E))`` on the stabilised plan
    ``E = exp((f + g - C) / eps)``, whose entries never exceed the
    marginals, together with the matching diagonal rescaling of ``E``.
    ``E`` is rebuilt from the potentials every ``restabilize`` steps, when
    a marginal underflows, and at the end. ``method='log'`` runs plain
    log-sum-exp updates throughout.

    Parameters
    ----------
    cost : array-like, shape (N, M)
    mu, nu : array-like, optional
        Marginals; uniform by default.
    epsilon : float
    init : tuple of arrays, optional
        Warm-start potentials ``(f, g)``.
    method : {'scaling', 'log'}

    Returns
    -------
    SinkhornResult
    """
    C = check_cost(cost)
    n, m = C.shape
    if epsilon <= 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    mu = np.full(n, 1.0 / n) if mu is None else check_marginal(mu, "mu", n)
    nu = np.full(m, 1.0 / m) if nu is None else check_marginal(nu, "nu", m)
    log_mu, log_nu = _safe_log(mu), _safe_log(nu)
    eps = float(epsilon)

    if init is None:
        f, g = np.zeros(n), np.zeros(m)
    else:
        f, g = (np.array(v, dtype=np.float64) for v in init)

    if method == "log":
        f, g, it, err = _iterate_log(C, f, g, log_mu, log_nu, mu, eps, max_iters, tol)
    elif method == "scaling":
        f, g, it, err = _iterate_scaling(C, f, g, log_mu, log_nu, mu, nu, eps, max_iters, tol)
    else:
        raise InvalidInputError(f"unknown Sinkhorn method {method!r}")

    P = plan_from_potentials(C, f, g, eps)
    col_err = float(np.max(np.abs(P.sum(0) - nu)))
    err = max(err, col_err)
    if method == "scaling":
        err = max(err, float(np.max(np.abs(P.sum(1) - mu))))
    return SinkhornResult(
        coupling=Coupling(P, mu, nu),
        log_u=f / eps,
        log_v=g / eps,
        iterations=it,
        marginal_error=err,
        epsilon=eps,
        converged=err <= tol,
    )


def sinkhorn_continuation(cost, mu=None, nu=None, epsilon=0.01, eps_start=1.0, factor=3.0,
                          max_iters=5000, tol=1e-6, coarse_tol=1e-5, method="scaling"):
    """Solve at ``epsilon`` after warm-starting from a decreasing sequence of epsilons.

    Only the last solve must meet ``tol``; the coarse stages stop at
    ``coarse_tol``. ``iterations`` of the result counts every stage.
    """
    if factor <= 1:
        raise InvalidInputError("factor must be > 1")
    eps_list = []
    e = float(eps_start)
    while e > epsilon * factor:
        eps_list.append(e)
        e /= factor
    eps_list.append(float(epsilon))
    init, total = None, 0
    for e in eps_list:
        last = e == eps_list[-1]
        res = sinkhorn_solve(cost, mu, nu, e, max_iters=max_iters, tol=tol if last else coarse_tol,
                             init=init, method=method)
        init = (res.f, res.g)
        total += res.iterations
    res.iterations = total
    return res


def _iterate_log(C, f, g, log_mu, log_nu, mu, eps, max_iters, tol):
    err = np.inf
    it = 0
    while True:
        lse = logsumexp_rows((g[None, :] - C) / eps)
        if it > 0:
            row_mass = np.exp(f / eps + lse)
            err = float(np.max(np.abs(row_mass - mu)))
            if err <= tol or it >= max_iters:
                break
        f = eps * (log_mu - lse)
        g = eps * (log_nu - logsumexp_rows(((f[:, None] - C) / eps).T))
        it += 1
    return f, g, it, err


_TINY = 1e-250
RESTABILIZE_EVERY = 50


def _healthy(sums):
    return bool(np.all(np.isfinite(sums)) and sums.min() > _TINY)


def _iterate_scaling(C, f, g, log_mu, log_nu, mu, nu, eps, max_iters, tol):
    rows, cols = mu > 0, nu > 0
    E = None
    err = np.inf
    it = 0
    while True:
        if E is None or it % RESTABILIZE_EVERY == 0:
            with np.errstate(over="ignore"):
                E = np.exp((f[:, None] + g[None, :] - C) / eps)
        r = E.sum(axis=1)
        if it > 0:
            err = float(np.max(np.abs(r - mu)))
            if err <= tol or it >= max_iters:
                break
        if _healthy(r[rows]):
            with np.errstate(divide="ignore"):
                f = f + eps * (log_mu - np.log(np.where(rows, r, 1.0)))
            f = np.where(rows, f, eps * log_mu)
            E *= np.where(rows, mu / np.where(rows, r, 1.0), 0.0)[:, None]
        else:
            f = eps * (log_mu - logsumexp_rows((g[None, :] - C) / eps))
            E = np.exp((f[:, None] + g[None, :] - C) / eps)
        s = E.sum(axis=0)
        if _healthy(s[cols]):
            with np.errstate(divide="ignore"):
                g = g + eps * (log_nu - np.log(np.where(cols, s, 1.0)))
            g = np.where(cols, g, eps * log_nu)
            E *= np.where(cols, nu / np.where(cols, s, 1.0), 0.0)[None, :]
        else:
            g = eps * (log_nu - logsumexp_rows(((f[:, None] - C) / eps).T))
            E = np.exp((f[:, None] + g[None, :] - C) / eps)
        it += 1
    return f, g, it, err


def sinkhorn_kernel_scaling(cost, mu, nu, epsilon, iters):
    """Textbook Sinkhorn-Knopp scaling of ``K = exp(-C/eps)``.

    Underflows for small ``epsilon``; kept as a cross-check for the
    log-domain solver on well-conditioned problems.
    """
    C = check_cost(cost)
    K = np.exp(-C / epsilon)
    u = np.ones(C.shape[0])
    v = np.ones(C.shape[1])
    for _ in range(iters):
        u = mu / (K @ v)
        v = nu / (K.T @ u)
    return u[:, None] * K * v[None, :]


def ot_cost(coupling, cost):
    """Linear transport cost ``<P, C>``."""
    P = coupling.plan if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=np.float64)
    C = np.asarray(cost, dtype=np.float64)
    if P.shape != C.shape:
        raise InvalidInputError(f"plan shape {P.shape} does not match cost shape {C.shape}")
    return float(np.sum(P * C))


def neg_entropy(plan):
    """``<P, log P>`` with the convention ``0 log 0 = 0``."""
    P = plan.plan if isinstance(plan, Coupling) else np.asarray(plan)
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz])))


def entropic_objective(plan, cost, epsilon):
    return ot_cost(plan, cost) + epsilon * neg_entropy(plan)
