"""Differentiable pieces of the amortised solver.

The chain is: embeddings -> ground cost -> (optional cost scaling) ->
fixed-depth log-domain Sinkhorn -> plan -> alignment loss. Every forward
function here has a matching reverse-mode function that returns exact
gradients of the finite computation (no fixed-point approximation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidInputError, InvalidStateError
from .sinkhorn import Coupling, check_cost, check_marginal, logsumexp_rows
from .softrank import soft_rank_rows

GROUND_COSTS = ("sq_euclidean", "neg_inner")


def cost_from_embeddings(Z_X, Z_Y, ground="sq_euclidean"):
    """Pairwise ground cost between two embedded point sets.

    ``sq_euclidean`` gives ``||z_i - z'_j||^2``; ``neg_inner`` gives
    ``-<z_i, z'_j>`` so that similar embeddings are cheap to match.
    """
    ZX, ZY = np.asarray(Z_X, dtype=np.float64), np.asarray(Z_Y, dtype=np.float64)
    if ZX.ndim != 2 or ZY.ndim != 2 or ZX.shape[1] != ZY.shape[1]:
        raise InvalidInputError(f"embedding dimensions differ: {ZX.shape} vs {ZY.shape}")
    if ground == "sq_euclidean":
        return cdist(ZX, ZY, "sqeuclidean")
    if ground == "neg_inner":
        return -(ZX @ ZY.T)
    raise InvalidInputError(f"unknown ground cost {ground!r}; expected one of {GROUND_COSTS}")


def cost_from_embeddings_backward(Z_X, Z_Y, grad_cost, ground="sq_euclidean"):
    """Gradients of ``<grad_cost, C(Z_X, Z_Y)>`` with respect to both inputs."""
    ZX, ZY, G = (np.asarray(a, dtype=np.float64) for a in (Z_X, Z_Y, grad_cost))
    if G.shape != (ZX.shape[0], ZY.shape[0]):
        raise InvalidInputError("grad_cost shape does not match the embeddings")
    if ground == "sq_euclidean":
        gX = 2.0 * (G.sum(axis=1)[:, None] * ZX - G @ ZY)
        gY = 2.0 * (G.sum(axis=0)[:, None] * ZY - G.T @ ZX)
    elif ground == "neg_inner":
        gX = -(G @ ZY)
        gY = -(G.T @ ZX)
    else:
        raise InvalidInputError(f"unknown ground cost {ground!r}")
    return gX, gY


@dataclass
class CostScaling:
    """Record of ``C / s(C)`` for the backward pass.

    For ``unit_median`` the scale depends on the entries at ``index``;
    for ``centered_std`` its gradient is the dense ``dscale``.
    """

    scale: float
    index: Optional[np.ndarray]
    weights: Optional[np.ndarray]
    signs: Optional[np.ndarray]
    scaled: np.ndarray
    dscale: Optional[np.ndarray] = None


def scale_cost(C, mode="unit_median"):
    """Divide the cost by a scale statistic.

    ``unit_median`` uses the median absolute entry. ``centered_std`` uses
    the root-mean-square of the doubly centred cost, the only part that
    affects the plan, so constant row or column offsets do not change
    the effective epsilon.

    Returns the scaled cost and a record for :func:`scale_cost_backward`
    (``None`` when ``mode='none'``).
    """
    if mode == "none":
        return C, None
    if mode == "centered_std":
        Cc = C - C.mean(axis=0) - C.mean(axis=1)[:, None] + C.mean()
        m = float(np.sqrt(np.mean(Cc * Cc)))
        if m <= 0:
            raise InvalidInputError("cost matrix is constant up to row and column shifts; cannot normalise")
        scaled = C / m
        return scaled, CostScaling(m, None, None, None, scaled, Cc / (C.size * m))
    if mode != "unit_median":
        raise InvalidInputError(f"unknown cost normalisation {mode!r}")
    flat = np.abs(C).ravel()
    n = flat.size
    if n % 2:
        k = [n // 2]
    else:
        k = [n // 2 - 1, n // 2]
    part = np.argpartition(flat, k)
    index = part[k]
    m = float(flat[index].mean())
    if m <= 0:
        raise InvalidInputError("cost matrix has zero median magnitude; cannot normalise")
    signs = np.sign(C.ravel()[index])
    scaled = C / m
    return scaled, CostScaling(m, index, np.full(len(k), 1.0 / len(k)), signs, scaled)


def scale_cost_backward(record, G):
    if record is None:
        return G
    m = record.scale
    out = G / m
    coeff = np.sum(G * record.scaled) / m
    if record.dscale is not None:
        return out - coeff * record.dscale
    flat = out.ravel()
    flat[record.index] -= coeff * record.weights * record.signs
    return flat.reshape(G.shape)


@dataclass
class DiffOTTape:
    """Potentials of every unrolled Sinkhorn iteration.

    ``fs[k]``, ``gs[k]`` are the potentials after iteration ``k``
    (``k = 0`` holds the initialisation). When memory allows, the
    half-step plans ``exp((f_k + g_{k-1} - C) / eps)`` and their column
    sums are kept as well so the backward pass needs no exponentials.
    """

    cost: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    epsilon: float
    fs: List[np.ndarray] = field(default_factory=list)
    gs: List[np.ndarray] = field(default_factory=list)
    half_plans: Optional[List[np.ndarray]] = None
    col_sums: Optional[List[np.ndarray]] = None
    plan: np.ndarray = None

    @property
    def iterations(self):
        return len(self.fs) - 1


# stored half-step plans are dropped above this many matrix entries
TAPE_ENTRY_BUDGET = 40_000_000
_TINY = 1e-250


def sinkhorn_forward_unrolled(cost, mu=None, nu=None, epsilon=0.1, iters=100, init=None):
    """Exactly ``iters`` log-domain Sinkhorn iterations, recording a tape.

    No early stopping, so the map from cost to plan is a fixed composition
    that :func:`sinkhorn_backward_unrolled` differentiates exactly.
    ``init=(f, g)`` warm-starts the potentials; they are treated as
    constants by the backward pass.

    The first half-step is a log-sum-exp update. Afterwards the potential
    updates ``f += eps * log(mu / rowsum)`` are applied together with the
    matching diagonal rescaling of the stabilised plan
    ``exp((f + g - C) / eps)``, whose entries are bounded by the
    marginals. If a marginal of that plan underflows the step is redone
    with log-sum-exp.
    """
    C = check_cost(cost)
    n, m = C.shape
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    mu = np.full(n, 1.0 / n) if mu is None else check_marginal(mu, "mu", n)
    nu = np.full(m, 1.0 / m) if nu is None else check_marginal(nu, "nu", m)
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise InvalidInputError("differentiable Sinkhorn needs strictly positive marginals")
    eps = float(epsilon)
    log_mu, log_nu = np.log(mu), np.log(nu)
    if init is None:
        f, g = np.zeros(n), np.zeros(m)
    else:
        f, g = (np.array(v, dtype=np.float64) for v in init)
    keep = n * m * iters <= TAPE_ENTRY_BUDGET
    tape = DiffOTTape(C, mu, nu, eps, [f], [g], [] if keep else None, [] if keep else None)

    f = eps * (log_mu - logsumexp_rows((g[None, :] - C) / eps))
    E = np.exp((f[:, None] + g[None, :] - C) / eps)
    for k in range(1, iters + 1):
        if k > 1:
            r = E.sum(axis=1)
            if r.min() > _TINY:
                f = f + eps * (log_mu - np.log(r))
                E *= (mu / r)[:, None]
            else:
                f = eps * (log_mu - logsumexp_rows((g[None, :] - C) / eps))
                E = np.exp((f[:, None] + g[None, :] - C) / eps)
        if keep:
            tape.half_plans.append(E.copy())
        s = E.sum(axis=0)
        if s.min() > _TINY:
            g = g + eps * (log_nu - np.log(s))
            E *= (nu / s)[None, :]
        else:
            g = eps * (log_nu - logsumexp_rows(((f[:, None] - C) / eps).T))
            E = np.exp((f[:, None] + g[None, :] - C) / eps)
            s = E.sum(axis=0) * 0.0  # flag: column weights must be recomputed
        if keep:
            tape.col_sums.append(s)
        tape.fs.append(f)
        tape.gs.append(g)
    tape.plan = E
    return Coupling(E, mu, nu), tape


def sinkhorn_backward_unrolled(tape, grad_plan):
    """Reverse-mode gradient of the unrolled map: ``(dP/dC)^T grad_plan``."""
    if tape.plan is None or tape.iterations < 1:
        raise InvalidStateError("tape does not hold a completed forward pass")
    G = np.asarray(grad_plan, dtype=np.float64)
    C, eps = tape.cost, tape.epsilon
    if G.shape != C.shape:
        raise InvalidInputError(f"grad_plan shape {G.shape} does not match cost shape {C.shape}")
    GP = G * tape.plan
    gC = -GP / eps
    bar_f = GP.sum(axis=1) / eps
    bar_g = GP.sum(axis=0) / eps
    stored = tape.half_plans is not None
    for k in range(tape.iterations, 0, -1):
        f, g, g_prev = tape.fs[k], tape.gs[k], tape.gs[k - 1]
        if stored and tape.col_sums[k - 1].min() > 0:
            H = tape.half_plans[k - 1]
            # column-softmax weights of the g-update are H / colsum(H)
            w = bar_g / tape.col_sums[k - 1]
            bar_f = bar_f - H @ w
        else:
            # g_k = eps*log(nu) - eps*LSE_i((f_k - C)/eps); column-softmax weights
            A = np.exp((f[:, None] + g[None, :] - C) / eps) / tape.nu[None, :]
            gC += A * bar_g[None, :]
            bar_f = bar_f - A @ bar_g
            H = np.exp((f[:, None] + g_prev[None, :] - C) / eps)
            w = np.zeros_like(bar_g)
        # f_k = eps*log(mu) - eps*LSE_j((g_{k-1} - C)/eps); row-softmax weights H / mu
        u = bar_f / tape.mu
        gC += H * (w[None, :] + u[:, None])
        bar_g = -(u @ H)
        bar_f = np.zeros_like(bar_f)
    return gC


def _check_sym(D, name):
    if np.max(np.abs(D - D.T), initial=0.0) > 1e-9 * max(1.0, np.abs(D).max(initial=0.0)):
        raise InvalidInputError(f"{name} is not symmetric")


def _values(D):
    return getattr(D, "values", D)


def gw_objective_and_grad(D_X, D_Y, plan, scale=1.0):
    """``||D_X - (sP) D_Y (sP)^T||_F^2`` and its gradient in ``P``."""
    DX, DY = np.asarray(_values(D_X), dtype=np.float64), np.asarray(_values(D_Y), dtype=np.float64)
    P = plan.plan if isinstance(plan, Coupling) else np.asarray(plan, dtype=np.float64)
    _check_sym(DX, "D_X")
    _check_sym(DY, "D_Y")
    if P.shape != (DX.shape[0], DY.shape[0]):
        raise InvalidInputError("plan shape does not match the distance matrices")
    Ps = scale * P
    PD = Ps @ DY
    R = DX - PD @ Ps.T
    loss = float(np.sum(R * R))
    # for symmetric R and D_Y, -2 (R Ps D_Y^T + R^T Ps D_Y) = -4 R Ps D_Y
    grad = -2.0 * scale * ((R + R.T) @ PD)
    return loss, grad


def grad_gw_wrt_plan(D_X, D_Y, plan, scale=1.0):
    """Gradient of the matrix-form GW objective with respect to the plan."""
    return gw_objective_and_grad(D_X, D_Y, plan, scale)[1]


def rank_objective_and_grad(D_X, D_Y, plan, delta=1.0, scale=1.0, exclude_diagonal=False, ranks_X=None):
    """Row-wise soft-rank disagreement and its gradient in ``P``.

    Objective: ``||R(D_X) - R((sP) D_Y (sP)^T)||_F^2`` with ``R`` the soft
    rank applied to each row. ``ranks_X`` may pass precomputed ranks of
    ``D_X``.
    """
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    DX, DY = np.asarray(_values(D_X), dtype=np.float64), np.asarray(_values(D_Y), dtype=np.float64)
    P = plan.plan if isinstance(plan, Coupling) else np.asarray(plan, dtype=np.float64)
    if P.shape != (DX.shape[0], DY.shape[0]):
        raise InvalidInputError("plan shape does not match the distance matrices")
    if ranks_X is None:
        ranks_X = soft_rank_rows(DX, delta, exclude_diagonal=exclude_diagonal).ranks
    Ps = scale * P
    PD = Ps @ DY
    S = PD @ Ps.T
    rs = soft_rank_rows(S, delta, exclude_diagonal=exclude_diagonal)
    diff = ranks_X - rs.ranks
    loss = float(np.sum(diff * diff))
    GS = rs.vjp(-2.0 * diff)
    grad = scale * (GS @ Ps @ DY.T + GS.T @ PD)
    return loss, grad


def grad_rankloss_wrt_plan(D_X, D_Y, plan, delta=1.0, scale=1.0, exclude_diagonal=False):
    return rank_objective_and_grad(D_X, D_Y, plan, delta, scale, exclude_diagonal)[1]
