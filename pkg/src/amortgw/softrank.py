"""Soft ranks as projections onto the permutahedron.

The soft rank of ``theta`` at softness ``delta`` is the Euclidean
projection of ``theta / delta`` onto the convex hull of all permutations
of ``(1, ..., n)``. After sorting, the projection reduces to a
non-increasing isotonic regression, which pool-adjacent-violators solves
exactly; the Jacobian is block diagonal in sorted coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidStateError

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _pav_rows(Y):
    R, n = Y.shape
    sol = np.empty_like(Y)
    block_id = np.empty((R, n), dtype=np.int64)
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    starts = np.empty(n, dtype=np.int64)
    for r in range(R):
        top = -1
        for i in range(n):
            top += 1
            sums[top] = Y[r, i]
            counts[top] = 1
            starts[top] = i
            # merge while the previous block mean is below the last one
            while top > 0 and sums[top - 1] * counts[top] < sums[top] * counts[top - 1]:
                sums[top - 1] += sums[top]
                counts[top - 1] += counts[top]
                top -= 1
        for b in range(top + 1):
            mean = sums[b] / counts[b]
            for i in range(starts[b], starts[b] + counts[b]):
                sol[r, i] = mean
                block_id[r, i] = b
    return sol, block_id


def _blocks_from_ids(ids):
    bounds = np.flatnonzero(np.diff(ids)) + 1
    edges = np.concatenate(([0], bounds, [ids.shape[0]]))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def isotonic_regression(y):
    """Best non-increasing fit to ``y`` in least squares (PAV).

    Returns
    -------
    solution : ndarray
    blocks : list of (start, stop)
        Half-open index ranges on which the solution is constant and equal
        to the mean of ``y`` over the range.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] == 0:
        raise InvalidInputError("isotonic_regression needs a non-empty vector")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("isotonic_regression input must be finite")
    sol, ids = _pav_rows(y[None, :].copy())
    return sol[0], _blocks_from_ids(ids[0])


@dataclass
class SoftRankResult:
    ranks: np.ndarray
    blocks: list
    sort_permutation: np.ndarray
    delta: float
    direction: str
    theta: np.ndarray


def _sign(direction):
    if direction == "ascending":
        return 1.0
    if direction == "descending":
        return -1.0
    raise InvalidInputError(f"direction must be 'ascending' or 'descending', got {direction!r}")


def soft_rank(theta, delta=1.0, direction="ascending"):
    """Soft ranks of a vector; rank 1 is the smallest entry when ascending.

    Small ``delta`` approaches the hard ranks (ties share their average
    rank); large ``delta`` pulls every rank towards ``(n + 1) / 2``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    ranks, perm, ids = _soft_rank_rows(theta[None, :], delta, _sign(direction))
    return SoftRankResult(ranks[0], _blocks_from_ids(ids[0]), perm[0], float(delta), direction, theta.copy())


def _soft_rank_rows(T, delta, sign):
    R, n = T.shape
    z = sign * T / delta
    perm = np.argsort(-z, axis=1, kind="stable")
    s = np.take_along_axis(z, perm, axis=1)
    w = np.arange(n, 0, -1, dtype=np.float64)
    v, ids = _pav_rows(s - w)
    primal = s - v
    ranks = np.empty_like(primal)
    np.put_along_axis(ranks, perm, primal, axis=1)
    return ranks, perm, ids


def _center_blocks(U_sorted, ids):
    """``u - blockmean(u)`` row-wise, blocks given by consecutive ids."""
    R, n = U_sorted.shape
    flat = (ids + n * np.arange(R)[:, None]).ravel()
    sums = np.bincount(flat, weights=U_sorted.ravel(), minlength=R * n)
    counts = np.bincount(flat, minlength=R * n)
    means = sums[flat] / counts[flat]
    return U_sorted - means.reshape(R, n)


def soft_rank_jvp(result, tangent, delta=None):
    """Jacobian-vector product of :func:`soft_rank` at ``result.theta``.

    The Jacobian is ``(sign / delta) * P^T (I - B) P`` with ``P`` the sort
    permutation and ``B`` the isotonic block-averaging operator. It is
    symmetric, so the same routine serves as the vector-Jacobian product.
    """
    if delta is not None and delta != result.delta:
        raise InvalidStateError("delta differs from the one the soft-rank result was computed with")
    t = np.asarray(tangent, dtype=np.float64)
    if t.shape != result.ranks.shape:
        raise InvalidStateError(f"tangent shape {t.shape} does not match the soft-rank result {result.ranks.shape}")
    perm = result.sort_permutation[None, :]
    ids = np.zeros(t.shape[0], dtype=np.int64)
    for b, (a, c) in enumerate(result.blocks):
        ids[a:c] = b
    return _rows_jvp(t[None, :], perm, ids[None, :], result.delta, _sign(result.direction))[0]


soft_rank_vjp = soft_rank_jvp


def _rows_jvp(T, perm, ids, delta, sign):
    ts = np.take_along_axis(T, perm, axis=1)
    out_sorted = _center_blocks(ts, ids) * (sign / delta)
    out = np.empty_like(out_sorted)
    np.put_along_axis(out, perm, out_sorted, axis=1)
    return out


@dataclass
class RowSoftRank:
    """Row-wise soft ranks of a matrix, keeping what the backward pass needs."""

    ranks: np.ndarray
    perm: np.ndarray
    ids: np.ndarray
    delta: float
    sign: float

    def vjp(self, G):
        G = np.asarray(G, dtype=np.float64)
        if G.shape != self.ranks.shape:
            raise InvalidStateError("cotangent shape does not match the ranked matrix")
        return _rows_jvp(G, self.perm, self.ids, self.delta, self.sign)

    jvp = vjp


def soft_rank_rows(M, delta=1.0, direction="ascending", exclude_diagonal=False):
    """Apply :func:`soft_rank` independently to each row of ``M``.

    With ``exclude_diagonal`` the diagonal entry of a square matrix is left
    out of its row's ranking and its rank is reported as 0.
    """
    M = np.asarray(M, dtype=np.float64)
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    sign = _sign(direction)
    if not exclude_diagonal:
        ranks, perm, ids = _soft_rank_rows(M, delta, sign)
        return RowSoftRank(ranks, perm, ids, float(delta), sign)
    return _OffDiagonalSoftRank(M, float(delta), sign)


class _OffDiagonalSoftRank(RowSoftRank):
    def __init__(self, M, delta, sign):
        n = M.shape[0]
        if M.shape != (n, n):
            raise InvalidInputError("exclude_diagonal needs a square matrix")
        self.off = ~np.eye(n, dtype=bool)
        sub = M[self.off].reshape(n, n - 1)
        r, perm, ids = _soft_rank_rows(sub, delta, sign)
        ranks = np.zeros_like(M)
        ranks[self.off] = r.ravel()
        super().__init__(ranks, perm, ids, delta, sign)

    def vjp(self, G):
        G = np.asarray(G, dtype=np.float64)
        n = G.shape[0]
        sub = _rows_jvp(G[self.off].reshape(n, n - 1), self.perm, self.ids, self.delta, self.sign)
        out = np.zeros_like(G)
        out[self.off] = sub.ravel()
        return out

    jvp = vjp
