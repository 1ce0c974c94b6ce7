"""Alignment-quality metrics: FOSCTTM, barycentric projection, label transfer."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidInputError
from .sinkhorn import Coupling


@dataclass
class FoscttmReport:
    """FOSCTTM score with its per-point fractions.

    ``per_point_p[i]`` is the fraction of ``V`` rows strictly closer to
    ``U[i]`` than ``V[i]``; ``per_point_q`` is the mirror quantity.
    """

    score: float
    per_point_p: np.ndarray
    per_point_q: np.ndarray

    def sorted_curve(self):
        """Per-point values ``(p_i + q_i) / 2`` in increasing order."""
        return np.sort(0.5 * (self.per_point_p + self.per_point_q))


def foscttm(U, V, metric="euclidean", block_size=1024):
    """Fraction of samples closer than the true match.

    Rows of ``U`` and ``V`` must be in ground-truth correspondence. Ties
    with the true match are not counted.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if V.ndim == 1:
        V = V[:, None]
    if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape:
        raise InvalidInputError(f"foscttm needs equally shaped inputs, got {U.shape} and {V.shape}")
    n = U.shape[0]
    if n == 0:
        raise InvalidInputError("foscttm needs at least one point")
    true = np.empty(n)
    p = np.zeros(n)
    q_counts = np.zeros(n)
    for a in range(0, n, block_size):
        b = min(a + block_size, n)
        D = cdist(U[a:b], V, metric)
        true[a:b] = D[np.arange(b - a), np.arange(a, b)]
        p[a:b] = (D < true[a:b, None]).sum(axis=1)
    for a in range(0, n, block_size):
        b = min(a + block_size, n)
        D = cdist(V[a:b], U, metric)
        q_counts[a:b] = (D < true[a:b, None]).sum(axis=1)
    p /= n
    q = q_counts / n
    return FoscttmReport(float(np.mean(0.5 * (p + q))), p, q)


def _plan(coupling):
    if isinstance(coupling, Coupling):
        return coupling.plan
    return np.asarray(coupling, dtype=np.float64)


def barycentric_project(coupling, Y_points):
    """Plan-weighted average of the target rows for every source row.

    Rows are normalised by their mass, so each output row is a convex
    combination of rows of ``Y_points``.
    """
    P = _plan(coupling)
    Y = np.asarray(Y_points, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if P.ndim != 2 or Y.shape[0] != P.shape[1]:
        raise InvalidInputError(f"coupling shape {P.shape} does not match {Y.shape[0]} target points")
    mass = P.sum(axis=1)
    bad = np.flatnonzero(~(mass > 0))
    if bad.size:
        raise InvalidInputError(f"coupling row {int(bad[0])} has zero mass; cannot project it")
    return (P @ Y) / mass[:, None]


@dataclass
class LabelTransfer:
    accuracy: float
    predicted: np.ndarray
    ties: bool


def label_transfer(coupling, labels_X, labels_Y):
    """Argmax label transfer with smallest-index tie-breaking."""
    if labels_X is None or labels_Y is None:
        raise InvalidInputError("label transfer needs labels on both sides")
    P = _plan(coupling)
    lx, ly = np.asarray(labels_X), np.asarray(labels_Y)
    if P.ndim != 2 or lx.shape != (P.shape[0],) or ly.shape != (P.shape[1],):
        raise InvalidInputError(f"label lengths {lx.shape}, {ly.shape} do not match coupling {P.shape}")
    cols = np.argmax(P, axis=1)  # first maximal index on ties
    ties = bool(np.any((P == P.max(axis=1, keepdims=True)).sum(axis=1) > 1))
    pred = ly[cols]
    return LabelTransfer(float(np.mean(pred == lx)), pred, ties)


def label_transfer_accuracy(coupling, labels_X, labels_Y):
    """Fraction of rows whose argmax column carries the same label.

    A ``RuntimeWarning`` is issued when some row's maximum is tied.
    """
    res = label_transfer(coupling, labels_X, labels_Y)
    if res.ties:
        warnings.warn("label transfer hit tied row maxima; smallest column index used", RuntimeWarning, stacklevel=2)
    return res.accuracy
