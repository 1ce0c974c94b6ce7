"""Graph Laplacians and the product-graph Dirichlet energy of a cost matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import WeightedGraph


@dataclass
class Laplacian:
    matrix: np.ndarray
    source_graph: Optional[WeightedGraph] = None

    @property
    def n(self):
        return self.matrix.shape[0]


def laplacian(graph):
    """Combinatorial Laplacian ``diag(W 1) - W`` of a symmetric graph."""
    W = graph.adjacency if isinstance(graph, WeightedGraph) else np.asarray(graph, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidInputError("adjacency must be square")
    if np.max(np.abs(W - W.T), initial=0.0) > 1e-12 * max(1.0, np.abs(W).max(initial=0.0)):
        raise InvalidInputError("adjacency is not symmetric")
    L = np.diag(W.sum(axis=1)) - W
    return Laplacian(L, graph if isinstance(graph, WeightedGraph) else None)


def _mat(L):
    return L.matrix if isinstance(L, Laplacian) else np.asarray(L, dtype=np.float64)


def _check(LX, LY, C):
    if C.ndim != 2 or LX.shape != (C.shape[0], C.shape[0]) or LY.shape != (C.shape[1], C.shape[1]):
        raise InvalidInputError(
            f"cost shape {C.shape} is incompatible with Laplacians {LX.shape} and {LY.shape}"
        )


def dirichlet_energy(L_X, L_Y, C):
    """``trace(C^T L_X C) + trace(C L_Y C^T)``.

    This is the Dirichlet energy of ``C`` as a signal on the Cartesian
    product graph, computed without forming the ``NM x NM`` Laplacian.
    """
    LX, LY, C = _mat(L_X), _mat(L_Y), np.asarray(C, dtype=np.float64)
    _check(LX, LY, C)
    return float(np.sum(C * (LX @ C)) + np.sum(C * (C @ LY)))


def dirichlet_energy_grad(L_X, L_Y, C):
    LX, LY, C = _mat(L_X), _mat(L_Y), np.asarray(C, dtype=np.float64)
    _check(LX, LY, C)
    return 2.0 * (LX @ C + C @ LY)
