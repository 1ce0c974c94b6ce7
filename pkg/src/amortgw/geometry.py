"""Point sets, pairwise dissimilarities, kNN graphs and geodesic distances."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial.distance import cdist

from .errors import GraphDisconnectedError, InvalidInputError

METRIC_KINDS = ("euclidean", "squared_euclidean", "cosine_dissimilarity", "geodesic", "precomputed")

_CDIST_NAME = {
    "euclidean": "euclidean",
    "squared_euclidean": "sqeuclidean",
    "cosine_dissimilarity": "cosine",
}


def uniform_measure(n):
    return np.full(n, 1.0 / n)


@dataclass
class Dataset:
    """A finite point set with an optional labelling and a probability measure.

    Parameters
    ----------
    points : array-like, shape (N, d)
    labels : array-like, shape (N,), optional
    measure : array-like, shape (N,), optional
        Defaults to the uniform measure ``1/N``.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    measure: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidInputError(f"points must be an N x d matrix with N, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("points contain non-finite values")
        self.points = pts
        n = pts.shape[0]
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise InvalidInputError(f"labels must have shape ({n},), got {labels.shape}")
            # numeric labels become integers; anything else (e.g. cell-type names) is kept
            self.labels = labels.astype(np.int64) if labels.dtype.kind in "biuf" else labels
        if self.measure is None:
            self.measure = uniform_measure(n)
        else:
            m = np.asarray(self.measure, dtype=np.float64)
            if m.shape != (n,) or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise InvalidInputError("measure must be a nonnegative length-N vector summing to 1")
            self.measure = m

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.points[idx], labels)


@dataclass
class DistanceMatrix:
    values: np.ndarray
    metric_kind: str = "precomputed"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInputError(f"distance matrix must be square, got shape {v.shape}")
        if self.metric_kind not in METRIC_KINDS:
            raise InvalidInputError(f"unknown metric kind {self.metric_kind!r}")
        self.values = v

    @property
    def n(self):
        return self.values.shape[0]

    def check(self, atol=1e-9):
        """Raise if the matrix is not symmetric, nonnegative with zero diagonal."""
        v = self.values
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("distance matrix has non-finite entries")
        if np.max(np.abs(v - v.T), initial=0.0) > atol:
            raise InvalidInputError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise InvalidInputError("distance matrix has a nonzero diagonal")
        if np.any(v < 0):
            raise InvalidInputError("distance matrix has negative entries")
        return self


@dataclass
class WeightedGraph:
    """Undirected weighted graph stored as a dense symmetric adjacency matrix."""

    adjacency: np.ndarray
    _edges: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError("adjacency must be square")
        if np.any(a < 0):
            raise InvalidInputError("edge weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise InvalidInputError("self-loops are not allowed")
        self.adjacency = a

    @classmethod
    def from_edges(cls, n_vertices, edges):
        a = np.zeros((n_vertices, n_vertices))
        for i, j, w in edges:
            if i == j:
                raise InvalidInputError(f"self-loop on vertex {i}")
            if w <= 0:
                raise InvalidInputError(f"edge ({i}, {j}) has non-positive weight {w}")
            a[i, j] = a[j, i] = w
        return cls(a)

    @property
    def n_vertices(self):
        return self.adjacency.shape[0]

    @property
    def edges(self):
        """List of ``(i, j, w)`` triples; both orientations are present."""
        if self._edges is None:
            ii, jj = np.nonzero(self.adjacency)
            self._edges = [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(ii, jj)]
        return self._edges

    def is_symmetric(self, atol=0.0):
        return np.max(np.abs(self.adjacency - self.adjacency.T), initial=0.0) <= atol


def _as_points(data):
    return data.points if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=np.float64))


def pairwise_distances(data, metric_kind="euclidean", n_jobs=1, block_size=256):
    """Dense pairwise dissimilarity matrix of a point set.

    Each entry is computed from the two points alone (no Gram-matrix
    expansion), so splitting the rows over ``n_jobs`` threads gives
    bit-identical output.

    Parameters
    ----------
    data : Dataset or array-like, shape (N, d)
    metric_kind : {'euclidean', 'squared_euclidean', 'cosine_dissimilarity'}
        ``cosine_dissimilarity`` is ``1 - cos(x_i, x_j)``.

    Returns
    -------
    DistanceMatrix
    """
    X = _as_points(data)
    if metric_kind not in _CDIST_NAME:
        raise InvalidInputError(
            f"pairwise_distances supports {sorted(_CDIST_NAME)}, got {metric_kind!r}"
            " (use geodesic_distances for graph metrics)"
        )
    if metric_kind == "cosine_dissimilarity":
        norms = np.linalg.norm(X, axis=1)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise InvalidInputError(f"row {int(bad[0])} is the zero vector; cosine dissimilarity is undefined")
    name = _CDIST_NAME[metric_kind]
    n = X.shape[0]
    starts = list(range(0, n, block_size))

    def rows(s):
        return cdist(X[s : s + block_size], X, metric=name)

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            blocks = list(pool.map(rows, starts))
    else:
        blocks = [rows(s) for s in starts]
    D = np.vstack(blocks)
    np.fill_diagonal(D, 0.0)
    np.maximum(D, 0.0, out=D)
    return DistanceMatrix(D, metric_kind)


def knn_graph(data, k, weighting="binary", sigma=None):
    """Symmetric k-nearest-neighbour graph (union symmetrisation).

    ``weighting`` is one of ``binary`` (all weights 1), ``gaussian``
    (``exp(-d^2 / (2 sigma^2))``, ``sigma`` defaulting to the median kNN
    distance) or ``distance`` (the Euclidean length, used for geodesics).
    Ties among equidistant neighbours are broken by the lower index.
    """
    X = _as_points(data)
    n = X.shape[0]
    if not 1 <= k < n:
        raise InvalidInputError(f"k must satisfy 1 <= k < N={n}, got k={k}")
    if weighting not in ("binary", "gaussian", "distance"):
        raise InvalidInputError(f"unknown weighting {weighting!r}")
    D = pairwise_distances(X, "euclidean").values
    masked = D.copy()
    np.fill_diagonal(masked, np.inf)
    nbrs = np.argsort(masked, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask |= mask.T

    if weighting == "binary":
        w = np.ones_like(D)
    elif weighting == "gaussian":
        if sigma is None:
            sigma = float(np.median(D[rows, cols]))
            if sigma == 0:
                sigma = 1.0
        if sigma <= 0:
            raise InvalidInputError("sigma must be positive")
        w = np.exp(-(D**2) / (2.0 * sigma**2))
        # far-apart neighbours can underflow; keep the edge with a tiny weight
        w = np.maximum(w, np.finfo(float).tiny)
    else:
        w = np.maximum(D, np.finfo(float).eps)
    adj = np.where(mask, w, 0.0)
    return WeightedGraph(adj)


def geodesic_distances(graph, edge_length="weight"):
    """All-pairs shortest-path lengths via repeated Dijkstra.

    ``edge_length`` selects how an edge weight becomes a length: ``unit``
    (every edge has length 1), ``weight`` or ``inverse_weight``.
    """
    if edge_length not in ("unit", "weight", "inverse_weight"):
        raise InvalidInputError(f"unknown edge_length {edge_length!r}")
    adj = graph.adjacency
    present = adj > 0
    if edge_length == "unit":
        lengths = present.astype(np.float64)
    elif edge_length == "weight":
        lengths = adj
    else:
        lengths = np.zeros_like(adj)
        lengths[present] = 1.0 / adj[present]
    sparse = csr_matrix(lengths)
    n_comp, _ = connected_components(sparse, directed=False)
    if n_comp > 1:
        raise GraphDisconnectedError(n_comp)
    D = shortest_path(sparse, method="D", directed=False)
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D, "geodesic")


def normalize_unit_median(D):
    """Scale a distance matrix so its median off-diagonal entry is 1."""
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    n = values.shape[0]
    off = values[~np.eye(n, dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    if med <= 0:
        med = float(off.max()) if off.size and off.max() > 0 else 1.0
    return values / med, med
