"""Amortised Gromov-Wasserstein alignment.

Embedding networks are trained so that a single entropic optimal transport
solve between embedded samples reproduces a Gromov-Wasserstein alignment;
new samples are then aligned without solving the quadratic problem.
"""

from .annealing import AnnealSchedule, epsilon_at
from .egw import GWResult, Permutation, brute_force_qap, entropic_gw_solve, gw_loss
from .errors import GraphDisconnectedError, InvalidInputError, InvalidStateError, NumericalError
from .evaluation import FoscttmReport, barycentric_project, foscttm, label_transfer_accuracy
from .geometry import (
    Dataset,
    DistanceMatrix,
    WeightedGraph,
    geodesic_distances,
    knn_graph,
    pairwise_distances,
)
from .sinkhorn import Coupling, SinkhornResult, sinkhorn_solve
from .softrank import soft_rank, soft_rank_jvp, soft_rank_vjp
from .spectral import dirichlet_energy, laplacian
from .trainer import TrainConfig, TrainReport, explicit_cost_solve, infer, train

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "Coupling",
    "Dataset",
    "DistanceMatrix",
    "FoscttmReport",
    "GWResult",
    "GraphDisconnectedError",
    "InvalidInputError",
    "InvalidStateError",
    "NumericalError",
    "Permutation",
    "SinkhornResult",
    "TrainConfig",
    "TrainReport",
    "WeightedGraph",
    "barycentric_project",
    "brute_force_qap",
    "dirichlet_energy",
    "entropic_gw_solve",
    "epsilon_at",
    "explicit_cost_solve",
    "foscttm",
    "geodesic_distances",
    "gw_loss",
    "infer",
    "knn_graph",
    "label_transfer_accuracy",
    "laplacian",
    "pairwise_distances",
    "sinkhorn_solve",
    "soft_rank",
    "soft_rank_jvp",
    "soft_rank_vjp",
    "train",
]
