"""Amortised Gromov-Wasserstein training, inference and the explicit-cost variant."""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import net
from .annealing import AnnealSchedule, epsilon_at
from .diffot import (
    cost_from_embeddings,
    cost_from_embeddings_backward,
    gw_objective_and_grad,
    rank_objective_and_grad,
    scale_cost,
    scale_cost_backward,
    sinkhorn_backward_unrolled,
    sinkhorn_forward_unrolled,
)
from .errors import InvalidInputError, NumericalError
from .geometry import Dataset, DistanceMatrix, geodesic_distances, knn_graph, normalize_unit_median, pairwise_distances
from .sinkhorn import Coupling, sinkhorn_continuation, sinkhorn_solve
from .softrank import soft_rank_rows
from .spectral import dirichlet_energy, dirichlet_energy_grad, laplacian

LOSS_KINDS = ("distance", "rank")


@dataclass
class TrainConfig:
    """Hyperparameters of :func:`train`.

    ``schedule=None`` means a geometric decay from 100 to 0.01 over the
    first 70% of ``steps``. The learned cost is divided by the RMS of its
    doubly centred part (``cost_normalization='centered_std'``) so that
    epsilon keeps one meaning as the embeddings grow. ``mlp_spec_f``/``mlp_spec_g`` default to
    3-layer ReLU networks of width ``hidden`` whose output dimension is
    ``out_dim`` or ``max(2, min(d_X, d_Y))``.
    """

    loss_kind: str = "distance"
    ground_cost: str = "sq_euclidean"
    delta: float = 1.0
    lambda_smooth: float = 0.0
    schedule: Optional[AnnealSchedule] = None
    steps: int = 500
    unroll_iters: int = 100
    unroll_iters_small_eps: int = 300
    small_eps: float = 0.05
    seed: int = 0
    mlp_spec_f: Optional[net.MLPSpec] = None
    mlp_spec_g: Optional[net.MLPSpec] = None
    hidden: int = 256
    out_dim: Optional[int] = None
    lr: float = 1e-3
    metric_kind: str = "euclidean"
    geodesic_k: int = 10
    normalization: str = "unit_median"
    cost_normalization: str = "centered_std"
    plan_scale: str = "n"
    exclude_diagonal: bool = False
    smooth_k: int = 10
    warm_start: bool = False
    epsilon_infer: Optional[float] = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInputError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.steps < 1:
            raise InvalidInputError("steps must be >= 1")
        if self.delta <= 0:
            raise InvalidInputError("delta must be positive")
        if self.lambda_smooth < 0:
            raise InvalidInputError("lambda_smooth must be nonnegative")
        if self.normalization not in ("none", "unit_median"):
            raise InvalidInputError(f"unknown normalization {self.normalization!r}")
        if self.cost_normalization not in ("none", "unit_median", "centered_std"):
            raise InvalidInputError(f"unknown cost_normalization {self.cost_normalization!r}")
        if self.plan_scale not in ("n", "none"):
            raise InvalidInputError(f"unknown plan_scale {self.plan_scale!r}")
        if self.unroll_iters < 1 or self.unroll_iters_small_eps < 1:
            raise InvalidInputError("unroll depths must be >= 1")
        if self.schedule is None:
            self.schedule = AnnealSchedule.for_training(self.steps)

    def unroll_for(self, eps):
        return self.unroll_iters_small_eps if eps < self.small_eps else self.unroll_iters

    @property
    def eps_infer(self):
        return self.epsilon_infer if self.epsilon_infer is not None else self.schedule.eps_end

    def specs_for(self, d_x, d_y):
        out = self.out_dim or max(2, min(d_x, d_y))
        f = self.mlp_spec_f or net.default_spec(d_x, out, self.hidden, seed=self.seed)
        g = self.mlp_spec_g or net.default_spec(d_y, out, self.hidden, seed=self.seed + 7919)
        if f.layer_widths[0] != d_x or g.layer_widths[0] != d_y:
            raise InvalidInputError("network input widths do not match the data dimensions")
        if f.layer_widths[-1] != g.layer_widths[-1]:
            raise InvalidInputError("f and g must embed into the same dimension")
        return f, g

    def to_dict(self):
        d = {}
        for fld in fields(self):
            v = getattr(self, fld.name)
            if isinstance(v, (AnnealSchedule, net.MLPSpec)):
                v = v.to_dict()
            d[fld.name] = v
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("schedule") is not None:
            d["schedule"] = AnnealSchedule.from_dict(d["schedule"])
        for k in ("mlp_spec_f", "mlp_spec_g"):
            if d.get(k) is not None:
                d[k] = net.MLPSpec.from_dict(d[k])
        return cls(**d)


@dataclass
class StepRecord:
    step: int
    epsilon: float
    loss: float
    smooth: float
    total: float
    grad_norm_f: float
    grad_norm_g: float
    unroll: int


@dataclass
class TrainReport:
    config: TrainConfig
    records: list = field(default_factory=list)
    final_loss: float = float("nan")
    final_normalized_loss: float = float("nan")
    final_plan: Optional[np.ndarray] = None
    final_epsilon: float = float("nan")
    wall_time: float = 0.0
    spec_f: Optional[net.MLPSpec] = None
    spec_g: Optional[net.MLPSpec] = None
    checkpoints: list = field(default_factory=list)

    def losses(self):
        return np.array([r.loss for r in self.records])

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "records": [asdict(r) for r in self.records],
            "final_loss": self.final_loss,
            "final_normalized_loss": self.final_normalized_loss,
            "final_epsilon": self.final_epsilon,
            "metadata": {"wall_time_seconds": self.wall_time},
            "checkpoints": list(self.checkpoints),
        }


def distance_matrix(data, metric_kind="euclidean", k=10):
    """Distance matrix of a dataset under one of the supported metrics."""
    if metric_kind == "geodesic":
        return geodesic_distances(knn_graph(data, k, weighting="distance"), edge_length="weight")
    return pairwise_distances(data, metric_kind)


def _prepare_distance(D, normalization):
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    if normalization == "unit_median":
        values, _ = normalize_unit_median(values)
    return values


@dataclass
class _Problem:
    """Everything about the training pair that does not change across steps."""

    X: np.ndarray
    Y: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    DX: np.ndarray
    DY: np.ndarray
    LX: Optional[np.ndarray]
    LY: Optional[np.ndarray]
    ranks_X: Optional[np.ndarray]
    scale: float


def _build_problem(X, Y, config, D_X=None, D_Y=None):
    if D_X is None:
        D_X = distance_matrix(X, config.metric_kind, config.geodesic_k)
    if D_Y is None:
        D_Y = distance_matrix(Y, config.metric_kind, config.geodesic_k)
    DX = _prepare_distance(D_X, config.normalization)
    DY = _prepare_distance(D_Y, config.normalization)
    if DX.shape[0] != X.n or DY.shape[0] != Y.n:
        raise InvalidInputError("distance matrices do not match the dataset sizes")
    LX = LY = None
    if config.lambda_smooth > 0:
        LX = laplacian(knn_graph(X, min(config.smooth_k, X.n - 1), "gaussian")).matrix
        LY = laplacian(knn_graph(Y, min(config.smooth_k, Y.n - 1), "gaussian")).matrix
    ranks_X = None
    if config.loss_kind == "rank":
        ranks_X = soft_rank_rows(DX, config.delta, exclude_diagonal=config.exclude_diagonal).ranks
    scale = float(X.n) if config.plan_scale == "n" else 1.0
    return _Problem(X.points, Y.points, X.measure, Y.measure, DX, DY, LX, LY, ranks_X, scale)


def _evaluate(prob, config, pf, pg, spec_f, spec_g, eps, init=None, need_grad=True):
    """One forward (and optionally backward) pass of the training objective."""
    ZX, tape_f = net.forward(pf, prob.X, spec_f.activation)
    ZY, tape_g = net.forward(pg, prob.Y, spec_g.activation)
    C = cost_from_embeddings(ZX, ZY, config.ground_cost)
    Cs, rec = scale_cost(C, config.cost_normalization)
    iters = config.unroll_for(eps)
    coupling, tape = sinkhorn_forward_unrolled(Cs, prob.mu, prob.nu, eps, iters, init=init)
    P = coupling.plan
    if config.loss_kind == "distance":
        loss, gP = gw_objective_and_grad(prob.DX, prob.DY, P, prob.scale)
    else:
        loss, gP = rank_objective_and_grad(
            prob.DX, prob.DY, P, config.delta, prob.scale, config.exclude_diagonal, prob.ranks_X
        )
    smooth = 0.0
    if config.lambda_smooth > 0:
        smooth = dirichlet_energy(prob.LX, prob.LY, Cs)
    out = {"loss": loss, "smooth": smooth, "total": loss + config.lambda_smooth * smooth, "plan": P, "tape": tape, "iters": iters}
    if not need_grad:
        return out
    gCs = sinkhorn_backward_unrolled(tape, gP)
    if config.lambda_smooth > 0:
        gCs = gCs + config.lambda_smooth * dirichlet_energy_grad(prob.LX, prob.LY, Cs)
    gC = scale_cost_backward(rec, gCs)
    gZX, gZY = cost_from_embeddings_backward(ZX, ZY, gC, config.ground_cost)
    out["grad_f"], _ = net.backward(pf, tape_f, gZX)
    out["grad_g"], _ = net.backward(pg, tape_g, gZY)
    return out


def _as_dataset(data):
    return data if isinstance(data, Dataset) else Dataset(data)


def objective(X, Y, config, params_f, params_g, epsilon, D_X=None, D_Y=None):
    """Training objective and parameter gradients at fixed parameters.

    Exposed for gradient checking; ``train`` uses the same code path.
    """
    X, Y = _as_dataset(X), _as_dataset(Y)
    prob = _build_problem(X, Y, config, D_X, D_Y)
    spec_f, spec_g = config.specs_for(X.dim, Y.dim)
    return _evaluate(prob, config, params_f, params_g, spec_f, spec_g, epsilon)


def train(X, Y, config=None, D_X=None, D_Y=None, callback=None):
    """Fit embedding networks whose entropic OT plan aligns ``X`` with ``Y``.

    Full-batch: every step embeds all points, solves one unrolled
    Sinkhorn problem at the scheduled epsilon and backpropagates the
    alignment loss (plus the optional Dirichlet penalty) to both networks.
    ``D_X``/``D_Y`` override the distances computed from the points.
    The reported final plan and loss come from the same converged solve
    that :func:`infer` performs, at the inference epsilon.

    Returns
    -------
    params_f, params_g : MLPParams
    report : TrainReport
    """
    config = config or TrainConfig()
    X, Y = _as_dataset(X), _as_dataset(Y)
    t0 = time.perf_counter()
    prob = _build_problem(X, Y, config, D_X, D_Y)
    spec_f, spec_g = config.specs_for(X.dim, Y.dim)
    pf, pg = net.init_params(spec_f), net.init_params(spec_g)
    of = net.OptState.create(pf, lr=config.lr)
    og = net.OptState.create(pg, lr=config.lr)
    report = TrainReport(config, spec_f=spec_f, spec_g=spec_g)
    init = None
    for step in range(config.steps):
        eps = epsilon_at(config.schedule, step)
        try:
            out = _evaluate(prob, config, pf, pg, spec_f, spec_g, eps, init)
            if not np.isfinite(out["total"]):
                raise NumericalError("non-finite loss")
            of, new_pf = net.opt_step(of, pf, out["grad_f"])
            og, new_pg = net.opt_step(og, pg, out["grad_g"])
        except (NumericalError, FloatingPointError) as exc:
            last_good = {"f": net.checkpoint_to_dict(spec_f, pf), "g": net.checkpoint_to_dict(spec_g, pg)}
            raise NumericalError(
                f"training aborted at step {step} (epsilon={eps:g}): {exc}", step=step, epsilon=eps, checkpoint=last_good
            ) from exc
        if config.warm_start:
            init = (out["tape"].fs[-1], out["tape"].gs[-1])
        report.records.append(
            StepRecord(
                step,
                eps,
                out["loss"],
                out["smooth"],
                out["total"],
                out["grad_f"].norm(),
                out["grad_g"].norm(),
                out["iters"],
            )
        )
        pf, pg = new_pf, new_pg
        if callback is not None:
            callback(step, out, pf, pg)
    eps = config.eps_infer
    ZX = net.forward(pf, prob.X, spec_f.activation)[0]
    ZY = net.forward(pg, prob.Y, spec_g.activation)[0]
    P = _solve_embedded(ZX, ZY, prob.mu, prob.nu, config, eps).plan
    report.final_loss = _primary_loss(prob, config, P)
    report.final_normalized_loss = report.final_loss / (X.n * Y.n)
    report.final_plan = P
    report.final_epsilon = eps
    report.wall_time = time.perf_counter() - t0
    return pf, pg, report


def _solve_embedded(ZX, ZY, mu, nu, config, eps, max_iters=5000, tol=1e-6):
    C, _ = scale_cost(cost_from_embeddings(ZX, ZY, config.ground_cost), config.cost_normalization)
    return sinkhorn_continuation(C, mu, nu, eps, eps_start=max(1.0, eps), max_iters=max_iters, tol=tol)


def _primary_loss(prob, config, P):
    if config.loss_kind == "distance":
        return gw_objective_and_grad(prob.DX, prob.DY, P, prob.scale)[0]
    return rank_objective_and_grad(
        prob.DX, prob.DY, P, config.delta, prob.scale, config.exclude_diagonal, prob.ranks_X
    )[0]


def embed(params, points, activation="relu"):
    pts = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=np.float64)
    return net.forward(params, pts, activation)[0]


def infer(params_f, params_g, X_new, Y_new, epsilon_infer=None, config=None, max_iters=5000, tol=1e-6):
    """Align unseen samples with one entropic OT solve on learned embeddings.

    No distance matrix of the new samples is computed. The solve at
    ``epsilon_infer`` is warm-started by an epsilon continuation from 1.
    """
    config = config or TrainConfig()
    X_new, Y_new = _as_dataset(X_new), _as_dataset(Y_new)
    for name, p, data in (("X", params_f, X_new), ("Y", params_g, Y_new)):
        if p.weights[0].shape[1] != data.dim:
            raise InvalidInputError(
                f"{name} has {data.dim} features but the network expects {p.weights[0].shape[1]}"
            )
    eps = config.eps_infer if epsilon_infer is None else float(epsilon_infer)
    act_f = config.mlp_spec_f.activation if config.mlp_spec_f else "relu"
    act_g = config.mlp_spec_g.activation if config.mlp_spec_g else "relu"
    ZX = embed(params_f, X_new, act_f)
    ZY = embed(params_g, Y_new, act_g)
    res = _solve_embedded(ZX, ZY, X_new.measure, Y_new.measure, config, eps, max_iters, tol)
    return res.coupling


@dataclass
class ExplicitCostResult:
    coupling: Coupling
    cost: np.ndarray
    loss_trace: list
    warning: str


EXPLICIT_COST_WARNING = (
    "explicit-cost optimisation is unbounded in the cost matrix and is known to be "
    "unstable; it is transductive and intended as a diagnostic"
)


def explicit_cost_solve(
    D_X,
    D_Y,
    mu=None,
    nu=None,
    epsilon=0.1,
    steps=300,
    lr=0.05,
    unroll_iters=100,
    seed=0,
    init_scale=0.1,
    plan_scale="n",
    loss_kind="distance",
    delta=1.0,
):
    """Optimise a free cost matrix so that its entropic OT plan is GW-optimal.

    ``epsilon`` may be a float or an :class:`AnnealSchedule` evaluated at
    the step index. The cost starts as small seeded Gaussian noise.
    """
    DX = np.asarray(getattr(D_X, "values", D_X), dtype=np.float64)
    DY = np.asarray(getattr(D_Y, "values", D_Y), dtype=np.float64)
    if DX.shape[0] != DX.shape[1] or DY.shape[0] != DY.shape[1]:
        raise InvalidInputError("distance matrices must be square")
    n, m = DX.shape[0], DY.shape[0]
    mu = np.full(n, 1.0 / n) if mu is None else np.asarray(mu, dtype=np.float64)
    nu = np.full(m, 1.0 / m) if nu is None else np.asarray(nu, dtype=np.float64)
    rng = np.random.default_rng(seed)
    C = init_scale * rng.standard_normal((n, m))
    scale = float(n) if plan_scale == "n" else 1.0
    params = net.MLPParams([C], [np.zeros(0)])
    state = net.OptState.create(params, lr=lr)
    trace = []
    P = None
    for step in range(steps):
        eps = epsilon_at(epsilon, step) if isinstance(epsilon, AnnealSchedule) else float(epsilon)
        coupling, tape = sinkhorn_forward_unrolled(params.weights[0], mu, nu, eps, unroll_iters)
        P = coupling.plan
        if loss_kind == "distance":
            loss, gP = gw_objective_and_grad(DX, DY, P, scale)
        else:
            loss, gP = rank_objective_and_grad(DX, DY, P, delta, scale)
        if not np.isfinite(loss):
            raise NumericalError(f"explicit-cost solve diverged at step {step}; trace={trace}", step=step, epsilon=eps)
        trace.append(loss)
        gC = sinkhorn_backward_unrolled(tape, gP)
        state, params = net.opt_step(state, params, net.MLPParams([gC], [np.zeros(0)]))
    eps = epsilon_at(epsilon, steps) if isinstance(epsilon, AnnealSchedule) else float(epsilon)
    coupling, _ = sinkhorn_forward_unrolled(params.weights[0], mu, nu, eps, unroll_iters)
    warnings.warn(EXPLICIT_COST_WARNING, RuntimeWarning, stacklevel=2)
    return ExplicitCostResult(coupling, params.weights[0], trace, EXPLICIT_COST_WARNING)
