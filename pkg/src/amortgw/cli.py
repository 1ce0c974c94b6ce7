"""Command-line interface: ``amortgw <command> [options]``.

Exit codes are 0 on success, 1 on usage or input errors and 2 on
numerical failure. Every command takes ``--config`` (a JSON document with
``schema_version`` and keys named like the long options) and ``--seed``;
explicit flags override config values. ``AMORTGW_OUTPUT_DIR`` sets the
directory relative output paths are resolved against and
``AMORTGW_NUM_THREADS`` caps BLAS and numba threads.
"""

from __future__ import annotations

import argparse
import multiprocessing as mp
import os
import resource
import sys
import time

import numpy as np

from . import io, net
from .annealing import AnnealSchedule
from .egw import entropic_gw_solve
from .errors import InvalidInputError, NumericalError
from .evaluation import barycentric_project, foscttm, label_transfer
from .geometry import Dataset, normalize_unit_median
from .sinkhorn import sinkhorn_solve
from .synth import gen_gaussian_mixture, gen_mirror_clusters, gen_orthogonal_pair, gen_swiss_roll
from .trainer import TrainConfig, distance_matrix, embed, infer, train

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "AMORTGW_OUTPUT_DIR"
THREADS_ENV = "AMORTGW_NUM_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out(path):
    if path is None:
        return None
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    io.ensure_dir(path)
    return path


def _load_config(path, command, allowed):
    doc = io.read_json(path)
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise InvalidInputError(f"{path}: unknown keys for '{command}': {unknown}")
    return doc


def _resolve(args, parser, defaults):
    """Merge defaults, ``--config`` values and explicit flags (in that order)."""
    opts = dict(defaults)
    if getattr(args, "config", None):
        opts.update(_load_config(args.config, args.command, defaults))
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    for k, v in vars(args).items():
        if k not in opts and k not in ("config", "command", "func"):
            opts[k] = v
    missing = [k for k, v in opts.items() if v is _REQUIRED]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


_REQUIRED = object()


def _labels(ds):
    return ds.labels


# ---------------------------------------------------------------- commands

SYNTH_DEFAULTS = {
    "kind": "mixture", "n": 200, "d": 16, "k": 10, "separation": 10.0, "noise": 0.0,
    "seed": 0, "sample_seed": None, "out": _REQUIRED, "pair_out": None,
}


def cmd_synth(o):
    kind = o["kind"]
    if kind == "mixture":
        ds = gen_gaussian_mixture(o["n"], o["d"], o["k"], o["separation"], o["seed"], o["sample_seed"])
    elif kind == "swiss_roll":
        ds = gen_swiss_roll(o["n"], o["noise"], o["seed"])
    elif kind == "mirror":
        ds = gen_mirror_clusters(o["n"], o["d"], o["separation"], seed=o["seed"], sample_seed=o["sample_seed"])
    else:
        raise InvalidInputError(f"unknown synth kind {kind!r}")
    io.write_dataset(_out(o["out"]), ds)
    if o["pair_out"]:
        io.write_dataset(_out(o["pair_out"]), gen_orthogonal_pair(ds, o["seed"]))
    return 0


DIST_DEFAULTS = {"input": _REQUIRED, "metric": "euclidean", "k": 10, "normalize": False, "out": _REQUIRED}


def cmd_dist(o):
    ds = io.read_dataset(o["input"])
    D = distance_matrix(ds, o["metric"], o["k"]).values
    if o["normalize"]:
        D, _ = normalize_unit_median(D)
    io.write_matrix(_out(o["out"]), D)
    return 0


SOLVE_OT_DEFAULTS = {
    "cost": _REQUIRED, "mu": None, "nu": None, "epsilon": 0.1, "max_iters": 2000, "tol": 1e-6,
    "method": "scaling", "out": _REQUIRED, "report": None, "seed": 0,
}


def _measure(path, n):
    if path is None:
        return None
    return io.read_matrix(path).ravel()


def cmd_solve_ot(o):
    C = io.read_matrix(o["cost"])
    res = sinkhorn_solve(C, _measure(o["mu"], C.shape[0]), _measure(o["nu"], C.shape[1]), o["epsilon"],
                         max_iters=o["max_iters"], tol=o["tol"], method=o["method"])
    io.write_matrix(_out(o["out"]), res.plan)
    if o["report"]:
        io.write_json(_out(o["report"]), {
            "iterations": res.iterations, "marginal_error": res.marginal_error,
            "converged": res.converged, "epsilon": res.epsilon,
        })
    return 0


SOLVE_EGW_DEFAULTS = {
    "x": None, "y": None, "dx": None, "dy": None, "metric": "euclidean", "k": 10,
    "epsilon": 0.01, "anneal": False, "eps_start": 1.0, "outer_iters": 200, "tol": 1e-7,
    "out": _REQUIRED, "report": None, "seed": 0,
}


def _distances(o, data_key, dist_key):
    if o[dist_key]:
        return io.read_matrix(o[dist_key]), None
    if not o[data_key]:
        raise UsageError(f"either --{data_key} or --{dist_key} is required")
    ds = io.read_dataset(o[data_key])
    return distance_matrix(ds, o["metric"], o["k"]).values, ds


def cmd_solve_egw(o):
    DX, dsx = _distances(o, "x", "dx")
    DY, dsy = _distances(o, "y", "dy")
    DX, _ = normalize_unit_median(DX)
    DY, _ = normalize_unit_median(DY)
    eps = o["epsilon"]
    if o["anneal"]:
        eps = AnnealSchedule("geometric", o["eps_start"], o["epsilon"], max(1, o["outer_iters"] // 2))
    res = entropic_gw_solve(DX, DY, epsilon=eps, outer_iters=o["outer_iters"], tol=o["tol"])
    io.write_matrix(_out(o["out"]), res.plan)
    if o["report"]:
        doc = {
            "gw_loss": res.gw_loss, "outer_iterations": res.outer_iterations,
            "converged": res.converged, "loss_trace": res.loss_trace,
        }
        if dsx is not None and dsy is not None and dsx.labels is not None and dsy.labels is not None:
            doc["accuracy"] = label_transfer(res.coupling, dsx.labels, dsy.labels).accuracy
        io.write_json(_out(o["report"]), doc)
    return 0


TRAIN_DEFAULTS = {
    "x": _REQUIRED, "y": _REQUIRED, "out_dir": _REQUIRED, "train_config": None,
    "steps": None, "loss_kind": None, "lambda_smooth": None, "seed": None,
}


def _train_config(o):
    cfg = {}
    if o["train_config"]:
        cfg = io.read_json(o["train_config"])
        version = cfg.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InvalidInputError(f"{o['train_config']}: schema_version must be {SCHEMA_VERSION}")
    for k in ("steps", "loss_kind", "lambda_smooth", "seed"):
        if o[k] is not None:
            cfg[k] = o[k]
    if "steps" in cfg and "schedule" not in cfg:
        cfg["schedule"] = None
    return TrainConfig.from_dict(cfg)


def cmd_train(o):
    X, Y = io.read_dataset(o["x"]), io.read_dataset(o["y"])
    config = _train_config(o)
    pf, pg, report = train(X, Y, config)
    out_dir = _out(os.path.join(o["out_dir"], "model_f.json"))
    d = os.path.dirname(out_dir)
    net.save_checkpoint(os.path.join(d, "model_f.json"), report.spec_f, pf)
    net.save_checkpoint(os.path.join(d, "model_g.json"), report.spec_g, pg)
    io.write_json(os.path.join(d, "config.json"), {"schema_version": SCHEMA_VERSION, **config.to_dict()})
    doc = report.to_dict()
    if X.labels is not None and Y.labels is not None and X.n == Y.n:
        doc["train_accuracy"] = label_transfer(report.final_plan, X.labels, Y.labels).accuracy
    io.write_json(os.path.join(d, "train_report.json"), doc)
    return 0


def _load_model(model_dir):
    spec_f, pf, _ = net.load_checkpoint(os.path.join(model_dir, "model_f.json"))
    spec_g, pg, _ = net.load_checkpoint(os.path.join(model_dir, "model_g.json"))
    cfg = io.read_json(os.path.join(model_dir, "config.json"))
    cfg.pop("schema_version", None)
    return spec_f, pf, spec_g, pg, TrainConfig.from_dict(cfg)


INFER_DEFAULTS = {"model_dir": _REQUIRED, "x": _REQUIRED, "y": _REQUIRED, "epsilon": None,
                  "out": _REQUIRED, "report": None, "seed": 0}


def cmd_infer(o):
    _, pf, _, pg, cfg = _load_model(o["model_dir"])
    X, Y = io.read_dataset(o["x"]), io.read_dataset(o["y"])
    t0 = time.perf_counter()
    coupling = infer(pf, pg, X, Y, epsilon_infer=o["epsilon"], config=cfg)
    elapsed = time.perf_counter() - t0
    io.write_matrix(_out(o["out"]), coupling.plan)
    doc = {"n_x": X.n, "n_y": Y.n, "epsilon": o["epsilon"] or cfg.eps_infer,
           "marginal_error": coupling.marginal_error(), "metadata": {"wall_time_seconds": elapsed}}
    if X.labels is not None and Y.labels is not None:
        doc["accuracy"] = label_transfer(coupling, X.labels, Y.labels).accuracy
    if o["report"]:
        io.write_json(_out(o["report"]), doc)
    return 0


EVAL_DEFAULTS = {"plan": _REQUIRED, "x": _REQUIRED, "y": _REQUIRED, "space": "projected",
                 "model_dir": None, "metric": "euclidean", "out": _REQUIRED, "curve": None, "seed": 0}


def cmd_eval(o):
    P = io.read_matrix(o["plan"])
    X, Y = io.read_dataset(o["x"]), io.read_dataset(o["y"])
    if P.shape != (X.n, Y.n):
        raise InvalidInputError(f"plan shape {P.shape} does not match datasets ({X.n}, {Y.n})")
    if o["space"] == "projected":
        U, V = barycentric_project(P, Y.points), Y.points
    elif o["space"] == "embedded":
        if not o["model_dir"]:
            raise UsageError("--space embedded needs --model-dir")
        spec_f, pf, spec_g, pg, _ = _load_model(o["model_dir"])
        U, V = embed(pf, X, spec_f.activation), embed(pg, Y, spec_g.activation)
    else:
        raise UsageError(f"--space must be 'projected' or 'embedded', got {o['space']!r}")
    doc = {"space": o["space"]}
    if X.n == Y.n:
        rep = foscttm(U, V, o["metric"])
        doc.update(foscttm=rep.score, per_point_p=rep.per_point_p, per_point_q=rep.per_point_q)
        if o["curve"]:
            io.write_matrix(_out(o["curve"]), rep.sorted_curve())
    if X.labels is not None and Y.labels is not None:
        lt = label_transfer(P, X.labels, Y.labels)
        doc.update(accuracy=lt.accuracy, ties=lt.ties)
    io.write_json(_out(o["out"]), doc)
    return 0


BENCH_DEFAULTS = {
    "sizes": "500,1000,2000", "methods": "amortized,egw", "d": 16, "k": 10, "train_n": 200,
    "train_steps": 200, "epsilon": 0.01, "egw_outer_iters": 20, "seed": 0, "out": _REQUIRED,
}


def _timed(fn, conn):
    t0 = time.perf_counter()
    fn()
    elapsed = time.perf_counter() - t0
    conn.send((elapsed, resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024))
    conn.close()


def run_isolated(fn):
    """Run ``fn`` in a forked process; return ``(seconds, peak_rss_bytes)``."""
    ctx = mp.get_context("fork")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_timed, args=(fn, child))
    proc.start()
    child.close()
    try:
        result = parent.recv()
    except EOFError:
        result = None
    proc.join()
    if result is None or proc.exitcode != 0:
        raise NumericalError(f"benchmark run failed with exit code {proc.exitcode}")
    return result


def bench_rows(sizes, methods, d=16, k=10, train_n=200, train_steps=200, epsilon=0.01,
               egw_outer_iters=20, seed=0):
    """Time amortised inference against the entropic GW baseline.

    The networks are trained once on ``train_n`` points; every size then
    uses fresh samples from the same mixture. The baseline runs at most
    ``egw_outer_iters`` outer iterations, so its times are lower bounds.
    """
    rows = []
    X = gen_gaussian_mixture(train_n, d, k, seed=seed)
    Y = gen_orthogonal_pair(X, seed)
    cfg = TrainConfig(steps=train_steps, seed=seed, epsilon_infer=epsilon)
    pf = pg = None
    if "amortized" in methods:
        pf, pg, _ = train(X, Y, cfg)
    for n in sizes:
        Xn = gen_gaussian_mixture(n, d, k, seed=seed, sample_seed=n)
        Yn = gen_orthogonal_pair(Xn, seed)
        for method in methods:
            if method == "amortized":
                def fn():
                    infer(pf, pg, Xn, Yn, config=cfg)
            elif method == "egw":
                def fn():
                    DX, _ = normalize_unit_median(distance_matrix(Xn).values)
                    DY, _ = normalize_unit_median(distance_matrix(Yn).values)
                    entropic_gw_solve(DX, DY, epsilon=epsilon, outer_iters=egw_outer_iters, tol=0.0)
            else:
                raise InvalidInputError(f"unknown bench method {method!r}")
            seconds, peak = run_isolated(fn)
            rows.append((method, n, seconds, peak))
    return rows


def cmd_bench(o):
    sizes = [int(s) for s in str(o["sizes"]).split(",") if s]
    methods = [m.strip() for m in str(o["methods"]).split(",") if m.strip()]
    rows = bench_rows(sizes, methods, o["d"], o["k"], o["train_n"], o["train_steps"], o["epsilon"],
                      o["egw_outer_iters"], o["seed"])
    with open(_out(o["out"]), "w") as fh:
        fh.write("method,N,seconds,bytes\n")
        for method, n, sec, peak in rows:
            fh.write(f"{method},{n},{sec:.6f},{peak}\n")
    return 0


COMMANDS = {
    "synth": (cmd_synth, SYNTH_DEFAULTS),
    "dist": (cmd_dist, DIST_DEFAULTS),
    "solve-ot": (cmd_solve_ot, SOLVE_OT_DEFAULTS),
    "solve-egw": (cmd_solve_egw, SOLVE_EGW_DEFAULTS),
    "train": (cmd_train, TRAIN_DEFAULTS),
    "infer": (cmd_infer, INFER_DEFAULTS),
    "eval": (cmd_eval, EVAL_DEFAULTS),
    "bench": (cmd_bench, BENCH_DEFAULTS),
}

_FLAG_TYPES = {
    "n": int, "d": int, "k": int, "sample_seed": int, "seed": int, "max_iters": int, "outer_iters": int,
    "steps": int, "train_n": int, "train_steps": int, "egw_outer_iters": int,
    "separation": float, "noise": float, "epsilon": float, "tol": float, "eps_start": float,
    "lambda_smooth": float,
}
_BOOL_FLAGS = {"normalize", "anneal"}
_POSITIONAL = {"dist": "input"}


def build_parser():
    parser = _Parser(prog="amortgw", description="Amortised Gromov-Wasserstein alignment toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, defaults) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with schema_version and option values")
        for key in defaults:
            flag = "--" + key.replace("_", "-")
            if _POSITIONAL.get(name) == key:
                p.add_argument(key, nargs="?", default=None)
            elif key in _BOOL_FLAGS:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None)
            else:
                p.add_argument(flag, dest=key, type=_FLAG_TYPES.get(key, str), default=None)
    return parser


def _apply_thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:  # pragma: no cover
        pass
    return threadpool_limits(n)


def run_command(argv=None):
    """Parse ``argv`` and run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given; choose one of " + ", ".join(COMMANDS))
        fn, defaults = COMMANDS[args.command]
        opts = _resolve(args, parser, defaults)
        limiter = _apply_thread_limit()
        try:
            return fn(opts)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
