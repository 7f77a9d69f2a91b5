"""Command line: generate, fit, select, evaluate, predict, stream.

Every command that writes files also writes ``manifest.json`` next to
them with the resolved configuration, a SHA-256 digest per output and
per-phase wall-clock timings. Timings only appear in the manifest, so
all other outputs are byte-reproducible for a fixed seed.

Exit codes: 0 success, 2 usage, 3 data, 4 fit, 5 IO.
"""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, core, io, metrics, selection
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DegenerateEmissionError,
    EmptyStateError,
    FitError,
    InputError,
    InternalConsistencyError,
    StabilityError,
    TAGMError,
)
from .params import FitConfig, InitConfig, ModelParams
from .synthgen import GeneratorConfig, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT, EXIT_IO = 0, 2, 3, 4, 5

logger = logging.getLogger("tagm")


class UsageError(Exception):
    pass


class _Run:
    """Collects outputs and timings for the manifest."""

    def __init__(self, command, out_dir, config, seed):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.outputs = []
        self.timings = {}
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def timed(self, phase, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.timings[phase] = time.perf_counter() - t0

    def wrote(self, name):
        self.outputs.append(name)

    def json(self, name, doc):
        io.write_json(self.path(name), doc)
        self.wrote(name)

    def finish(self):
        if self.out_dir is None:
            return
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": __version__,
            "outputs": [{"path": n, "sha256": io.sha256(self.path(n))} for n in self.outputs],
            "timings": self.timings,
        }
        io.write_json(self.path("manifest.json"), manifest)


# argument helpers ---------------------------------------------------------

def _split_mode(text):
    mode, _, arg = text.partition(":")
    return mode, arg


def _int_range(text):
    """``"3..8"`` or ``"3,4,5"`` or ``"5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad integer range {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def _generator_config(args):
    kw = dict(n_obs=args.n, n_states=args.k, dim=args.d, kappa=args.kappa, seed=args.seed)
    if args.config:
        kw.update(io.read_json(args.config))
    mode, arg = _split_mode(args.means)
    kw["mean_mode"] = mode
    if mode == "uniform" and arg:
        bounds = _float_list(arg)
        if len(bounds) != 2:
            raise UsageError(f"expected LOW,HIGH in {args.means!r}")
        lo, hi = bounds
        kw.update(mean_low=lo, mean_high=hi)
    mode, arg = _split_mode(args.cov)
    kw["cov_mode"] = mode
    if arg:
        if mode == "degree_bounded":
            kw["max_degree"] = int(arg)
        elif mode == "stressed_identity":
            kw["edge_prob"] = float(arg)
    mode, arg = _split_mode(args.transition)
    kw["transition_mode"] = mode
    if arg:
        if mode == "fixed_smooth":
            kw["steps"] = int(arg)
        else:
            bounds = _int_range(arg)
            if len(bounds) != 2:
                raise UsageError(f"expected LO,HI in {args.transition!r}")
            kw.update(steps_low=bounds[0], steps_high=bounds[1])
    return GeneratorConfig(**kw)


def _fit_config(args, n_states=None, lam=None):
    init = InitConfig(args.chain_init, args.init, args.seed)
    return FitConfig(
        n_states=int(n_states if n_states is not None else args.k),
        lam=float(lam if lam is not None else args.lam),
        tol=args.tol,
        max_iter=args.max_iter,
        n_init=args.n_init,
        init=init,
    )


def _truth_doc(ds):
    tp = ds.true_params
    model = tp.as_model().to_dict()
    model["covariances"] = tp.covariances.tolist()
    model["weights"] = ds.weights.tolist()
    model["config"] = ds.config.to_dict()
    return model


# commands -----------------------------------------------------------------

def cmd_generate(args):
    cfg = _generator_config(args)
    run = _Run("generate", args.out, cfg.to_dict(), cfg.seed)
    ds = run.timed("generate", generate, cfg)
    io.write_matrix(run.path("observations.csv"), ds.X)
    run.wrote("observations.csv")
    io.write_labels(run.path("labels.csv"), ds.labels)
    run.wrote("labels.csv")
    run.json("truth.json", _truth_doc(ds))
    run.finish()
    return EXIT_OK


def _report(fit, X):
    return {
        "k": fit.params.n_states,
        "loglik": fit.posteriors.loglik,
        "penalized_loglik": fit.trace[-1],
        "trace": fit.trace,
        "bic": fit.bic,
        "n_free_params": fit.n_free_params,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "seed": fit.seed,
        "n_obs": int(X.shape[0]),
        "labels": fit.labels.tolist(),
    }


def cmd_fit(args):
    X = io.read_matrix(args.data, header=args.header)
    cfg = _fit_config(args)
    config = cfg.to_dict()
    config.update(chain_order=args.chain_order, emission_order=args.emission_order)
    run = _Run("fit", args.out, config, cfg.init.seed)
    if args.chain_order > 1 or args.emission_order > 1:
        from .extensions.memory import MemConfig, mem_fit
        fit = run.timed("fit", mem_fit, X, cfg, MemConfig(args.chain_order, args.emission_order))
    else:
        fit = run.timed("fit", core.fit_em, X, cfg)
    run.json("model.json", fit.params.to_dict())
    run.json("report.json", _report(fit, X))
    run.finish()
    return EXIT_OK


def cmd_select(args):
    X = io.read_matrix(args.data, header=args.header)
    ks = _int_range(args.k_range)
    grid = _float_list(args.lambda_grid)
    lam_k = args.lam if args.lam is not None else grid[len(grid) // 2]
    cfg = _fit_config(args, n_states=ks[0], lam=lam_k)
    config = cfg.to_dict()
    config.update(k_range=ks, lambda_grid=grid, repeats=args.repeats, lambda_for_k=lam_k)
    run = _Run("select", args.out, config, cfg.init.seed)
    k_best, bic_reports, failures = run.timed("select_k", selection.select_k, X, ks, lam_k, cfg)
    lam_best, soc_reports = run.timed(
        "select_lambda", selection.select_lambda, X, k_best, grid, args.repeats, cfg)
    doc = {
        "k": k_best,
        "lambda": lam_best,
        "lambda_for_k": lam_k,
        "bic": [r.to_dict() for r in bic_reports],
        "failures": {str(k): m for k, m in failures.items()},
        "stability": [r.to_dict() for r in soc_reports],
    }
    run.json("selection.json", doc)
    run.finish()
    return EXIT_OK


def _rolling_predictions(params, X):
    """``pred[n]`` forecasts ``x_{n+1}`` from ``x_1..x_n`` (filtered posteriors)."""
    e = core.forward_backward(params, X)
    return e.alpha @ params.trans @ params.means


def _load_model(path):
    return ModelParams.from_dict(io.read_json(path)).validate()


def cmd_evaluate(args):
    params = _load_model(args.model)
    X = io.read_matrix(args.data, header=args.header)
    if X.shape[1] != params.dim:
        raise InputError(f"data has {X.shape[1]} columns, model expects {params.dim}")
    run = _Run("evaluate", args.out, vars_doc(args), None)
    e = run.timed("posteriors", core.forward_backward, params, X)
    pred_labels = np.argmax(e.gamma, axis=1)
    truth = io.read_json(args.truth) if args.truth else None
    if args.labels:
        true_labels = io.read_labels(args.labels)
    elif truth is not None and "labels" in truth:
        true_labels = np.asarray(truth["labels"], dtype=int)
    else:
        raise UsageError("evaluate needs --labels (or a truth JSON containing labels)")
    if true_labels.size != X.shape[0]:
        raise InputError(f"{true_labels.size} labels for {X.shape[0]} observations")
    doc = {"v_measure": metrics.v_measure(true_labels, pred_labels)}
    if truth is not None and "precisions" in truth:
        true_params = ModelParams.from_dict(truth)
        if true_params.dim != params.dim:
            raise InputError(f"truth has dimension {true_params.dim}, model {params.dim}")
        rep = metrics.network_report(true_params.precisions, true_labels,
                                     params.precisions, pred_labels)
        doc.update(rep.to_dict())
    if args.mae:
        pred = _rolling_predictions(params, X)
        doc["mae"] = metrics.mae(X[1:], pred[:-1]) if X.shape[0] > 1 else None
    run.json("metrics.json", doc)
    run.finish()
    return EXIT_OK


def vars_doc(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def cmd_predict(args):
    if args.horizon != 1:
        raise UsageError("only --horizon 1 is supported")
    params = _load_model(args.model)
    X = io.read_matrix(args.data, header=args.header)
    if X.shape[1] != params.dim:
        raise InputError(f"data has {X.shape[1]} columns, model expects {params.dim}")
    run = _Run("predict", args.out, vars_doc(args), None)
    pred = run.timed("predict", _rolling_predictions, params, X)
    io.write_matrix(run.path("predictions.csv"), pred)
    run.wrote("predictions.csv")
    doc = {"n_predictions": int(pred.shape[0]),
           "mae": metrics.mae(X[1:], pred[:-1]) if X.shape[0] > 1 else None}
    run.json("predict_report.json", doc)
    run.finish()
    print(json.dumps(doc))
    return EXIT_OK


def cmd_stream(args):
    from .extensions import incremental as inc
    from .params import FitResult

    if args.mode == "slide" and args.window is None:
        raise UsageError("--mode slide needs --window")
    X = io.read_matrix(args.batch, header=args.header)
    cfg = _fit_config(args)
    run = _Run("stream", args.out, cfg.to_dict() | {"mode": args.mode, "window": args.window,
                                                      "refit_stride": args.refit_stride},
               cfg.init.seed)
    if args.model:
        params = _load_model(args.model)
        e = core.forward_backward(params, X)
        fit = FitResult(params, e, [], np.argmax(e.gamma, axis=1), float("nan"), 0)
        cfg = cfg.replace(n_states=params.n_states)
    else:
        fit = run.timed("batch_fit", core.fit_em, X, cfg)
    state = inc._init_from_fit(X, fit, cfg, windowed=args.mode == "slide")
    out = sys.stdout
    lineno = 0
    t0 = time.perf_counter()
    for line in args.input:
        lineno += 1
        if not line.strip():
            continue
        try:
            x = io.parse_row(line, lineno)
            if args.mode == "inc":
                inc.inc_update(state, x, args.refit_stride)
            else:
                inc.slide_update(state, x, args.window, args.refit_stride)
        except (InputError, DegenerateEmissionError) as exc:
            out.write(json.dumps({"t": state.t, "line": lineno, "error": str(exc)}) + "\n")
            continue
        rec = {
            "t": state.t,
            "gamma": state.last_gamma.tolist(),
            "label": inc.current_label(state),
            "prediction": inc.predict(state).tolist(),
            "refit": bool(state.last_refit),
        }
        out.write(json.dumps(rec) + "\n")
        out.flush()
    run.timings["stream"] = time.perf_counter() - t0
    if args.out:
        run.json("model.json", state.params.to_dict())
        run.finish()
    return EXIT_OK


# parser -------------------------------------------------------------------

def _add_fit_flags(p, need_k=True):
    if need_k:
        p.add_argument("--k", type=int, required=True, help="number of hidden states")
        p.add_argument("--lambda", dest="lam", type=float, required=True, help="sparsity penalty")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--init", default="kmeans", choices=["kmeans", "gmm"])
    p.add_argument("--chain-init", default="uniform",
                   choices=["uniform", "random_uniform", "dirichlet"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--header", action="store_true", help="CSV files have a header row")


def build_parser():
    parser = argparse.ArgumentParser(prog="tagm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic dataset with ground truth")
    p.add_argument("--config", help="JSON file with GeneratorConfig fields (overrides flags)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--means", default="normal", help="normal | uniform:LOW,HIGH")
    p.add_argument("--cov", default="degree_bounded:2",
                   help="degree_bounded:MAXDEG | random_spd | stressed_identity:P")
    p.add_argument("--transition", default="sudden",
                   help="sudden | fixed_smooth:S | random_smooth:LO,HI | random_smooth_random_weights:LO,HI")
    p.add_argument("--kappa", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit by EM")
    p.add_argument("data")
    _add_fit_flags(p)
    p.add_argument("--chain-order", type=int, default=1)
    p.add_argument("--emission-order", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose K by BIC and lambda by stability")
    p.add_argument("data")
    p.add_argument("--k-range", required=True, help="e.g. 3..8 or 2,4,6")
    p.add_argument("--lambda-grid", required=True, help="comma-separated penalties")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="penalty used while choosing K (default: grid midpoint)")
    p.add_argument("--repeats", type=int, default=5)
    _add_fit_flags(p, need_k=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="score a model against ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="truth JSON from generate")
    p.add_argument("--labels", help="true labels, one integer per line")
    p.add_argument("--mae", action="store_true", help="also score one-step-ahead predictions")
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rolling one-step-ahead predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stream", help="online updates from standard input (NDJSON out)")
    p.add_argument("--batch", required=True, help="CSV used to initialize the online state")
    p.add_argument("--model", help="start from this model instead of fitting the batch")
    p.add_argument("--mode", choices=["inc", "slide"], default="inc")
    p.add_argument("--window", type=int)
    p.add_argument("--refit-stride", type=int, default=1)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    _add_fit_flags(p, need_k=False)
    p.add_argument("--out", help="directory for the final model")
    p.set_defaults(func=cmd_stream, input=sys.stdin)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "stream":
        if args.model is None and args.k is None:
            parser.error("stream needs --k (to fit the batch) or --model")
        if args.k is None:
            args.k = 1
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"tagm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"tagm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, ConvergenceError, EmptyStateError, DegenerateEmissionError,
            InternalConsistencyError, StabilityError) as exc:
        print(f"tagm {args.command}: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except TAGMError as exc:
        print(f"tagm {args.command}: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"tagm {args.command}: IO error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
