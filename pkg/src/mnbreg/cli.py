"""Command-line interface: ``mnbreg {fit,residuals,envelope,influence,simulate}``.

Every run writes its reports plus ``manifest.json`` into ``--out``.  Exit
status is 0 on success, 2 for data or usage errors and 3 when the model
cannot be fitted (no convergence, information not positive definite).
"""
import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys

import numpy as np

from . import __version__, influence, residuals, simulation
from .errors import (
    AllReplicationsFailed,
    ConvergenceFailure,
    DataError,
    DomainError,
    ModelMismatch,
    NonFiniteMean,
    NotPositiveDefinite,
    SchemeInapplicable,
)
from .estimation import FitOptions, fit, refit_excluding
from .io import ModelFormulaLite, file_digest, ingest_csv
from .model import ThetaParams

EXIT_OK, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3


class FitFailed(Exception):
    """Raised after the reports of a non-converged fit have been written."""


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "NA"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _manifest(args, input_path):
    options = {k: v for k, v in sorted(vars(args).items())
               if k not in ("out", "func", "command")}
    return {
        "command": args.command,
        "input_digest": "sha256:" + file_digest(input_path),
        "seed": getattr(args, "seed", None),
        "options": options,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _parse_init(text, p):
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise DataError(f"--init must be a comma list of numbers, got {text!r}") from None
    if len(vals) != p + 1:
        raise DataError(f"--init needs phi followed by {p} coefficients")
    return ThetaParams(vals[1:], vals[0])


def _load(args):
    formula = ModelFormulaLite.parse(args.response, args.terms, args.offset,
                                     not args.no_intercept)
    return ingest_csv(args.data, args.id, formula)


def _fit(args, data):
    opts = FitOptions(init=_parse_init(args.init, data.p))
    return fit(data, opts), opts


def _require_converged(res):
    if not res.converged:
        raise FitFailed(res.message)


def _fit_summary(res, data):
    return {
        "n_clusters": data.n,
        "n_obs": data.n_obs,
        "covariates": list(data.covariate_names),
        "loglik": res.loglik,
        "phi": res.theta_hat.phi,
        "lambda": res.lambda_hat,
        "converged": res.converged,
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
        "message": res.message,
        "coefficients": res.table(),
    }


def cmd_fit(args):
    data = _load(args)
    res, opts = _fit(args, data)
    out = {"fit": _fit_summary(res, data)}
    if res.converged:
        out["fit"]["covariance"] = np.linalg.inv(res.info)
    if args.drop and res.converged:
        dropped = [s.strip() for s in args.drop.split(",") if s.strip()]
        red = refit_excluding(data, dropped, res.theta_hat, opts)
        prd = influence.prd(res, red)
        names = ["phi", *data.covariate_names]
        out["deletion"] = {
            "dropped": dropped,
            "fit": _fit_summary(red, data.without(dropped)),
            "prd": dict(zip(names, prd)),
        }
        _write_json(os.path.join(args.out, "fit.json"), out)
        _require_converged(red)
    else:
        _write_json(os.path.join(args.out, "fit.json"), out)
    _require_converged(res)
    return args.data


def cmd_residuals(args):
    data = _load(args)
    res, _ = _fit(args, data)
    _require_converged(res)
    rep = residuals.quantile_residuals(res, data, args.seed)
    _write_csv(os.path.join(args.out, "residuals.csv"), ["index", "id", "value"],
               [(i + 1, cid, r) for i, (cid, r) in enumerate(zip(rep.cluster_ids, rep.residuals))])
    return args.data


def cmd_envelope(args):
    data = _load(args)
    res, _ = _fit(args, data)
    _require_converged(res)
    env = residuals.simulated_envelope(res, data, nsim=args.nsim, band=args.band,
                                       seed=args.seed, min_max=args.min_max)
    ids = [data.ids[k] for k in env.sorted_index]
    rows = zip(range(1, len(ids) + 1), ids, env.theoretical, env.lower, env.median,
               env.upper, env.observed)
    _write_csv(os.path.join(args.out, "envelope.csv"),
               ["index", "id", "theoretical", "lower", "median", "upper", "observed"], rows)
    return args.data


def cmd_influence(args):
    data = _load(args)
    res, opts = _fit(args, data)
    _require_converged(res)
    if args.scheme is None:
        rep = influence.global_influence(res, data, threads=args.threads)
        _write_csv(os.path.join(args.out, "global_influence.csv"), ["index", "id", "gd", "ld"],
                   [(i + 1, cid, g, ld) for i, (cid, g, ld)
                    in enumerate(zip(rep.cluster_ids, rep.gd, rep.ld))])
        _write_json(os.path.join(args.out, "influence.json"),
                    {"kind": "global", "benchmark_gd": rep.benchmark_gd,
                     "benchmark_ld": rep.benchmark_ld})
        return args.data
    scheme = args.scheme
    if scheme == "weight" and args.level == "measurement":
        scheme = "weight-obs"
    covariate = args.covariate
    if covariate is not None and covariate.isdigit():
        covariate = int(covariate)
    rep, delta = influence.local_influence(res, data, scheme, covariate, args.scale_sx)
    _write_csv(os.path.join(args.out, "local_influence.csv"),
               ["index", "id", "c_i", "d_max", "flagged"],
               [(i + 1, lab, c, d, int(c > rep.benchmark)) for i, (lab, c, d)
                in enumerate(zip(rep.labels, rep.c_i, rep.d_max))])
    _write_json(os.path.join(args.out, "influence.json"),
                {"kind": "local", "scheme": rep.scheme, "c_dmax": rep.c_dmax,
                 "benchmark": rep.benchmark, "meta": delta.meta})
    return args.data


def cmd_simulate(args):
    with open(args.config, encoding="utf-8") as fh:
        config = simulation.parse_config(fh.read())
    if args.seed is not None:
        config = simulation.StudyConfig(**{**config.__dict__, "seed": args.seed})
    summary = simulation.monte_carlo(config, threads=args.threads)
    out = summary.as_dict()
    out["config"] = {k: v for k, v in config.__dict__.items()}
    _write_json(os.path.join(args.out, "simulation.json"), out)
    return args.config


def _data_parser():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("data and model")
    g.add_argument("--data", required=True, help="long-format CSV file")
    g.add_argument("--id", required=True, help="cluster id column")
    g.add_argument("--response", required=True, help="count response column")
    g.add_argument("--terms", default="",
                   help="comma list of columns; a:b for an interaction, factor(c) for categorical")
    g.add_argument("--offset", default="none", help="none, log:<col> or <col>")
    g.add_argument("--no-intercept", action="store_true")
    g.add_argument("--init", help="starting values: phi,beta1,...,betap")
    return p


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="mnbreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    data, common = _data_parser(), _common_parser()

    p = sub.add_parser("fit", parents=[data, common], help="maximum likelihood fit")
    p.add_argument("--drop", help="comma list of cluster ids to delete; adds PRD output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("residuals", parents=[data, common], help="quantile residuals")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_residuals)

    p = sub.add_parser("envelope", parents=[data, common], help="simulated envelope")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nsim", type=int, default=100)
    p.add_argument("--band", type=float, default=0.95)
    p.add_argument("--min-max", action="store_true",
                   help="use replicate extremes as the band (classic 21-replicate envelope)")
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("influence", parents=[data, common],
                       help="case deletion, or local influence with --scheme")
    p.add_argument("--scheme", choices=["weight", "weight-obs", "explanatory", "dispersion"])
    p.add_argument("--level", choices=["subject", "measurement"], default="subject",
                   help="unit of the case-weight scheme")
    p.add_argument("--covariate", help="column name or index for the explanatory scheme")
    p.add_argument("--scale-sx", type=float, help="scale of the explanatory perturbation")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study")
    p.add_argument("--config", required=True, help="key = value study description")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        source = args.func(args)
    except (DataError, DomainError, SchemeInapplicable, ModelMismatch,
            OSError, UnicodeDecodeError) as exc:
        print(f"mnbreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitFailed, ConvergenceFailure, NotPositiveDefinite, NonFiniteMean,
            AllReplicationsFailed) as exc:
        print(f"mnbreg {args.command}: fit failed: {exc}", file=sys.stderr)
        _write_json(os.path.join(args.out, "manifest.json"),
                    {**_manifest(args, _source_of(args)), "status": "convergence_failure"})
        return EXIT_CONVERGENCE
    _write_json(os.path.join(args.out, "manifest.json"),
                {**_manifest(args, source), "status": "ok"})
    return EXIT_OK


def _source_of(args):
    return args.config if args.command == "simulate" else args.data


if __name__ == "__main__":
    sys.exit(main())
