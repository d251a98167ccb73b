"""Command line front end: ``bwf fit|test|ci|simulate``.

Every command prints (or writes to ``--out``) one JSON document::

    {"result": {...}, "sha256": "<hash of the canonical result>", "meta": {"timestamp": ...}}

The result body is deterministic for fixed inputs; the timestamp lives
outside it. Set ``SOURCE_DATE_EPOCH`` to pin the timestamp as well.

Exit codes: 0 success, 2 data error, 3 non-convergence, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import BWFError, DataError, NonConvergence
from .inference import DEFAULT_MC, clt_covariance, confidence_interval, run_test
from .io import load_dataset
from .regression import FitConfig, empirical_moments, fit
from .simulation import (
    ExampleConfig,
    _jsonable,
    run_coverage_experiment,
    run_qq_experiment,
    run_size_power,
)


class UsageError(DataError):
    kind = "UsageError"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of numbers, got {text!r}") from None


def _entry(text: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i,j, got {text!r}") from None
    return i, j


def _rho(text: str) -> float | None:
    if text == "auto":
        return None
    if text == "zero":
        return 0.0
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("rho must be auto, zero or a number") from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bwf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output path (JSON); stdout when omitted")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--alpha", type=_unit, default=0.05)
    common.add_argument("--rho", type=_rho, default=None, metavar="{auto|zero|FLOAT}")
    common.add_argument("--eta", type=float, default=1.0)
    common.add_argument("--max-iters", type=int, default=30)
    common.add_argument("--eps", type=float, default=1e-6)
    common.add_argument("--init", choices=["identity", "mean"], default="identity")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--covariates", required=True)
    data.add_argument("--responses", required=True)

    p = sub.add_parser("fit", parents=[common, data], help="fitted SPD matrix at a covariate value")
    p.add_argument("--x", type=_floats, help="covariate value; defaults to the covariate mean")

    p = sub.add_parser("test", parents=[common, data], help="test of no covariate effect")
    p.add_argument("--mc", type=int, default=DEFAULT_MC)

    p = sub.add_parser("ci", parents=[common, data], help="entrywise confidence intervals")
    p.add_argument("--x", type=_floats)
    p.add_argument("--entry", type=_entry, action="append", help="i,j (repeatable); default all i <= j")
    p.add_argument("--level", type=_unit, help="coverage level; default 1 - alpha")

    p = sub.add_parser("simulate", parents=[common], help="run a simulation experiment")
    p.add_argument("--experiment", choices=["qq", "coverage", "size", "power"], required=True)
    p.add_argument("--example", type=int, choices=[1, 2], default=1)
    p.add_argument("--delta", type=_floats, default=[0.0])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--ntilde", type=int, default=0, help="sample size of surrogate covariances; 0 uses exact responses")
    p.add_argument("--mc", type=int, default=DEFAULT_MC)
    p.add_argument("--x", type=_floats, help="query point for qq/coverage; default 0")
    p.add_argument("--entry", type=_entry, action="append")
    p.add_argument("--level", type=_unit, default=0.95)
    p.add_argument("--prefix", help="prefix of the CSV/JSON report files; default derived from --out")
    return parser


def _fit_config(a) -> FitConfig:
    try:
        return FitConfig(eta=a.eta, max_iters=a.max_iters, eps=a.eps, init=a.init)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _echo(a, keys) -> dict:
    out = {k: getattr(a, k) for k in keys if hasattr(a, k)}
    for k in ("covariates", "responses"):
        if k in out:
            out[k + "_sha256"] = _file_digest(out[k])
    if "rho" in out:
        out["rho"] = "auto" if a.rho is None else a.rho
    return out


_FIT_KEYS = ["covariates", "responses", "x", "rho", "eta", "max_iters", "eps", "init", "seed"]


def _query(a, moments, p: int) -> np.ndarray:
    if a.x is None:
        return moments.mean
    x = np.asarray(a.x, dtype=float)
    if x.size != p:
        raise UsageError(f"--x has {x.size} coordinates, covariates have {p}", expected=p, got=int(x.size))
    return x


def _fit_summary(f) -> dict:
    return {"iterations": f.iters, "grad_norm": f.grad_norm, "converged": f.converged}


def _checked_fit(x, data, moments, fc):
    f = fit(x, data, moments, fc)
    if not f.converged:
        raise NonConvergence(
            f"gradient descent did not converge in {f.iters} iterations",
            iterations=f.iters,
            grad_norm=f.grad_norm,
            last_iterate=f.estimate.tolist(),
        )
    return f


def cmd_fit(a) -> dict:
    data = load_dataset(a.covariates, a.responses)
    moments = empirical_moments(data, a.rho)
    x = _query(a, moments, data.p)
    f = _checked_fit(x, data, moments, _fit_config(a))
    return {
        "command": "fit",
        "inputs": _echo(a, _FIT_KEYS),
        "x": x,
        "rho": moments.rho,
        "estimate": f.estimate,
        "diagnostics": _fit_summary(f),
    }


def cmd_test(a) -> dict:
    data = load_dataset(a.covariates, a.responses)
    res = run_test(data, a.alpha, _fit_config(a), a.mc, a.seed, a.rho)
    return {
        "command": "test",
        "inputs": _echo(a, _FIT_KEYS + ["alpha", "mc"]),
        "n": data.n,
        "test": res.to_dict(),
    }


def cmd_ci(a) -> dict:
    data = load_dataset(a.covariates, a.responses)
    moments = empirical_moments(data, a.rho)
    x = _query(a, moments, data.p)
    f = _checked_fit(x, data, moments, _fit_config(a))
    clt = clt_covariance(x, data, f, moments)
    level = a.level if a.level is not None else 1.0 - a.alpha
    entries = a.entry or [(i, j) for i in range(data.d) for j in range(i, data.d)]
    intervals = []
    for i, j in entries:
        if not (0 <= i < data.d and 0 <= j < data.d):
            raise UsageError(f"entry ({i}, {j}) is outside a {data.d}x{data.d} matrix", row=i, col=j)
        lo, hi = confidence_interval(x, (i, j), level, clt, f, data.n)
        intervals.append(
            {"row": i, "col": j, "estimate": float(f.estimate[i, j]), "variance": float(clt.entry_variances[i, j]), "lower": lo, "upper": hi}
        )
    return {
        "command": "ci",
        "inputs": _echo(a, _FIT_KEYS + ["alpha", "level", "entry"]),
        "x": x,
        "level": level,
        "estimate": f.estimate,
        "intervals": intervals,
        "diagnostics": _fit_summary(f),
    }


def cmd_simulate(a) -> dict:
    try:
        cfg = ExampleConfig(which=a.example, n=a.n, p=a.p, d=a.d, delta=a.delta[0], seed=a.seed)
        for dl in a.delta:
            ExampleConfig(which=a.example, n=a.n, p=a.p, d=a.d, delta=dl, seed=a.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fc = _fit_config(a)
    if a.experiment in ("qq", "coverage"):
        entries = a.entry or [(0, 0), (1, 0)]
        runner = run_qq_experiment if a.experiment == "qq" else run_coverage_experiment
        report = runner(cfg, a.trials, x0=a.x, entries=entries, seed=a.seed, level=a.level, n_tilde=a.ntilde, fit_config=fc)
    else:
        deltas = [0.0] if a.experiment == "size" else a.delta
        report = run_size_power(cfg, deltas, a.trials, a.alpha, a.mc, a.seed, a.ntilde, fc)
    prefix = a.prefix or (os.path.splitext(a.out)[0] + "_report" if a.out else f"bwf_{a.experiment}")
    paths = report.write(prefix)
    diagnostics = {k: v for k, v in report.diagnostics.items() if k != "null_qq"}
    if "null_qq" in report.diagnostics:
        q = report.diagnostics["null_qq"]
        diagnostics["null_qq"] = {k: q[k] for k in ("slope", "intercept", "null_median")}
    return {
        "command": "simulate",
        "inputs": _echo(a, ["experiment", "example", "delta", "n", "p", "d", "trials", "ntilde", "alpha", "mc", "seed", "level", "entry", "x"]),
        "kind": report.kind,
        "summary": report.summary,
        "diagnostics": diagnostics,
        "report": paths,
    }


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "ci": cmd_ci, "simulate": cmd_simulate}


def canonical(body: dict) -> str:
    return json.dumps(_jsonable(body), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch else _dt.datetime.now(_dt.timezone.utc)
    return now.isoformat(timespec="seconds")


def render(body: dict) -> str:
    body = dict(body, version=__version__)
    text = canonical(body)
    doc = {
        "result": json.loads(text),
        "sha256": hashlib.sha256(text.encode()).hexdigest(),
        "meta": {"timestamp": _timestamp()},
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        body = COMMANDS[args.command](args)
        code = 0
    except BWFError as exc:
        # a bad input matrix is a data problem, not a numerical one
        loading = exc.kind == "NotPositiveDefinite" and "sample_id" in exc.details
        code = 2 if loading else exc.exit_code
        body = {"command": args.command, "error": exc.to_dict()}
    except ValueError as exc:
        code = 2
        body = {"command": args.command, "error": {"kind": "UsageError", "message": str(exc)}}
    except OSError as exc:
        code = 2
        body = {"command": args.command, "error": {"kind": "IOError", "message": str(exc)}}
    _emit(render(body), getattr(args, "out", None))
    return code


if __name__ == "__main__":
    sys.exit(main())
