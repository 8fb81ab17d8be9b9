"""
Command-line front end.

``groupednormal fit``
    fit one grouped CSV file and write a JSON report;
``groupednormal simulate``
    run a scenario file and write the simulation output directory;
``groupednormal galton``
    fit the bundled Galton tables with all three methods.

Exit status: 0 success, 1 input or usage error, 2 no convergence,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCell,
    DomainError,
    EmptyCell,
    GroupedNormalError,
    MixingFailure,
    NoConvergence,
    SingularInformation,
    ToleranceNotReached,
)
from .estimators import FitOptions, FitResult, Method, fit, mard, moment_init
from .gaussian import GaussianParams
from .grouped import GroupedTable, load_galton, read_grouped_csv
from .inference import empirical_info_em, empirical_info_mcem
from .sampling import RngState
from .simulation import load_scenario, run_scenario, write_report

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_CONVERGENCE = 2
EXIT_NUMERICAL = 3

_NUMERICAL = (DegenerateCell, EmptyCell, SingularInformation, MixingFailure,
              ToleranceNotReached, DomainError)

log = logging.getLogger("groupednormal")


class UsageError(Exception):
    """Bad command-line input (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _method(value: str) -> Method:
    try:
        return Method(value.lower())
    except ValueError:
        valid = ", ".join(m.value for m in Method)
        raise argparse.ArgumentTypeError(
            f"unknown method {value!r}; valid values: {valid}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="groupednormal", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a grouped CSV file")
    f.add_argument("--method", type=_method, default=Method.EM,
                   help="exact, em or mcem (default em)")
    f.add_argument("--data", required=True, help="grouped CSV file")
    f.add_argument("--dims", type=int, default=None, help="expected dimension")
    f.add_argument("--init-mean", type=float, nargs="+", default=None)
    f.add_argument("--init-cov", type=float, nargs="+", default=None,
                   help="covariance entries in row-major order (d*d numbers)")
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--mcem-samples", type=int, default=None)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--se", action="store_true", help="standard errors and 95%% intervals")
    f.add_argument("--trace", action="store_true", help="include the iteration trace")
    f.add_argument("--out", default=None, help="report path (default: stdout)")

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument("--scenario", required=True,
                   help="scenario TOML file, or the name of a bundled scenario")
    s.add_argument("--reps", type=int, default=None, help="override the replicate count")
    s.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: all cores)")
    s.add_argument("--out", default=None, help="output directory")

    g = sub.add_parser("galton", help="reproduce the Galton analysis")
    g.add_argument("--out", default=None, help="report path (default: stdout)")
    g.add_argument("--seed", type=int, default=0)
    return p


# ---------------------------------------------------------------------------
# reports


def _params_dict(params: GaussianParams) -> dict:
    return {
        "mean": params.mean.tolist(),
        "cov": params.cov.tolist(),
        "summary": params.summary(),
    }


def _se_block(table: GroupedTable, res: FitResult, opts: FitOptions) -> dict:
    if res.method is Method.EXACT or res.method is Method.EM:
        inf = empirical_info_em(table, res.params)
    else:
        inf = empirical_info_mcem(table, res.params, opts.samples_for(table.d),
                                  RngState(opts.seed, 1))
    return {"se": inf.se.tolist(), "ci": {"lower": inf.ci_lower.tolist(),
                                          "upper": inf.ci_upper.tolist()}}


def fit_report(table: GroupedTable, res: FitResult, opts: FitOptions,
               with_se: bool, with_trace: bool) -> dict:
    rep = {
        "method": res.method.value,
        "d": table.d,
        "n": table.n,
        "estimates": _params_dict(res.params),
        "loglik": res.loglik,
        "iterations": res.iterations,
        "converged": res.converged,
        "message": res.message,
    }
    if with_se:
        rep.update(_se_block(table, res, opts))
    if with_trace:
        rep["trace"] = [
            {"iteration": t.iteration, "loglik": t.loglik, "summary": t.params.summary()}
            for t in res.trace
        ]
    return rep


def _emit(obj: dict, out) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _init_from_args(args, table: GroupedTable) -> GaussianParams:
    if args.init_mean is None and args.init_cov is None:
        return moment_init(table)
    d = table.d
    mean = np.asarray(args.init_mean if args.init_mean is not None
                      else moment_init(table).mean, dtype=float)
    if mean.size != d:
        raise UsageError(f"--init-mean needs {d} values, got {mean.size}")
    if args.init_cov is None:
        cov = moment_init(table).cov
    else:
        cov = np.asarray(args.init_cov, dtype=float)
        if cov.size != d * d:
            raise UsageError(f"--init-cov needs {d * d} values, got {cov.size}")
        cov = cov.reshape(d, d)
    return GaussianParams(mean, cov)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    table = read_grouped_csv(path, dims=args.dims)
    init = _init_from_args(args, table)
    opts = FitOptions(max_iter=args.max_iter, tol=args.tol, mcem_samples=args.mcem_samples,
                      seed=args.seed, record_trace=args.trace)
    res = fit(table, args.method, init, opts)
    _emit(fit_report(table, res, opts, args.se and res.converged, args.trace), args.out)
    if not res.converged:
        print(f"warning: {res.message or 'did not converge'}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _resolve_scenario(spec: str) -> Path:
    p = Path(spec)
    if p.is_file():
        return p
    name = spec if spec.endswith(".toml") else spec + ".toml"
    bundled = resources.files("groupednormal").joinpath("scenarios").joinpath(name)
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"scenario file not found: {spec}")


def cmd_simulate(args) -> int:
    path = _resolve_scenario(args.scenario)
    try:
        scenario = load_scenario(path)
    except (ValueError, OSError) as exc:
        raise UsageError(f"invalid scenario {path}: {exc}") from None
    if args.reps is not None:
        if args.reps < 1:
            raise UsageError("--reps must be at least 1")
        scenario = scenario.replace(reps=args.reps)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    report = run_scenario(scenario, threads=threads)
    out = write_report(report, args.out or f"sim-{scenario.name}")
    print(f"{scenario.name}: {scenario.reps} replicates in {report.elapsed_seconds:.1f} s -> {out}")
    for m in report.methods.values():
        cells = "  ".join(f"{p}={v:.5f}" for p, v in m.rmse.items())
        line = f"  {m.method:5s} RMSE {cells}"
        if m.coverage:
            line += "  EC " + " ".join(f"{p}={v:.3f}" for p, v in m.coverage.items())
        if m.failures:
            line += f"  failures={m.failures}"
        print(line)
    return EXIT_OK


GALTON_INIT_1D = GaussianParams.univariate(67.0, 4.0)
GALTON_INIT_2D = GaussianParams(np.array([67.0, 67.0]),
                                np.array([[3.2, 2.227106], [2.227106, 6.2]]))


def galton_report(seed: int = 0) -> dict:
    """Fit the parent, child and joint Galton tables by all three methods.

    Every fit starts from mean 67 with variance 4 (univariate) or from
    ``GALTON_INIT_2D`` (joint table).
    """
    out = {"tables": {}}
    for which in ("parent", "child", "2d"):
        table = load_galton(which)
        init = GALTON_INIT_2D if table.d == 2 else GALTON_INIT_1D
        opts = FitOptions(seed=seed)
        fits = {}
        exact_vec = None
        for method in (Method.EXACT, Method.EM, Method.MCEM):
            res = fit(table, method, init, opts)
            entry = fit_report(table, res, opts, with_se=method is not Method.EXACT,
                               with_trace=False)
            vec = list(res.params.summary().values())
            if method is Method.EXACT:
                exact_vec = vec
            else:
                entry["mard_vs_exact"] = mard(vec, exact_vec)
            fits[method.value] = entry
        out["tables"][which] = {"n": table.n, "shape": list(table.shape), "fits": fits}
    return out


def _galton_text(rep: dict) -> str:
    lines = []
    for which, t in rep["tables"].items():
        lines.append(f"Galton {which} (n={t['n']}, cells {'x'.join(map(str, t['shape']))})")
        names = list(t["fits"]["exact"]["estimates"]["summary"])
        lines.append("  method " + "".join(f"{p:>12s}" for p in names) + "     MARD%")
        for m, f in t["fits"].items():
            vals = "".join(f"{f['estimates']['summary'][p]:12.5f}" for p in names)
            md = f"{100 * f['mard_vs_exact']:10.5f}" if "mard_vs_exact" in f else ""
            lines.append(f"  {m:6s} {vals}{md}")
            if "se" in f:
                lines.append("    se(mean) " + " ".join(f"{s:.5f}" for s in f["se"]))
    return "\n".join(lines)


def cmd_galton(args) -> int:
    rep = galton_report(args.seed)
    print(_galton_text(rep), file=sys.stderr if args.out is None else sys.stdout)
    _emit(rep, args.out)
    ok = all(f["converged"] for t in rep["tables"].values() for f in t["fits"].values())
    return EXIT_OK if ok else EXIT_NO_CONVERGENCE


_COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "galton": cmd_galton}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"groupednormal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"groupednormal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoConvergence as exc:
        print(f"groupednormal: no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except _NUMERICAL as exc:
        print(f"groupednormal: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GroupedNormalError, ValueError, OSError) as exc:
        print(f"groupednormal: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
