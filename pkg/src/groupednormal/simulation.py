"""
Repeated-sampling studies for the grouped-data estimators.

A :class:`Scenario` fixes the true normal, the sample size, the binning and
the methods to compare.  Replicate ``r`` draws its data from the stream
``RngState(seed, r)``, so every replicate (and the whole report) depends
only on the scenario, never on scheduling or on the number of workers.

Scenario files are flat TOML::

    name = "uni-n600-k15"
    true_mean = [68.0]
    true_cov = [[6.25]]
    n = 600
    bins = [15]
    reps = 200
    init_mean = [67.0]
    init_cov = [[4.0]]
    methods = ["exact", "em", "mcem"]
    mcem_samples = 1000
    seed = 20240
    bin_strategy = "fixed"     # or "sample"
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GroupedNormalError
from .estimators import FitOptions, Method, fit
from .gaussian import GaussianParams
from .grouped import Axis, GroupedTable, bin_samples
from .inference import empirical_info_em, empirical_info_mcem
from .sampling import RngState

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

__all__ = [
    "BinStrategy",
    "Scenario",
    "MethodSummary",
    "ScenarioReport",
    "load_scenario",
    "scenario_from_dict",
    "bin_edges",
    "simulate_dataset",
    "fit_replicate",
    "run_scenario",
    "coverage_report",
    "write_report",
    "rmse",
    "empirical_coverage",
]

log = logging.getLogger(__name__)

_RANGE_SDS = 3.0


class BinStrategy(str, enum.Enum):
    FIXED = "fixed"
    SAMPLE = "sample"


@dataclass(frozen=True)
class Scenario:
    """One simulation design.

    ``bins_per_axis[j]`` is the total number of bins on axis ``j``; the two
    outermost bins are open to infinity.
    """

    true_params: GaussianParams
    n: int
    bins_per_axis: tuple[int, ...]
    reps: int
    init: GaussianParams
    methods: tuple[Method, ...] = (Method.EM,)
    mcem_M: int | None = None
    seed: int = 0
    bin_strategy: BinStrategy = BinStrategy.FIXED
    name: str = "scenario"
    with_se: bool = True
    max_iter: int = 500

    def __post_init__(self):
        d = self.true_params.d
        if self.init.d != d:
            raise ValueError("init and true_params differ in dimension")
        if len(self.bins_per_axis) != d:
            raise ValueError(f"bins_per_axis needs {d} entries")
        if any(k < 2 for k in self.bins_per_axis):
            raise ValueError("every axis needs at least 2 bins")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def d(self) -> int:
        return self.true_params.d

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace

        return replace(self, **changes)


def _as_matrix(value, d):
    a = np.asarray(value, dtype=float)
    return a.reshape(d, d)


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a :class:`Scenario` from the flat key/value layout of a scenario file."""
    known = {
        "name", "true_mean", "true_cov", "n", "bins", "reps", "init_mean", "init_cov",
        "methods", "mcem_samples", "seed", "bin_strategy", "with_se", "max_iter",
    }
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("true_mean", "true_cov", "n", "bins", "reps"):
        if key not in cfg:
            raise ValueError(f"scenario is missing {key!r}")
    mean = np.atleast_1d(np.asarray(cfg["true_mean"], dtype=float))
    d = mean.size
    truth = GaussianParams(mean, _as_matrix(cfg["true_cov"], d))
    init = GaussianParams(
        np.atleast_1d(np.asarray(cfg.get("init_mean", mean), dtype=float)),
        _as_matrix(cfg.get("init_cov", truth.cov), d),
    )
    bins = cfg["bins"]
    bins = tuple(int(b) for b in (bins if isinstance(bins, list) else [bins] * d))
    methods = []
    for m in cfg.get("methods", ["em"]):
        try:
            methods.append(Method(str(m).lower()))
        except ValueError:
            valid = ", ".join(x.value for x in Method)
            raise ValueError(f"unknown method {m!r}; valid values: {valid}") from None
    try:
        strategy = BinStrategy(str(cfg.get("bin_strategy", "fixed")).lower())
    except ValueError:
        raise ValueError("bin_strategy must be 'fixed' or 'sample'") from None
    return Scenario(
        true_params=truth,
        n=int(cfg["n"]),
        bins_per_axis=bins,
        reps=int(cfg["reps"]),
        init=init,
        methods=tuple(methods),
        mcem_M=None if cfg.get("mcem_samples") is None else int(cfg["mcem_samples"]),
        seed=int(cfg.get("seed", 0)),
        bin_strategy=strategy,
        name=str(cfg.get("name", "scenario")),
        with_se=bool(cfg.get("with_se", True)),
        max_iter=int(cfg.get("max_iter", 500)),
    )


def load_scenario(path) -> Scenario:
    """Read a scenario TOML file."""
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    cfg.setdefault("name", Path(path).stem)
    return scenario_from_dict(cfg)


# ---------------------------------------------------------------------------
# data generation


def bin_edges(lo: float, hi: float, k: int) -> np.ndarray:
    """``k`` equal-width bins over ``[lo, hi]`` with the end bins opened to infinity."""
    edges = np.linspace(lo, hi, k + 1)
    edges[0], edges[-1] = -np.inf, np.inf
    return edges


def simulate_dataset(scenario: Scenario, rep: int) -> GroupedTable:
    """Draw and bin the data set of replicate ``rep``."""
    if not 0 <= rep < scenario.reps:
        raise ValueError(f"rep must lie in [0, {scenario.reps})")
    gen = RngState(scenario.seed, rep).generator()
    truth = scenario.true_params
    z = gen.standard_normal((scenario.n, truth.d))
    x = truth.mean + z @ truth.chol.T
    axes = []
    for j, k in enumerate(scenario.bins_per_axis):
        if scenario.bin_strategy is BinStrategy.FIXED:
            half = _RANGE_SDS * truth.sd[j]
            lo, hi = truth.mean[j] - half, truth.mean[j] + half
        else:
            lo, hi = float(x[:, j].min()), float(x[:, j].max())
            if not hi > lo:
                hi = lo + 1.0
        axes.append(Axis(bin_edges(lo, hi, k)))
    return bin_samples(x, axes)


def _fit_seed(scenario: Scenario, rep: int) -> int:
    ss = np.random.SeedSequence([scenario.seed, rep, 1])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def fit_replicate(scenario: Scenario, rep: int) -> dict:
    """Simulate replicate ``rep`` and fit every requested method.

    Returns a plain dict ``{method: record}`` where ``record`` holds
    ``estimates`` (parameter name to value), optional ``se`` and
    ``ci_lower``/``ci_upper`` for the means, ``iterations``, ``converged``
    and ``error`` (``None`` on success).
    """
    table = simulate_dataset(scenario, rep)
    seed = _fit_seed(scenario, rep)
    opts = FitOptions(max_iter=scenario.max_iter, mcem_samples=scenario.mcem_M, seed=seed)
    out = {}
    for method in scenario.methods:
        rec = {"estimates": None, "se": None, "ci_lower": None, "ci_upper": None,
               "iterations": 0, "converged": False, "error": None}
        try:
            res = fit(table, method, scenario.init, opts)
            rec["estimates"] = res.params.summary()
            rec["iterations"] = res.iterations
            rec["converged"] = res.converged
            if not res.converged:
                rec["error"] = res.message or "did not converge"
            elif scenario.with_se and method is not Method.EXACT:
                if method is Method.EM:
                    inf = empirical_info_em(table, res.params)
                else:
                    inf = empirical_info_mcem(table, res.params, opts.samples_for(table.d),
                                              RngState(seed, 1))
                rec["se"] = inf.se.tolist()
                rec["ci_lower"] = inf.ci_lower.tolist()
                rec["ci_upper"] = inf.ci_upper.tolist()
        except GroupedNormalError as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out[method.value] = rec
    return out


# ---------------------------------------------------------------------------
# aggregation


def rmse(values, truth: float) -> float:
    """Root mean squared error of ``values`` about ``truth`` (nan if empty)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean((v - truth) ** 2)))


def empirical_coverage(lower, upper, truth: float) -> float:
    """Fraction of intervals ``[lower_r, upper_r]`` that contain ``truth``."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.size == 0:
        return float("nan")
    return float(np.mean((lo <= truth) & (truth <= hi)))


@dataclass
class MethodSummary:
    method: str
    successes: int
    failures: int
    rmse: dict[str, float]
    mean_estimate: dict[str, float]
    sd_estimate: dict[str, float]
    avg_se: dict[str, float] = field(default_factory=dict)
    coverage: dict[str, float] = field(default_factory=dict)
    iterations: dict[str, float] = field(default_factory=dict)
    failure_messages: list[str] = field(default_factory=list)


@dataclass
class ScenarioReport:
    name: str
    d: int
    n: int
    bins_per_axis: list[int]
    reps: int
    seed: int
    bin_strategy: str
    truth: dict[str, float]
    methods: dict[str, MethodSummary]
    replicates: list[dict] = field(repr=False)
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "n": self.n,
            "bins_per_axis": list(self.bins_per_axis),
            "reps": self.reps,
            "seed": self.seed,
            "bin_strategy": self.bin_strategy,
            "truth": self.truth,
            "methods": {k: vars(v) for k, v in self.methods.items()},
            "replicates": self.replicates,
        }


def _summarise(method: str, reps: list[dict], truth: dict[str, float], d: int) -> MethodSummary:
    recs = [r[method] for r in reps]
    ok = [r for r in recs if r["error"] is None]
    names = list(truth)
    est = {p: np.array([r["estimates"][p] for r in ok]) for p in names}
    summary = MethodSummary(
        method=method,
        successes=len(ok),
        failures=len(recs) - len(ok),
        rmse={p: rmse(est[p], truth[p]) for p in names},
        mean_estimate={p: float(est[p].mean()) if ok else float("nan") for p in names},
        sd_estimate={p: float(est[p].std(ddof=1)) if len(ok) > 1 else float("nan")
                     for p in names},
        failure_messages=sorted({r["error"] for r in recs if r["error"] is not None}),
    )
    iters = np.array([r["iterations"] for r in ok], dtype=float)
    if iters.size:
        summary.iterations = {"mean": float(iters.mean()), "min": float(iters.min()),
                              "max": float(iters.max())}
    with_se = [r for r in ok if r["se"] is not None]
    if with_se:
        for j in range(d):
            p = f"mean_{j + 1}"
            summary.avg_se[p] = float(np.mean([r["se"][j] for r in with_se]))
            summary.coverage[p] = empirical_coverage(
                [r["ci_lower"][j] for r in with_se], [r["ci_upper"][j] for r in with_se],
                truth[p],
            )
    return summary


def _run_one(args):
    scenario, rep = args
    return fit_replicate(scenario, rep)


def run_scenario(scenario: Scenario, threads: int | None = 1) -> ScenarioReport:
    """Fit every replicate and aggregate RMSE, SE and coverage per method.

    ``threads`` greater than one spreads replicates over a process pool;
    the report is identical for any pool size.
    """
    t0 = time.perf_counter()
    jobs = [(scenario, r) for r in range(scenario.reps)]
    if threads is not None and threads > 1 and scenario.reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(_run_one, jobs, chunksize=max(1, scenario.reps // (4 * threads))))
    else:
        reps = [_run_one(j) for j in jobs]
    truth = scenario.true_params.summary()
    methods = {m.value: _summarise(m.value, reps, truth, scenario.d) for m in scenario.methods}
    for m in methods.values():
        if m.failures:
            log.warning("%s: %d of %d replicates failed", m.method, m.failures, scenario.reps)
    return ScenarioReport(
        name=scenario.name,
        d=scenario.d,
        n=scenario.n,
        bins_per_axis=list(scenario.bins_per_axis),
        reps=scenario.reps,
        seed=scenario.seed,
        bin_strategy=scenario.bin_strategy.value,
        truth=truth,
        methods=methods,
        replicates=reps,
        elapsed_seconds=time.perf_counter() - t0,
    )


def coverage_report(scenario: Scenario, threads: int | None = 1) -> ScenarioReport:
    """:func:`run_scenario` restricted to the methods that produce intervals."""
    methods = tuple(m for m in scenario.methods if m is not Method.EXACT)
    if not methods:
        raise ValueError("coverage needs EM or MCEM among the methods")
    return run_scenario(scenario.replace(methods=methods, with_se=True), threads)


# ---------------------------------------------------------------------------
# output


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _clean(x):
    # JSON has no NaN; map it to null
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def write_report(report: ScenarioReport, outdir) -> Path:
    """Write report.json, estimates.csv, rmse.csv, coverage.csv and boxplot.csv."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(_clean(report.to_dict()), indent=2, default=_json_default) + "\n"
    )
    names = list(report.truth)
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "method", "parameter", "value"])
        for r, rec in enumerate(report.replicates):
            for method, m in rec.items():
                if m["error"] is None:
                    for p in names:
                        w.writerow([r, method, p, repr(float(m["estimates"][p]))])
    with open(out / "rmse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "parameter", "n", "rmse", "mean", "sd", "successes", "failures"])
        for m in report.methods.values():
            for p in names:
                w.writerow([m.method, p, report.n, m.rmse[p], m.mean_estimate[p],
                            m.sd_estimate[p], m.successes, m.failures])
    with open(out / "coverage.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "parameter", "n", "avg_se", "sd_estimate", "coverage"])
        for m in report.methods.values():
            for p, c in m.coverage.items():
                w.writerow([m.method, p, report.n, m.avg_se[p], m.sd_estimate[p], c])
    with open(out / "boxplot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "n", "bins", "method", "parameter", "rep", "value", "truth"])
        bins = "x".join(str(k) for k in report.bins_per_axis)
        for r, rec in enumerate(report.replicates):
            for method, m in rec.items():
                if m["error"] is None:
                    for p in names:
                        w.writerow([report.name, report.n, bins, method, p, r,
                                    repr(float(m["estimates"][p])), report.truth[p]])
    return out
