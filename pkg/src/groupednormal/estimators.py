"""
Fitting engines for normal parameters from grouped counts.

Three routes to the maximiser of the multinomial log-likelihood
``sum_cells n_c log P_c(theta)``:

``fit_exact_mle``
    direct Nelder-Mead maximisation (with restarts) over an unconstrained
    parameterisation: ``(mu / sigma, 1 / sigma)`` for ``d == 1`` and
    ``(mean, log-Cholesky factor)`` otherwise;
``fit_em``
    EM whose E-step uses closed-form truncated-normal moments;
``fit_mcem``
    Monte-Carlo EM, E-step expectations replaced by averages of ``M``
    truncated draws per counted cell.

The additive multinomial constant is dropped from every log-likelihood.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateCell, EmptyCell, NonPositiveDefinite
from .gaussian import GaussianParams, normal_interval_prob, rect_prob_batch
from .grouped import GroupedTable
from .sampling import RngState, sample_trunc_1d_vec, sample_trunc_nd_cells
from .truncated import trunc_moments_batch

__all__ = [
    "Method",
    "FitOptions",
    "TraceEntry",
    "FitResult",
    "grouped_loglik",
    "cell_probabilities",
    "moment_init",
    "fit_exact_mle",
    "em_step",
    "fit_em",
    "mcem_step",
    "fit_mcem",
    "fit",
    "mard",
]

log = logging.getLogger(__name__)

MCEM_WINDOW = 3
MCEM_REL_TOL = 1e-4
_MIN_CELL_PROB = 1e-300


class Method(str, enum.Enum):
    EXACT = "exact"
    EM = "em"
    MCEM = "mcem"


@dataclass(frozen=True)
class FitOptions:
    """Shared iteration controls.

    ``mcem_samples`` defaults to 1000 draws per cell for ``d == 1`` and 5000
    otherwise.
    """

    max_iter: int = 500
    tol: float = 1e-8
    mcem_samples: int | None = None
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.mcem_samples is not None and self.mcem_samples < 1:
            raise ValueError("mcem_samples must be at least 1")

    def samples_for(self, d: int) -> int:
        if self.mcem_samples is not None:
            return int(self.mcem_samples)
        return 1000 if d == 1 else 5000


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loglik: float
    params: GaussianParams


@dataclass(frozen=True)
class FitResult:
    params: GaussianParams
    loglik: float
    iterations: int
    converged: bool
    method: Method
    trace: tuple[TraceEntry, ...] = field(default=(), repr=False)
    message: str = ""


def cell_probabilities(table: GroupedTable, params: GaussianParams, positive_only: bool = True):
    """Model probability of each cell (flattened C order), with counts."""
    lower, upper, counts = table.cell_bounds(positive_only=positive_only)
    return rect_prob_batch(lower, upper, params), counts


def grouped_loglik(table: GroupedTable, params: GaussianParams) -> float:
    """``sum n_c log P_c`` over cells with a positive count."""
    if params.d != table.d:
        raise ValueError(f"params have d={params.d}, table has d={table.d}")
    p, counts = cell_probabilities(table, params)
    if np.any(~(p > _MIN_CELL_PROB)):
        raise DegenerateCell("a counted cell has zero probability under the model")
    return float(np.dot(counts, np.log(p)))


def mard(estimate, reference) -> float:
    """Mean absolute relative difference between two parameter vectors."""
    e = np.asarray(estimate, dtype=float)
    r = np.asarray(reference, dtype=float)
    return float(np.mean(np.abs(e - r) / np.abs(r)))


def moment_init(table: GroupedTable) -> GaussianParams:
    """Midpoint method-of-moments start.

    Open-ended bins are represented by a point one typical bin width beyond
    their finite edge.
    """
    lower, upper, counts = table.cell_bounds(positive_only=True)
    mids = np.empty_like(lower)
    for j, ax in enumerate(table.axes):
        w = ax.interior_width()
        lo, hi = lower[:, j], upper[:, j]
        mids[:, j] = np.where(
            np.isfinite(lo) & np.isfinite(hi),
            0.5 * (np.where(np.isfinite(lo), lo, 0) + np.where(np.isfinite(hi), hi, 0)),
            np.where(np.isfinite(lo), lo + 0.5 * w, np.where(np.isfinite(hi), hi - 0.5 * w, 0.0)),
        )
    n = counts.sum()
    mean = counts @ mids / n
    dev = mids - mean
    cov = (dev * counts[:, None]).T @ dev / n
    # Sheppard-style floor so a single occupied bin still gives a PD matrix
    widths = np.array([ax.interior_width() for ax in table.axes])
    cov = cov + np.diag(widths**2 / 12.0)
    return GaussianParams(mean, cov)


# --------------------------------------------------------------------------
# Exact MLE

def _pack(params: GaussianParams) -> np.ndarray:
    if params.d == 1:
        s = math.sqrt(params.cov[0, 0])
        return np.array([params.mean[0] / s, 1.0 / s])
    L = params.chol.copy()
    L[np.diag_indices_from(L)] = np.log(np.diag(L))
    return np.concatenate([params.mean, L[np.tril_indices_from(L)]])


def _unpack(theta: np.ndarray, d: int) -> GaussianParams:
    if d == 1:
        t1, t2 = theta
        if not t2 > 0:
            raise NonPositiveDefinite("1/sigma must be positive")
        sigma = 1.0 / t2
        return GaussianParams(np.array([t1 * sigma]), np.array([[sigma * sigma]]))
    mean = theta[:d]
    L = np.zeros((d, d))
    L[np.tril_indices(d)] = theta[d:]
    L[np.diag_indices(d)] = np.exp(np.clip(np.diag(L), -300, 300))
    return GaussianParams(mean, L @ L.T)


def fit_exact_mle(table: GroupedTable, init: GaussianParams,
                  opts: FitOptions | None = None, max_restarts: int = 5) -> FitResult:
    """Maximise the grouped log-likelihood directly with Nelder-Mead.

    After the first run the simplex is rebuilt around the best vertex; this is
    repeated (at least once, at most ``max_restarts`` times) until a restart
    no longer improves the log-likelihood by more than ``opts.tol``.
    """
    opts = opts or FitOptions()
    d = table.d
    if init.d != d:
        raise ValueError("init dimension does not match the table")
    trace = []

    n_pos = int(np.count_nonzero(table.counts))
    if n_pos < 2:
        ll = grouped_loglik(table, init)
        return FitResult(init, ll, 0, False, Method.EXACT, (),
                         "likelihood is flat: fewer than two occupied cells")

    def objective(theta):
        try:
            return -grouped_loglik(table, _unpack(theta, d))
        except (DegenerateCell, NonPositiveDefinite, EmptyCell):
            return np.inf

    theta = _pack(init)
    best = objective(theta)
    if not np.isfinite(best):
        raise DegenerateCell("a counted cell has zero probability at the initial values")
    n_par = theta.size
    iters = 0
    converged = False
    for attempt in range(max_restarts + 1):
        res = minimize(
            objective, theta, method="Nelder-Mead",
            options=dict(xatol=np.inf, fatol=opts.tol, maxiter=opts.max_iter * n_par,
                         maxfev=4 * opts.max_iter * n_par, adaptive=n_par > 3),
        )
        iters += int(res.nit)
        improvement = best - res.fun
        if res.fun <= best:
            theta, best = res.x, float(res.fun)
        if opts.record_trace:
            trace.append(TraceEntry(iters, -best, _unpack(theta, d)))
        if attempt >= 1 and res.success and improvement <= opts.tol:
            converged = True
            break
    params = _unpack(theta, d)
    msg = "" if converged else "Nelder-Mead restarts kept improving or hit the iteration cap"
    return FitResult(params, -best, iters, converged, Method.EXACT, tuple(trace), msg)


# --------------------------------------------------------------------------
# EM

def _m_step(counts, cell_means, cell_second, n):
    """Means first, then second moments about the new mean.

    ``cell_second`` holds ``E[(X - m_c)(X - m_c)^T | cell]`` (cell covariance).
    """
    new_mean = counts @ cell_means / n
    dev = cell_means - new_mean
    spread = np.einsum("c,cij->ij", counts, cell_second) + (dev * counts[:, None]).T @ dev
    cov = spread / n
    return GaussianParams(new_mean, 0.5 * (cov + cov.T))


def em_step(table: GroupedTable, current: GaussianParams) -> GaussianParams:
    """One EM update using exact truncated moments of every counted cell."""
    lower, upper, counts = table.cell_bounds(positive_only=True)
    try:
        _, means, covs = trunc_moments_batch(lower, upper, current)
    except EmptyCell as exc:
        raise DegenerateCell(str(exc)) from exc
    return _m_step(counts, means, covs, counts.sum())


def _converged_ll(prev, cur, tol):
    return abs(cur - prev) <= tol * (1.0 + abs(cur))


def fit_em(table: GroupedTable, init: GaussianParams, opts: FitOptions | None = None) -> FitResult:
    """Iterate :func:`em_step` until the relative log-likelihood change is at
    most ``opts.tol`` or ``opts.max_iter`` steps have run."""
    opts = opts or FitOptions()
    params = init
    ll = grouped_loglik(table, params)
    trace = [TraceEntry(0, ll, params)] if opts.record_trace else []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        params = em_step(table, params)
        new_ll = grouped_loglik(table, params)
        if opts.record_trace:
            trace.append(TraceEntry(it, new_ll, params))
        done = _converged_ll(ll, new_ll, opts.tol)
        ll = new_ll
        if done:
            converged = True
            break
    msg = "" if converged else f"no convergence after {opts.max_iter} EM iterations"
    return FitResult(params, ll, it, converged, Method.EM, tuple(trace), msg)


# --------------------------------------------------------------------------
# MCEM

def _cell_indices(table: GroupedTable) -> np.ndarray:
    return np.flatnonzero(table.counts.ravel() > 0)


def mc_cell_moments(table: GroupedTable, params: GaussianParams, M: int, rng: RngState):
    """Monte-Carlo cell means and draws for every counted cell.

    Cell ``c`` (flat C-order index) uses stream ``rng.substream(c)``.

    Returns
    -------
    counts : ndarray ``(m,)``
    draws : ndarray ``(m, M, d)``
    """
    lower, upper, counts = table.cell_bounds(positive_only=True)
    streams = [rng.substream(int(c)) for c in _cell_indices(table)]
    if table.d == 1:
        u = np.stack([s.generator().random(M) for s in streams])  # (m, M)
        sd = math.sqrt(params.cov[0, 0])
        mu = params.mean[0]
        a = (lower[:, 0] - mu) / sd
        b = (upper[:, 0] - mu) / sd
        alpha = normal_interval_prob(a, b)
        if np.any(~(alpha > 1e-300)):
            raise DegenerateCell("a counted cell has zero probability under the model")
        draws = sample_trunc_1d_vec(lower[:, :1], upper[:, :1], mu, sd, u)
        return counts, draws[..., None]
    try:
        draws = sample_trunc_nd_cells(lower, upper, params, M, streams)
    except EmptyCell as exc:
        raise DegenerateCell(str(exc)) from exc
    return counts, draws


def mcem_step(table: GroupedTable, current: GaussianParams, M: int, rng: RngState) -> GaussianParams:
    """One Monte-Carlo EM update with ``M`` truncated draws per counted cell."""
    counts, draws = mc_cell_moments(table, current, int(M), rng)
    means = draws.mean(axis=1)
    dev = draws - means[:, None, :]
    covs = np.einsum("cmi,cmj->cij", dev, dev) / draws.shape[1]
    return _m_step(counts, means, covs, counts.sum())


def _param_vector(p: GaussianParams) -> np.ndarray:
    return np.array(list(p.summary().values()))


def _rel_change(old: GaussianParams, new: GaussianParams) -> float:
    a, b = _param_vector(old), _param_vector(new)
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 1e-2)))


def _average(acc_mean, acc_cov, k):
    return GaussianParams(acc_mean / k, acc_cov / k)


def fit_mcem(table: GroupedTable, init: GaussianParams, opts: FitOptions | None = None) -> FitResult:
    """Iterate :func:`mcem_step` with a fixed number of draws per cell.

    The raw iterates are monitored with the largest relative change of the
    reported parameters (means, variances, correlations) averaged over the
    last three iterations.  If that falls below 1e-4 the fit stops.  Once it
    stops shrinking instead (the Monte-Carlo noise floor), later iterates are
    averaged and the same windowed rule is applied to the running average,
    which is what gets reported.  The returned log-likelihood is the exact
    grouped log-likelihood at the reported parameters.
    """
    opts = opts or FitOptions()
    M = opts.samples_for(table.d)
    root = RngState(opts.seed)
    params = init
    reported = init
    raw_window = deque(maxlen=MCEM_WINDOW)
    raw_history = []
    avg_window = deque(maxlen=MCEM_WINDOW)
    averaging_from = None
    acc_mean = acc_cov = None
    k = 0
    trace = []
    if opts.record_trace:
        trace.append(TraceEntry(0, grouped_loglik(table, params), params))
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        new = mcem_step(table, params, M, root.substream(it))
        change = _rel_change(params, new)
        params = new
        if opts.record_trace:
            trace.append(TraceEntry(it, grouped_loglik(table, params), params))
        if averaging_from is None:
            reported = params
            raw_window.append(change)
            if len(raw_window) < MCEM_WINDOW:
                continue
            rbar = float(np.mean(raw_window))
            raw_history.append(rbar)
            if rbar < MCEM_REL_TOL:
                converged = True
                break
            if len(raw_history) > MCEM_WINDOW and rbar >= raw_history[-1 - MCEM_WINDOW]:
                averaging_from = it
                acc_mean, acc_cov, k = params.mean.copy(), params.cov.copy(), 1
            continue
        acc_mean = acc_mean + params.mean
        acc_cov = acc_cov + params.cov
        k += 1
        avg = _average(acc_mean, acc_cov, k)
        avg_window.append(_rel_change(reported, avg))
        reported = avg
        if len(avg_window) == MCEM_WINDOW and float(np.mean(avg_window)) < MCEM_REL_TOL:
            converged = True
            break
    ll = grouped_loglik(table, reported)
    if converged:
        msg = "" if averaging_from is None else f"averaged iterates {averaging_from}..{it}"
    else:
        msg = f"no convergence after {opts.max_iter} MCEM iterations"
    return FitResult(reported, ll, it, converged, Method.MCEM, tuple(trace), msg)


_FITTERS = {Method.EXACT: fit_exact_mle, Method.EM: fit_em, Method.MCEM: fit_mcem}


def fit(table: GroupedTable, method="em", init: GaussianParams | None = None,
        opts: FitOptions | None = None) -> FitResult:
    """Dispatch to one of the three engines; ``init`` defaults to
    :func:`moment_init`."""
    method = Method(method)
    init = moment_init(table) if init is None else init
    return _FITTERS[method](table, init, opts or FitOptions())
