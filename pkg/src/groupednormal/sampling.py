"""
Seedable samplers for interval- and rectangle-truncated normals.

* ``d == 1``: inverse cdf.  Intervals in the upper tail are reflected so the
  quantile is always evaluated on the lower tail, where ``Phi`` keeps full
  relative precision.
* ``d >= 2``: exact rejection sampling when the estimated acceptance rate is
  at least 1%, otherwise coordinate-wise Gibbs sampling with burn-in 100 and
  thinning 5, run as many parallel chains.  The rejection proposal draws the
  coordinate with the tightest interval from its truncated marginal and the
  rest from the normal conditional on it, so its acceptance rate is
  ``P(cell) / P(slab)`` rather than ``P(cell)``.

Random streams are Philox generators keyed by ``(seed, stream)``; child
streams for ``(iteration, cell)`` pairs are derived with
:meth:`RngState.substream`, so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import EmptyCell, MixingFailure
from .gaussian import GaussianParams, normal_interval_prob, rect_prob_batch

__all__ = [
    "RngState",
    "as_generator",
    "sample_trunc_1d",
    "sample_trunc_1d_vec",
    "sample_trunc_nd",
    "sample_trunc_nd_cells",
]

_MASK64 = (1 << 64) - 1
REJECTION_MIN_ACCEPT = 1e-2
GIBBS_BURN_IN = 100
GIBBS_THIN = 5
GIBBS_MAX_CHAINS = 256
MIXING_Z = 5.0


@dataclass(frozen=True)
class RngState:
    """Reproducible random stream identified by two unsigned 64-bit integers."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=[self.seed, self.stream])
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, *keys: int) -> "RngState":
        """Independent child stream for an arbitrary tuple of non-negative keys."""
        ss = np.random.SeedSequence(entropy=[self.seed, self.stream, *map(int, keys)])
        return RngState(self.seed, int(ss.generate_state(1, np.uint64)[0]))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngState(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot make a generator from {type(rng).__name__}")


def _inverse_cdf(a, b, u):
    """Standard normal draws restricted to ``[a, b)``, one per ``u``.

    ``a``, ``b`` and ``u`` broadcast together.
    """
    a, b, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, u)))
    flip = a > -b  # interval centre above zero: sample the mirror image
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    plo = ndtr(lo)
    phi = ndtr(hi)
    p = plo + u * (phi - plo)
    p = np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    z = ndtri(p)
    z = np.clip(z, lo, hi)
    z = np.where(flip, -z, z)
    # keep the upper bound exclusive
    return np.minimum(z, np.nextafter(b, -np.inf))


def sample_trunc_1d_vec(lo, hi, mu, sigma, u):
    """Vectorised inverse-cdf draws; ``mu`` and ``sigma`` broadcast with ``u``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = _inverse_cdf((lo - mu) / sigma, (hi - mu) / sigma, u)
    x = mu + sigma * z
    x = np.maximum(x, lo)
    return np.minimum(x, np.nextafter(hi, -np.inf))


def sample_trunc_1d(rect, mu: float, sigma: float, count: int, rng) -> np.ndarray:
    """``count`` i.i.d. draws of ``N(mu, sigma^2)`` restricted to ``[lo, hi)``."""
    if rect.d != 1:
        raise ValueError("expected a one-dimensional rectangle")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    lo, hi = float(rect.lower[0]), float(rect.upper[0])
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    alpha = ndtr(-a) - ndtr(-b) if a > 0 else ndtr(b) - ndtr(a)
    if not alpha > 1e-300:
        raise EmptyCell(f"interval [{lo}, {hi}) has probability {alpha:.3g}")
    u = as_generator(rng).random(int(count))
    return sample_trunc_1d_vec(lo, hi, mu, sigma, u)


def _slab(lo, hi, params):
    """Pick the coordinate whose own interval has the least mass.

    Returns the index, that interval's probability, and the acceptance rate
    ``alpha / p_slab`` of the slab proposal for each rectangle.
    """
    a = (lo - params.mean) / params.sd
    b = (hi - params.mean) / params.sd
    p = normal_interval_prob(a, b)  # (c, d)
    j = np.argmin(p, axis=1)
    return j, p[np.arange(lo.shape[0]), j]


def _rejection(lo, hi, params, count, gen, j, accept):
    """Exact rejection sampling with a slab proposal.

    Coordinate ``j`` is drawn from its truncated marginal by inverse cdf, the
    others from the untruncated conditional given it; draws outside the
    rectangle are rejected.
    """
    d = params.d
    S = params.cov
    rest = [k for k in range(d) if k != j]
    gain = S[rest, j] / S[j, j]
    ccov = S[np.ix_(rest, rest)] - np.outer(gain, S[j, rest])
    cchol = np.linalg.cholesky(0.5 * (ccov + ccov.T))
    sd_j = math.sqrt(S[j, j])
    out = np.empty((0, d))
    while out.shape[0] < count:
        need = count - out.shape[0]
        batch = int(math.ceil(1.2 * need / max(accept, 1e-12))) + 16
        x = np.empty((batch, d))
        x[:, j] = sample_trunc_1d_vec(lo[j], hi[j], params.mean[j], sd_j, gen.random(batch))
        cm = params.mean[rest] + np.outer(x[:, j] - params.mean[j], gain)
        x[:, rest] = cm + gen.standard_normal((batch, d - 1)) @ cchol.T
        ok = np.all((x[:, rest] >= lo[rest]) & (x[:, rest] < hi[rest]), axis=1)
        out = np.vstack([out, x[ok]])
    return out[:count]


def _gibbs_start(lo, hi, params):
    """A point strictly inside every rectangle, ``(c, d)``."""
    mu = params.mean
    sd = params.sd
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    # mean of each coordinate's marginal truncated to its own interval
    pa = np.where(np.isfinite(a), np.exp(-0.5 * np.nan_to_num(a, posinf=0, neginf=0) ** 2), 0.0)
    pb = np.where(np.isfinite(b), np.exp(-0.5 * np.nan_to_num(b, posinf=0, neginf=0) ** 2), 0.0)
    z = np.where(a > -b, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        m = (pa - pb) / math.sqrt(2 * math.pi) / z
    x = mu + sd * np.where(np.isfinite(m), m, 0.0)
    mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), x)
    x = np.where(np.isfinite(m), x, mid)
    x = np.where(np.isfinite(lo), np.maximum(x, lo), x)
    x = np.where(np.isfinite(hi), np.minimum(x, np.nextafter(hi, -np.inf)), x)
    return x


def _gibbs_cells(lo, hi, params, count, gens):
    """Parallel-chain Gibbs sampler over ``c`` rectangles at once.

    Returns draws shaped ``(c, count, d)`` and raises :class:`MixingFailure`
    when a coordinate's mean drifts between the two halves of the run by
    more than five standard errors (chain-to-chain spread).
    """
    c, d = lo.shape
    chains = min(count, GIBBS_MAX_CHAINS)
    per_chain = int(math.ceil(count / chains))
    prec = params.precision
    mu = params.mean
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    x = np.repeat(_gibbs_start(lo, hi, params)[:, None, :], chains, axis=1)  # (c, K, d)
    total = GIBBS_BURN_IN + GIBBS_THIN * per_chain
    kept = np.empty((c, per_chain, chains, d))
    lo_b = lo[:, None, :]
    hi_b = hi[:, None, :]
    slot = 0
    for sweep in range(1, total + 1):
        u = np.stack([g.random((chains, d)) for g in gens])  # (c, K, d)
        for j in range(d):
            dev = x - mu
            dev[..., j] = 0.0
            cm = mu[j] - dev @ prec[j] / prec[j, j]
            x[..., j] = sample_trunc_1d_vec(lo_b[..., j], hi_b[..., j], cm, cond_sd[j], u[..., j])
        if sweep > GIBBS_BURN_IN and (sweep - GIBBS_BURN_IN) % GIBBS_THIN == 0:
            kept[:, slot] = x
            slot += 1

    if per_chain >= 2 and chains >= 2:
        half = per_chain // 2
        first = kept[:, :half].mean(axis=1)  # (c, K, d)
        second = kept[:, per_chain - half:].mean(axis=1)
        delta = second - first
        dm = delta.mean(axis=1)
        se = delta.std(axis=1, ddof=1) / math.sqrt(chains)
        scale = np.maximum(se, 1e-12 * (1 + np.abs(first.mean(axis=1))))
        drift = np.abs(dm) > MIXING_Z * scale
        if drift.any():
            i, j = map(int, np.argwhere(drift)[0])
            raise MixingFailure(
                f"Gibbs chain for cell {lo[i]}..{hi[i]} drifted on coordinate {j}: "
                f"{dm[i, j]:.3g} vs standard error {se[i, j]:.3g}"
            )
    draws = kept.transpose(0, 2, 1, 3).reshape(c, chains * per_chain, d)
    return draws[:, :count]


def sample_trunc_nd_cells(lower, upper, params: GaussianParams, count: int, rngs,
                          method: str = "auto", alpha=None):
    """Draw ``count`` samples for each of ``c`` rectangles.

    Parameters
    ----------
    lower, upper : ndarray ``(c, d)``
    rngs : sequence of RngState or Generator, one per rectangle
    method : {"auto", "rejection", "gibbs"}
    alpha : ndarray, optional
        Precomputed rectangle probabilities.

    Returns
    -------
    ndarray ``(c, count, d)``
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    c, d = lower.shape
    if len(rngs) != c:
        raise ValueError("need one random stream per rectangle")
    if alpha is None:
        alpha = rect_prob_batch(lower, upper, params)
    alpha = np.asarray(alpha, dtype=float)
    bad = ~(alpha > 1e-12)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EmptyCell(f"cell {lower[i]}..{upper[i]} has probability {alpha[i]:.3g}")
    gens = [as_generator(r) for r in rngs]
    out = np.empty((c, int(count), d))
    slab_j, p_slab = _slab(lower, upper, params)
    accept = np.minimum(alpha / np.maximum(p_slab, 1e-300), 1.0)
    if method == "auto":
        use_rej = accept >= REJECTION_MIN_ACCEPT
    elif method == "rejection":
        use_rej = np.ones(c, dtype=bool)
    elif method == "gibbs":
        use_rej = np.zeros(c, dtype=bool)
    else:
        raise ValueError(f"unknown method {method!r}")
    for i in np.flatnonzero(use_rej):
        out[i] = _rejection(lower[i], upper[i], params, int(count), gens[i],
                            int(slab_j[i]), accept[i])
    g = np.flatnonzero(~use_rej)
    if g.size:
        out[g] = _gibbs_cells(lower[g], upper[g], params, int(count), [gens[i] for i in g])
    return out


def sample_trunc_nd(rect, params: GaussianParams, count: int, rng, method: str = "auto") -> np.ndarray:
    """``count`` draws (rows) of ``N(params)`` restricted to ``rect``."""
    return sample_trunc_nd_cells(rect.lower[None], rect.upper[None], params, count, [rng],
                                 method=method)[0]
