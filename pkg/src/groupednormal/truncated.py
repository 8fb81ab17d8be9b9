"""
First and second moments of normal distributions truncated to intervals and
rectangles.

The univariate helpers use the closed forms in terms of ``phi``/``Phi`` of
the standardised limits.  The multivariate routine follows the
moment-generating-function derivation of Manjunath & Wilhelm (2021): every
moment is a combination of one- and two-dimensional "boundary densities"

    F_k(x)      = f_k(x)      * P(rest in cell | X_k = x)          / alpha
    F_kq(x, y)  = f_kq(x, y)  * P(rest in cell | X_k = x, X_q = y) / alpha

where the conditional probabilities are lower-dimensional rectangle
probabilities from :mod:`groupednormal.gaussian`.  Infinite limits contribute
zero.  All routines work in batches of cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import EmptyCell
from .gaussian import (
    DEFAULT_TOL_QMC,
    GaussianParams,
    normal_interval_prob,
    rect_prob_batch,
    std_normal_pdf,
)

__all__ = [
    "TruncMoments",
    "trunc_mean_1d",
    "trunc_second_central_1d",
    "trunc_var_1d",
    "trunc_moments_nd",
    "trunc_moments_batch",
]

MIN_ALPHA_1D = 1e-300
MIN_ALPHA_ND = 1e-12


@dataclass(frozen=True, eq=False)
class TruncMoments:
    """Moments of ``X | X in rect``.

    ``cov`` is computed in centred coordinates; ``second`` (the raw second
    moment) is derived from it.
    """

    alpha: float
    mean: np.ndarray
    cov: np.ndarray

    @property
    def second(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)


def _standardise(lo, hi, mu, sigma):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = (np.asarray(lo, dtype=float) - mu) / sigma
    b = (np.asarray(hi, dtype=float) - mu) / sigma
    z = normal_interval_prob(a, b)
    return a, b, z


def _pdf_or_zero(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.isfinite(x), std_normal_pdf(np.where(np.isfinite(x), x, 0.0)), 0.0)


def _xpdf_or_zero(x):
    x = np.asarray(x, dtype=float)
    fin = np.isfinite(x)
    xs = np.where(fin, x, 0.0)
    return np.where(fin, xs * std_normal_pdf(xs), 0.0)


def _interval(rect):
    if rect.d != 1:
        raise ValueError("expected a one-dimensional rectangle")
    return rect.lower[0], rect.upper[0]


def trunc_mean_1d(rect, mu: float, sigma: float) -> float:
    """``E[X | lo <= X < hi]`` for ``X ~ N(mu, sigma^2)``."""
    lo, hi = _interval(rect)
    a, b, z = _standardise(lo, hi, mu, sigma)
    if not z > MIN_ALPHA_1D:
        raise EmptyCell(f"interval [{lo}, {hi}) has probability {z:.3g}")
    m = mu - sigma * (_pdf_or_zero(b) - _pdf_or_zero(a)) / z
    # rounding can push deep-tail results a hair outside the interval
    return float(np.clip(m, lo, hi))


def trunc_second_central_1d(rect, mu: float, sigma: float, center: float) -> float:
    """``E[(X - center)^2 | lo <= X < hi]`` for ``X ~ N(mu, sigma^2)``.

    Expanded about the untruncated mean: a truncated-variance term, the
    squared offset of ``center`` and the cross term.
    """
    lo, hi = _interval(rect)
    a, b, z = _standardise(lo, hi, mu, sigma)
    if not z > MIN_ALPHA_1D:
        raise EmptyCell(f"interval [{lo}, {hi}) has probability {z:.3g}")
    dphi = _pdf_or_zero(b) - _pdf_or_zero(a)
    dxphi = _xpdf_or_zero(b) - _xpdf_or_zero(a)
    off = center - mu
    val = sigma * sigma * (1.0 - dxphi / z) + off * off + 2.0 * sigma * off * dphi / z
    return float(max(val, 0.0))


def trunc_var_1d(rect, mu: float, sigma: float) -> float:
    """Variance of the truncated distribution."""
    lo, hi = _interval(rect)
    a, b, z = _standardise(lo, hi, mu, sigma)
    if not z > MIN_ALPHA_1D:
        raise EmptyCell(f"interval [{lo}, {hi}) has probability {z:.3g}")
    r1 = (_pdf_or_zero(b) - _pdf_or_zero(a)) / z
    r2 = (_xpdf_or_zero(b) - _xpdf_or_zero(a)) / z
    return float(max(sigma * sigma * (1.0 - r2 - r1 * r1), 0.0))


def _cond_prob(lo, hi, cov, given_idx, given_vals, tol):
    """P(X_rest in [lo_rest, hi_rest) | X_given = given_vals) per cell.

    ``lo``/``hi`` are centred cell bounds ``(m, d)``; ``given_vals`` is
    ``(m, len(given_idx))`` with finite entries.
    """
    d = cov.shape[0]
    rest = [j for j in range(d) if j not in given_idx]
    m = lo.shape[0]
    if not rest:
        return np.ones(m)
    s_gg = cov[np.ix_(given_idx, given_idx)]
    s_rg = cov[np.ix_(rest, given_idx)]
    gain = np.linalg.solve(s_gg, s_rg.T).T  # (r, g)
    cmean = given_vals @ gain.T  # (m, r)
    ccov = cov[np.ix_(rest, rest)] - gain @ s_rg.T
    ccov = 0.5 * (ccov + ccov.T)
    cparams = GaussianParams(np.zeros(len(rest)), ccov)
    return rect_prob_batch(lo[:, rest] - cmean, hi[:, rest] - cmean, cparams, tol=tol)


def _marginal_density(vals, cov, idx):
    """Zero-mean normal density of ``X_idx`` at rows of ``vals``."""
    s = cov[np.ix_(idx, idx)]
    chol = np.linalg.cholesky(s)
    z = np.linalg.solve(chol, vals.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return np.exp(-0.5 * (len(idx) * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0)))


def trunc_moments_batch(lower, upper, params: GaussianParams, tol: float | None = None,
                        min_alpha: float = MIN_ALPHA_ND):
    """Truncated moments for ``m`` rectangles at once.

    Parameters
    ----------
    lower, upper : array_like, shape ``(m, d)``
    params : GaussianParams
    tol : float, optional
        QMC tolerance for probabilities of dimension >= 3.

    Returns
    -------
    alpha : ndarray ``(m,)``
    mean : ndarray ``(m, d)``
    cov : ndarray ``(m, d, d)``

    Raises
    ------
    EmptyCell
        If any rectangle has probability below ``min_alpha``.
    """
    tol = DEFAULT_TOL_QMC if tol is None else tol
    mu = params.mean
    S = params.cov
    d = params.d
    lo = np.atleast_2d(np.asarray(lower, dtype=float)) - mu
    hi = np.atleast_2d(np.asarray(upper, dtype=float)) - mu
    m = lo.shape[0]

    alpha = rect_prob_batch(lo, hi, GaussianParams(np.zeros(d), S), tol=tol)
    bad = ~(alpha > min_alpha)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EmptyCell(
            f"cell {lo[i] + mu} .. {hi[i] + mu} has probability {alpha[i]:.3g} under {params}"
        )

    # F_k at the lower/upper limit of every axis, zero at infinite limits
    F = {}
    for k in range(d):
        for side, lim in (("a", lo[:, k]), ("b", hi[:, k])):
            val = np.zeros(m)
            fin = np.isfinite(lim)
            if fin.any():
                x = lim[fin][:, None]
                dens = _marginal_density(x, S, [k])
                cp = _cond_prob(lo[fin], hi[fin], S, [k], x, tol)
                val[fin] = dens * cp / alpha[fin]
            F[k, side] = val

    # first moment, centred coordinates
    diff = np.stack([F[k, "a"] - F[k, "b"] for k in range(d)], axis=1)  # (m, d)
    e1 = diff @ S.T  # E[X_i] = sum_k S_ik (F_k(a_k) - F_k(b_k))

    # second moment
    aF = np.stack(
        [np.where(np.isfinite(lo[:, k]), np.nan_to_num(lo[:, k]) * F[k, "a"], 0.0)
         - np.where(np.isfinite(hi[:, k]), np.nan_to_num(hi[:, k]) * F[k, "b"], 0.0)
         for k in range(d)],
        axis=1,
    )  # (m, d): a_k F_k(a_k) - b_k F_k(b_k)
    diag = np.diag(S)
    # sum_k S_ik S_jk (.)_k / S_kk
    e2 = S[None] + np.einsum("ik,jk,mk->mij", S, S, aF / diag)

    if d >= 2:
        Fkq = {}
        for k, q in permutations(range(d), 2):
            for sk, xk in (("a", lo[:, k]), ("b", hi[:, k])):
                for sq, xq in (("a", lo[:, q]), ("b", hi[:, q])):
                    val = np.zeros(m)
                    fin = np.isfinite(xk) & np.isfinite(xq)
                    if fin.any():
                        pts = np.stack([xk[fin], xq[fin]], axis=1)
                        dens = _marginal_density(pts, S, [k, q])
                        cp = _cond_prob(lo[fin], hi[fin], S, [k, q], pts, tol)
                        val[fin] = dens * cp / alpha[fin]
                    Fkq[k, q, sk + sq] = val
        for k, q in permutations(range(d), 2):
            box = (Fkq[k, q, "aa"] - Fkq[k, q, "ab"]) - (Fkq[k, q, "ba"] - Fkq[k, q, "bb"])
            # coefficient (S_jq - S_kq S_jk / S_kk), indexed by j
            coef = S[:, q] - S[k, q] * S[:, k] / S[k, k]
            e2 += np.einsum("i,j,m->mij", S[:, k], coef, box)

    cov = e2 - np.einsum("mi,mj->mij", e1, e1)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return alpha, e1 + mu, cov


def trunc_moments_nd(rect, params: GaussianParams, tol: float | None = None) -> TruncMoments:
    """Mean and second moment of ``X ~ N(params)`` conditioned on ``X in rect``."""
    alpha, mean, cov = trunc_moments_batch(rect.lower[None], rect.upper[None], params, tol=tol)
    return TruncMoments(float(alpha[0]), mean[0], cov[0])
