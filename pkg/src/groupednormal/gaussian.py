"""
Normal-distribution primitives.

Scalar standard-normal functions, the :class:`GaussianParams` container and
rectangle probabilities for any dimension:

* ``d == 1``: difference of normal cdfs, evaluated on the tail that keeps
  full relative precision;
* ``d == 2``: Genz's refinement of the Drezner-Wesolowsky algorithm
  (Gauss-Legendre quadrature over the correlation), accurate to ~1e-15;
* ``d >= 3``: separation-of-variables integrand (Genz 1992) integrated with
  randomly shifted rank-1 lattice rules.  The shifts come from a fixed seed,
  so results are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError, NonPositiveDefinite, ToleranceNotReached

__all__ = [
    "GaussianParams",
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_quantile",
    "normal_interval_prob",
    "bvn_upper",
    "rect_prob",
    "rect_prob_batch",
    "rect_prob_qmc",
    "mvn_logpdf",
    "mvn_density",
]

LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_TOL_2D = 1e-10
DEFAULT_TOL_QMC = 1e-6
_QMC_SEED = 0x5EED_6A55
_QMC_SHIFTS = 12
_QMC_MAX_POINTS = 2**22


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and covariance matrix of a d-variate normal.

    ``cov`` must be symmetric (1e-12 relative) and positive definite; it is
    symmetrised exactly on construction.
    """

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        d = mean.size
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} are inconsistent")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonPositiveDefinite("parameters must be finite")
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise NonPositiveDefinite("covariance matrix is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NonPositiveDefinite("covariance matrix is not positive definite") from None
        if not np.all(np.diag(chol) > 0):
            raise NonPositiveDefinite("covariance matrix is not positive definite")
        for a in (mean, cov, chol):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def univariate(cls, mu: float, var: float) -> "GaussianParams":
        return cls(np.array([mu]), np.array([[var]]))

    @classmethod
    def bivariate(cls, mu1, mu2, var1, var2, rho) -> "GaussianParams":
        c = rho * math.sqrt(var1 * var2)
        return cls(np.array([mu1, mu2]), np.array([[var1, c], [c, var2]]))

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of ``cov``."""
        return self._chol

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @cached_property
    def corr(self) -> np.ndarray:
        s = self.sd
        return self.cov / np.outer(s, s)

    @cached_property
    def precision(self) -> np.ndarray:
        inv_l = np.linalg.inv(self._chol)
        return inv_l.T @ inv_l

    def shifted(self, c) -> "GaussianParams":
        return GaussianParams(self.mean + c, self.cov)

    def summary(self) -> dict[str, float]:
        """Reported parameters: means, variances and pairwise correlations.

        Names are ``mean_j``, ``var_j`` and ``rho_ij`` (1-based indices).
        """
        out = {}
        for j in range(self.d):
            out[f"mean_{j + 1}"] = float(self.mean[j])
        for j in range(self.d):
            out[f"var_{j + 1}"] = float(self.cov[j, j])
        for i in range(self.d):
            for j in range(i + 1, self.d):
                out[f"rho_{i + 1}{j + 1}"] = float(self.corr[i, j])
        return out

    def __eq__(self, other):
        return (
            isinstance(other, GaussianParams)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )

    def __repr__(self):
        return f"GaussianParams(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(x):
    """Standard normal cdf; accepts ``+-inf``."""
    out = ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_quantile(p):
    """Inverse standard normal cdf, defined on the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("quantile needs 0 < p < 1")
    out = ndtri(p)
    return float(out) if out.ndim == 0 else out


def normal_interval_prob(a, b):
    """``Phi(b) - Phi(a)`` for standardised limits, computed on the short tail.

    When both limits are positive the difference is taken as
    ``Phi(-a) - Phi(-b)`` so far upper-tail intervals keep relative accuracy.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    out = np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


# Gauss-Legendre nodes/weights on [-1, 1], positive half only (Genz's tables).
_GL = {
    6: (
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    ),
    12: (
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    ),
    20: (
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
    ),
}


def _gl_nodes(r: float):
    ar = abs(r)
    n = 6 if ar < 0.3 else 12 if ar < 0.75 else 20
    x, w = _GL[n]
    return np.concatenate([1.0 - x, 1.0 + x]), np.concatenate([w, w])


def _bvnu_finite(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """P(X > h, Y > k) for finite h, k (standard margins, correlation r)."""
    tp = 2.0 * math.pi
    x, w = _gl_nodes(r)
    hk = h * k
    if abs(r) < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        sn = np.sin(asr * x)
        terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
        bvn = terms @ w * asr / tp + ndtr(-h) * ndtr(-k)
        return np.clip(bvn, 0.0, 1.0)

    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros_like(h)
    if abs(r) < 1:
        as_ = 1.0 - r * r
        a = math.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        dd = (12.0 - hk) / 80.0
        asr = -(bs / as_ + hk) / 2.0
        with np.errstate(over="ignore", under="ignore"):
            bvn = np.where(
                asr > -100,
                a * np.exp(asr) * (1 - c * (bs - as_) * (1 - dd * bs) / 3 + c * dd * as_ * as_),
                0.0,
            )
            b = np.sqrt(bs)
            sp = math.sqrt(tp) * ndtr(-b / a)
            bvn = np.where(
                hk > -100,
                bvn - np.exp(-hk / 2) * sp * b * (1 - c * bs * (1 - dd * bs) / 3),
                bvn,
            )
            a2 = a / 2.0
            xs = (a2 * x) ** 2  # (n,)
            asr2 = -(bs[:, None] / xs + hk[:, None]) / 2.0  # (m, n)
            ok = asr2 > -100
            sp2 = 1 + c[:, None] * xs * (1 + 5 * dd[:, None] * xs)
            rs = np.sqrt(1 - xs)
            ep = np.exp(-(hk[:, None] / 2) * xs / (1 + rs) ** 2) / rs
            contrib = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (sp2 - ep), 0.0)
        bvn = (a2 * (contrib @ w) - bvn) / tp
    if r > 0:
        bvn = bvn + ndtr(-np.maximum(h, k))
    else:
        neg = h >= k
        lo = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
        bvn = np.where(neg, -bvn, lo - bvn)
    return np.clip(bvn, 0.0, 1.0)


def bvn_upper(h, k, r: float):
    """Upper orthant probability ``P(X > h, Y > k)`` of a standard bivariate
    normal with correlation ``r``.  ``h`` and ``k`` broadcast and may be
    infinite."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = h.shape
    h = h.ravel().copy()
    k = k.ravel().copy()
    out = np.empty(h.size)
    fin = np.isfinite(h) & np.isfinite(k)
    # infinite limits reduce to one-dimensional tails
    inf_any = (h == np.inf) | (k == np.inf)
    out[inf_any] = 0.0
    m = ~fin & ~inf_any
    hm, km = h[m], k[m]
    out[m] = np.where(
        hm == -np.inf, np.where(km == -np.inf, 1.0, ndtr(-km)), ndtr(-hm)
    )
    if fin.any():
        if r == 0:
            out[fin] = ndtr(-h[fin]) * ndtr(-k[fin])
        else:
            out[fin] = _bvnu_finite(h[fin], k[fin], float(r))
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def _rect_prob_2d(lower, upper, mean, cov):
    """Vectorised rectangle probabilities, lower/upper shaped ``(m, 2)``.

    Each axis whose interval lies below zero is reflected first, so the four
    orthant terms stay small and tail cells keep relative accuracy.
    """
    s = np.sqrt(np.diag(cov))
    r = float(np.clip(cov[0, 1] / (s[0] * s[1]), -1.0, 1.0))
    lo = (np.asarray(lower, dtype=float) - mean) / s
    hi = (np.asarray(upper, dtype=float) - mean) / s
    flip = hi <= -lo  # interval centre below zero
    lo, hi = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    rr = np.where(flip[:, 0] ^ flip[:, 1], -r, r)
    p = np.empty(lo.shape[0])
    for rv in np.unique(rr):
        m = rr == rv
        p[m] = (
            bvn_upper(lo[m, 0], lo[m, 1], rv)
            - bvn_upper(hi[m, 0], lo[m, 1], rv)
            - bvn_upper(lo[m, 0], hi[m, 1], rv)
            + bvn_upper(hi[m, 0], hi[m, 1], rv)
        )
    return np.clip(p, 0.0, 1.0)


def _richtmyer(ndim: int) -> np.ndarray:
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71]
    if ndim > len(primes):
        extra = []
        c = primes[-1] + 2
        while len(primes) + len(extra) < ndim:
            if all(c % p for p in primes + extra):
                extra.append(c)
            c += 2
        primes = primes + extra
    return np.sqrt(np.array(primes[:ndim], dtype=float)) % 1.0


def _sov_integrand(w, lo, hi, chol):
    """Genz separation-of-variables integrand at points ``w`` of shape
    ``(N, d - 1)`` for the zero-mean problem ``lo <= L z < hi``."""
    d = chol.shape[0]
    n = w.shape[0]
    y = np.empty((n, d - 1))
    f = np.ones(n)
    for i in range(d):
        shift = y[:, :i] @ chol[i, :i] if i else np.zeros(n)
        a = ndtr((lo[i] - shift) / chol[i, i])
        b = ndtr((hi[i] - shift) / chol[i, i])
        span = np.maximum(b - a, 0.0)
        f = f * span
        if i < d - 1:
            u = np.clip(a + w[:, i] * span, 1e-300, 1 - 1e-16)
            y[:, i] = ndtri(u)
    return f


def _prioritise(lo, hi, cov):
    """Genz variable reordering: integrate tightest limits first."""
    d = cov.shape[0]
    order = list(range(d))
    cov = cov.copy()
    lo = lo.copy()
    hi = hi.copy()
    chol = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best, best_p = i, np.inf
        for j in range(i, d):
            s = cov[j, j] - chol[j, :i] @ chol[j, :i]
            if s <= 0:
                continue
            s = math.sqrt(s)
            m = chol[j, :i] @ y[:i]
            p = normal_interval_prob((lo[j] - m) / s, (hi[j] - m) / s)
            if p < best_p:
                best, best_p = j, p
        if best != i:
            for arr in (lo, hi):
                arr[[i, best]] = arr[[best, i]]
            cov[[i, best]] = cov[[best, i]]
            cov[:, [i, best]] = cov[:, [best, i]]
            chol[[i, best]] = chol[[best, i]]
            order[i], order[best] = order[best], order[i]
        s2 = cov[i, i] - chol[i, :i] @ chol[i, :i]
        if s2 <= 0:
            raise NonPositiveDefinite("covariance matrix is not positive definite")
        chol[i, i] = math.sqrt(s2)
        for j in range(i + 1, d):
            chol[j, i] = (cov[j, i] - chol[j, :i] @ chol[i, :i]) / chol[i, i]
        m = chol[i, :i] @ y[:i]
        a = (lo[i] - m) / chol[i, i]
        b = (hi[i] - m) / chol[i, i]
        pa, pb = ndtr(a), ndtr(b)
        if pb - pa > 1e-300:
            # expected value of the truncated standard normal on (a, b)
            phia = 0.0 if not np.isfinite(a) else std_normal_pdf(a)
            phib = 0.0 if not np.isfinite(b) else std_normal_pdf(b)
            y[i] = (phia - phib) / (pb - pa)
        else:
            y[i] = a if np.isfinite(a) else b
    return lo, hi, chol


def rect_prob_qmc(lower, upper, mean, cov, tol=DEFAULT_TOL_QMC, max_points=_QMC_MAX_POINTS):
    """Randomised lattice estimate of a d-dimensional rectangle probability.

    Returns
    -------
    prob : float
    error : float
        3.5 standard errors of the mean over the random shifts.
    """
    lo = np.asarray(lower, dtype=float) - mean
    hi = np.asarray(upper, dtype=float) - mean
    lo, hi, chol = _prioritise(lo, hi, np.asarray(cov, dtype=float))
    d = chol.shape[0]
    if d == 1:
        return float(normal_interval_prob(lo[0] / chol[0, 0], hi[0] / chol[0, 0])), 0.0
    gen = _richtmyer(d - 1)
    rng = np.random.default_rng(_QMC_SEED)
    n_pts = 1009
    used = 0
    prob, err = 0.0, np.inf
    while True:
        shifts = rng.random((_QMC_SHIFTS, d - 1))
        base = np.outer(np.arange(1, n_pts + 1), gen) % 1.0
        vals = np.empty(_QMC_SHIFTS)
        for s in range(_QMC_SHIFTS):
            pts = np.abs(2.0 * ((base + shifts[s]) % 1.0) - 1.0)  # baker's transform
            vals[s] = _sov_integrand(pts, lo, hi, chol).mean()
        used += n_pts * _QMC_SHIFTS
        prob = float(vals.mean())
        err = float(3.5 * vals.std(ddof=1) / math.sqrt(_QMC_SHIFTS))
        if err <= tol or used >= max_points:
            break
        n_pts *= 2
    return min(max(prob, 0.0), 1.0), err


def _check_rect(lower, upper, d):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape[-1] != d or upper.shape[-1] != d:
        raise ValueError(f"rectangle dimension does not match d={d}")
    return lower, upper


def rect_prob(rect, params: GaussianParams, tol: float | None = None) -> float:
    """Probability that ``X ~ N(params)`` falls in ``rect``.

    ``tol`` is the absolute error target; it only matters for ``d >= 3``
    (default 1e-6), where :class:`ToleranceNotReached` is raised if the point
    budget runs out first.  The exception carries the best estimate.
    """
    lower, upper = _check_rect(rect.lower, rect.upper, params.d)
    if params.d == 1:
        s = math.sqrt(params.cov[0, 0])
        m = params.mean[0]
        return float(normal_interval_prob((lower[0] - m) / s, (upper[0] - m) / s))
    if params.d == 2:
        return float(_rect_prob_2d(lower[None], upper[None], params.mean, params.cov)[0])
    tol = DEFAULT_TOL_QMC if tol is None else tol
    p, err = rect_prob_qmc(lower, upper, params.mean, params.cov, tol=tol)
    if err > tol:
        raise ToleranceNotReached(
            f"QMC error {err:.2e} above tolerance {tol:.2e}", estimate=p, error=err
        )
    return p


def rect_prob_batch(lower, upper, params: GaussianParams, tol: float | None = None) -> np.ndarray:
    """Rectangle probabilities for many cells at once (``lower``, ``upper``
    shaped ``(m, d)``).  For ``d >= 3`` the QMC estimate is returned even if
    its error bound exceeds ``tol``."""
    lower, upper = _check_rect(lower, upper, params.d)
    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    if params.d == 1:
        s = math.sqrt(params.cov[0, 0])
        m = params.mean[0]
        return np.atleast_1d(normal_interval_prob((lower[:, 0] - m) / s, (upper[:, 0] - m) / s))
    if params.d == 2:
        return _rect_prob_2d(lower, upper, params.mean, params.cov)
    tol = DEFAULT_TOL_QMC if tol is None else tol
    return np.array(
        [rect_prob_qmc(lo, hi, params.mean, params.cov, tol=tol)[0] for lo, hi in zip(lower, upper)]
    )


def mvn_logpdf(x, params: GaussianParams):
    """Log density, via the Cholesky factor; ``x`` may be ``(d,)`` or ``(m, d)``."""
    x = np.asarray(x, dtype=float)
    z = np.linalg.solve(params.chol, (x - params.mean).T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(params.chol)))
    out = -0.5 * (params.d * LOG_2PI + logdet + maha)
    return float(out) if out.ndim == 0 else out


def mvn_density(x, params: GaussianParams):
    out = np.exp(mvn_logpdf(x, params))
    return float(out) if np.ndim(out) == 0 else out
