"""
Standard errors and 95% intervals for the mean of a grouped-data fit.

Covariance parameters are held at their fitted values and only the mean is
treated as unknown.  Each cell contributes the score

    s_c = Sigma^{-1} (E[X | X in cell] - mu),

and the empirical information is ``sum_c n_c s_c s_c^T - n sbar sbar^T`` with
``sbar = sum_c n_c s_c / n``.  The Monte-Carlo variant replaces each
conditional mean with the average of fresh truncated draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCell, EmptyCell, SingularInformation
from .gaussian import GaussianParams
from .grouped import GroupedTable, Rectangle
from .truncated import trunc_moments_batch

__all__ = [
    "MeanInference",
    "mean_score",
    "scores_from_means",
    "information_from_scores",
    "empirical_info_em",
    "empirical_info_mcem",
]

Z95 = 1.959963984540054
PIVOT_RATIO = 1e-12


@dataclass(frozen=True)
class MeanInference:
    """Standard errors, interval bounds and the information they come from."""

    mean: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    info: np.ndarray

    def as_dict(self) -> dict:
        return {
            "se": self.se.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
        }


def scores_from_means(cond_means, params: GaussianParams) -> np.ndarray:
    """Rows ``Sigma^{-1} (m_c - mu)`` for conditional means ``m_c`` (shape ``(m, d)``)."""
    dev = np.atleast_2d(np.asarray(cond_means, dtype=float)) - params.mean
    return np.linalg.solve(params.cov, dev.T).T


def mean_score(cell: Rectangle, params: GaussianParams) -> np.ndarray:
    """Score of the mean for a single cell.

    Raises
    ------
    EmptyCell
        If the cell carries (numerically) no probability.
    """
    _, m, _ = trunc_moments_batch(cell.lower[None], cell.upper[None], params)
    return scores_from_means(m, params)[0]


def information_from_scores(scores, counts) -> np.ndarray:
    """Empirical information ``sum n s s^T - n sbar sbar^T``."""
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    w = np.asarray(counts, dtype=float)
    n = w.sum()
    sbar = w @ s / n
    info = np.einsum("c,ci,cj->ij", w, s, s) - n * np.outer(sbar, sbar)
    return 0.5 * (info + info.T)


def _invert(info: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation("information matrix is not positive definite") from exc
    piv = np.diag(chol) ** 2
    if piv.min() < PIVOT_RATIO * piv.max():
        raise SingularInformation(
            f"information matrix is near singular (pivot ratio {piv.min() / piv.max():.3g})"
        )
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def _package(info: np.ndarray, params: GaussianParams) -> MeanInference:
    se = np.sqrt(np.diag(_invert(info)))
    mu = params.mean.copy()
    return MeanInference(mu, se, mu - Z95 * se, mu + Z95 * se, info)


def _check_cells(table: GroupedTable):
    occupied = int(np.count_nonzero(table.counts))
    if occupied < table.d + 1:
        raise SingularInformation(
            f"need at least {table.d + 1} occupied cells, found {occupied}"
        )


def empirical_info_em(table: GroupedTable, params: GaussianParams) -> MeanInference:
    """Analytic empirical information at a (converged EM) fit.

    Raises
    ------
    SingularInformation
        Too few occupied cells, or an information matrix that is not
        numerically positive definite.
    """
    _check_cells(table)
    lower, upper, counts = table.cell_bounds(positive_only=True)
    try:
        _, means, _ = trunc_moments_batch(lower, upper, params)
    except EmptyCell as exc:
        raise DegenerateCell(str(exc)) from exc
    info = information_from_scores(scores_from_means(means, params), counts)
    return _package(info, params)


def empirical_info_mcem(table: GroupedTable, params: GaussianParams, M: int, rng) -> MeanInference:
    """Monte-Carlo empirical information using ``M`` fresh draws per cell.

    ``rng`` is an :class:`~groupednormal.sampling.RngState`; cell ``c`` uses
    its substream ``c``, so the result is reproducible for a fixed seed.
    """
    from .estimators import mc_cell_moments

    _check_cells(table)
    counts, draws = mc_cell_moments(table, params, int(M), rng)
    info = information_from_scores(scores_from_means(draws.mean(axis=1), params), counts)
    return _package(info, params)
