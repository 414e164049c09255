"""Marginal false discovery rate bounds along a fitted path.

For a noise feature j the statistic ``(u_j + v_j b_j) / sqrt(v_j)`` is
approximately standard normal, and feature j is selected exactly when
``|u_j + v_j b_j| / n > lambda``.  Summing the two-sided tail probability
over all penalized features bounds the expected number of marginal false
discoveries at each lambda.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


def normal_cdf(z):
    """Standard normal CDF, accurate in both tails."""
    return ndtr(z)


def expected_false_discoveries(v_hat, n, lambda_effective):
    """``sum_j 2 Phi(-n lambda / sqrt(v_j))`` over the given features.

    Parameters
    ----------
    v_hat : array_like
        Score variances ``x_j' W x_j`` of the penalized features.
    n : int
    lambda_effective : float
        lambda (lambda_1 for the elastic net).
    """
    v = np.asarray(v_hat, dtype=float)
    bad = np.flatnonzero(~(v > 0))
    if bad.size:
        raise ValueError(f"v_hat must be positive; feature {bad[0]} has {v[bad[0]]!r}")
    if lambda_effective < 0:
        raise ValueError("lambda must be nonnegative")
    return float(2.0 * normal_cdf(-n * lambda_effective / np.sqrt(v)).sum())


@dataclass(frozen=True)
class MfdrTable:
    """Per-lambda expected false discoveries (EF), selections (S) and mFDR.

    ``mfdr`` is NaN where it is undefined (nothing selected but EF > 0).
    """

    lambdas: np.ndarray
    expected_false_discoveries: np.ndarray
    selected_count: np.ndarray
    mfdr: np.ndarray

    def __len__(self):
        return self.lambdas.shape[0]

    def rows(self):
        for k in range(len(self)):
            m = self.mfdr[k]
            yield (float(self.lambdas[k]), float(self.expected_false_discoveries[k]),
                   int(self.selected_count[k]), None if np.isnan(m) else float(m))


def mfdr_ratio(ef, s):
    ef = np.asarray(ef, dtype=float)
    s = np.asarray(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.minimum(ef / s, 1.0)
    ratio = np.where(s > 0, ratio, np.where(ef == 0, 0.0, np.nan))
    return ratio


def mfdr_path(path, n=None, spec=None):
    """Expected false discoveries and mFDR at every lambda of ``path``.

    Only penalized, non-constant features count, both in the sum over
    features and in the selected-set size.  For gaussian fits the score
    variance is ``sigma^2 x_j'x_j`` with ``sigma^2`` the path's residual
    variance estimate.
    """
    n = path.n if n is None else n
    sel = path.selectable
    ef = np.empty(path.n_lambda)
    for k in range(path.n_lambda):
        disp = path.dispersion[k]
        if not np.isfinite(disp) or disp <= 0:
            ef[k] = np.nan
            continue
        ef[k] = expected_false_discoveries(path.v_hat[k, sel] * disp, n, path.lambdas[k])
    s = path.selected_count
    return MfdrTable(path.lambdas.copy(), ef, s, mfdr_ratio(ef, s))
