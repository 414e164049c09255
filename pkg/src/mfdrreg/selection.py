"""Choosing lambda: k-fold cross-validation, the 1-SE rule and mFDR control."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import family as fam
from .data import DataError, Dataset
from .solver import SolverControls, fit_path, make_lambda_grid


@dataclass(frozen=True)
class CvResult:
    lambdas: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    fold_assignments: np.ndarray
    min_index: int
    one_se_index: int

    @property
    def min_lambda(self):
        return float(self.lambdas[self.min_index])

    @property
    def one_se_lambda(self):
        return float(self.lambdas[self.one_se_index])


def assign_folds(dataset: Dataset, folds, rng):
    """Fold labels (internal row order), stratified on y (binomial) or status (Cox)."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    n = dataset.n
    if folds > n:
        raise DataError(f"cannot split {n} observations into {folds} folds")
    if dataset.family == "binomial":
        strata = dataset.response.y
    elif dataset.family == "cox":
        strata = dataset.response.status
    else:
        strata = np.zeros(n)
    labels = np.empty(n, dtype=int)
    offset = 0
    for level in np.unique(strata):
        idx = np.flatnonzero(strata == level)
        needs_all = dataset.family == "binomial" or (dataset.family == "cox" and level == 1)
        if needs_all and idx.size < folds:
            what = "events" if dataset.family == "cox" else f"observations with y = {level:g}"
            raise DataError(f"only {idx.size} {what}; cannot stratify {folds} folds")
        idx = rng.permutation(idx)
        labels[idx] = (offset + np.arange(idx.size)) % folds
        offset = (offset + idx.size) % folds
    return labels


def _fold_deviance(dataset, train_rows, test_rows, path):
    """Summed held-out deviance of each path solution on ``test_rows``."""
    nlam = path.n_lambda
    out = np.empty(nlam)
    if dataset.family == "cox":
        # held-out partial likelihood: full-data minus training-data log partial likelihood
        full = dataset
        train = dataset.subset(train_rows)
        for k in range(nlam):
            l_full = -full.n * fam.cox_state(full, path.beta[k]).loss
            l_train = -train.n * fam.cox_state(train, path.beta[k]).loss
            out[k] = -2.0 * (l_full - l_train)
    else:
        test = dataset.subset(test_rows)
        for k in range(nlam):
            out[k] = test.n * fam.deviance(test, path.beta[k], path.intercept[k])
    return out


def cross_validate(dataset, spec=None, grid=None, folds=10, seed=None, controls=None, threads=1):
    """K-fold cross-validation error along a shared lambda grid.

    The grid is computed on the full data.  Folds are fitted independently
    (concurrently when ``threads > 1``); the result does not depend on
    ``threads``.  A fold whose path stops converging is truncated there and
    the error at the remaining lambdas is NaN.
    """
    controls = replace(SolverControls() if controls is None else controls, partial=True)
    rng = np.random.default_rng(seed)
    labels = assign_folds(dataset, folds, rng)
    if grid is None:
        grid = make_lambda_grid(dataset, spec)
    values = np.asarray(getattr(grid, "values", grid), dtype=float)

    def run(f):
        test_rows = np.flatnonzero(labels == f)
        train_rows = np.flatnonzero(labels != f)
        path = fit_path(dataset.subset(train_rows), spec, values, controls)
        dev = np.full(values.shape[0], np.nan)
        dev[: path.n_lambda] = _fold_deviance(dataset, train_rows, test_rows, path)
        return dev, test_rows.size

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(folds)))
    else:
        results = [run(f) for f in range(folds)]

    totals = np.array([r[0] for r in results])
    sizes = np.array([r[1] for r in results], dtype=float)
    cve = totals.sum(axis=0) / sizes.sum()
    fold_means = totals / sizes[:, None]
    se = fold_means.std(axis=0, ddof=1) / np.sqrt(folds)
    i_min = int(np.nanargmin(cve))
    ok = np.flatnonzero(cve <= cve[i_min] + se[i_min])
    i_1se = int(ok.min())
    # report folds in the caller's row order
    return CvResult(values, cve, se, labels[np.argsort(dataset.order)], i_min, i_1se)


def select_index_by_mfdr(table, alpha):
    """Index of the smallest lambda with a defined mFDR <= alpha and something selected."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    m = table.mfdr
    ok = np.flatnonzero((table.selected_count > 0) & ~np.isnan(m) & (m <= alpha))
    if ok.size == 0:
        return None
    return int(ok[np.argmin(table.lambdas[ok])])


def select_by_mfdr(table, alpha=0.1):
    """Smallest grid lambda whose mFDR is at most ``alpha``, or None."""
    k = select_index_by_mfdr(table, alpha)
    return None if k is None else float(table.lambdas[k])
