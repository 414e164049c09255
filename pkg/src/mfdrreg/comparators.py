"""Baseline FDR procedures: univariate Wald tests and single-split sample splitting.

Both end in the Benjamini-Hochberg step-up rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .mfdr import normal_cdf
from .penalty import PenaltySpec
from .solver import SolverControls, fit_path, make_lambda_grid


@dataclass(frozen=True)
class TestResult:
    feature: int
    statistic: float
    p_value: float
    adjusted_discovery: bool
    flag: str = None

    __test__ = False  # not a pytest class


def benjamini_hochberg(p_values, q):
    """Discovery flags of the BH step-up procedure at level ``q``.

    Rejects the k smallest p-values, ``k = max{i : p_(i) <= i q / m}``.
    """
    p = np.asarray(p_values, dtype=float)
    m = p.size
    out = np.zeros(m, dtype=bool)
    if m == 0:
        return out
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = np.flatnonzero(below).max()
        out[order[: k + 1]] = True
    return out


def wald_p_value(z):
    return 2.0 * normal_cdf(-np.abs(z))


# ------------------------------------------------------------------ #
# Unpenalized maximum likelihood
# ------------------------------------------------------------------ #


def _cox_derivatives(x, status, start, count, beta):
    eta = x @ beta
    c = eta.max()
    e = np.exp(eta - c)

    def tail(a):
        return np.cumsum(a[::-1], axis=0)[::-1]

    s0 = tail(e)[start]
    s1 = tail(e[:, None] * x)[start] / s0[:, None]
    s2 = tail(e[:, None, None] * x[:, :, None] * x[:, None, :])[start] / s0[:, None, None]
    loglik = status @ eta - count @ (np.log(s0) + c)
    grad = status @ x - count @ s1
    info = np.einsum("k,kab->ab", count, s2 - s1[:, :, None] * s1[:, None, :])
    return loglik, grad, info


def _glm_derivatives(x, y, family, beta):
    eta = x @ beta
    if family == "gaussian":
        r = y - eta
        return -0.5 * r @ r, x.T @ r, x.T @ x
    pi = 1.0 / (1.0 + np.exp(-eta))
    loglik = y @ eta - np.logaddexp(0.0, eta).sum()
    w = pi * (1 - pi)
    return loglik, x.T @ (y - pi), (x * w[:, None]).T @ x


def fit_unpenalized(dataset: Dataset, columns, max_iter=50, tol=1e-9):
    """Maximum likelihood on ``columns`` (plus an intercept for non-Cox models).

    Returns
    -------
    coef, se : np.ndarray
        Estimates and Wald standard errors for ``columns`` (intercept dropped).
    converged : bool
    """
    columns = list(columns)
    x = dataset.x[:, columns]
    fam = dataset.family
    if fam != "cox":
        x = np.column_stack([np.ones(dataset.n), x])
    k = x.shape[1]
    if fam == "cox":
        r = dataset.risk
        status, start, count = dataset.response.status, r.start, r.count

        def derivs(b):
            return _cox_derivatives(x, status, start, count, b)
    else:
        y = dataset.response.y

        def derivs(b):
            return _glm_derivatives(x, y, fam, b)

    beta = np.zeros(k)
    if fam == "binomial":
        m = y.mean()
        beta[0] = np.log(m / (1 - m))
    converged = False
    ll, g, info = derivs(beta)
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            new = beta + t * step
            ll_new, g_new, info_new = derivs(new)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t /= 2
            if t < 1e-8:
                break
        if t < 1e-8:
            break
        done = np.abs(new - beta).max() < tol * max(1.0, np.abs(new).max())
        beta, ll, g, info = new, ll_new, g_new, info_new
        if done or fam == "gaussian":
            converged = True
            break
    if fam == "gaussian":
        r = y - x @ beta
        df = dataset.n - k
        sigma2 = r @ r / df if df > 0 else np.nan
        cov_scale = sigma2
    else:
        cov_scale = 1.0
    try:
        cov = np.linalg.inv(info) * cov_scale
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
        converged = False
    if fam == "binomial" and np.abs(x @ beta).max() > 30:
        converged = False
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(se))):
        converged = False
    if fam != "cox":
        beta, se = beta[1:], se[1:]
    return beta, se, converged


# ------------------------------------------------------------------ #
# Vectorized single-feature fits (no adjustment covariates)
# ------------------------------------------------------------------ #


def _single_feature_gaussian(x, y):
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sxx = (xc * xc).sum(axis=0)
    b = xc.T @ yc / sxx
    rss = yc @ yc - b * b * sxx
    se = np.sqrt(rss / (n - 2) / sxx)
    return b, se, np.ones(x.shape[1], dtype=bool)


def _single_feature_binomial(x, y, max_iter=50, tol=1e-9):
    n, p = x.shape
    m = y.mean()
    a = np.full(p, np.log(m / (1 - m)))
    b = np.zeros(p)
    done = np.zeros(p, dtype=bool)
    for _ in range(max_iter):
        eta = a + x * b
        pi = 1.0 / (1.0 + np.exp(-eta))
        w = pi * (1 - pi)
        r = y[:, None] - pi
        g0, g1 = r.sum(axis=0), (x * r).sum(axis=0)
        h00, h01, h11 = w.sum(axis=0), (w * x).sum(axis=0), (w * x * x).sum(axis=0)
        det = h00 * h11 - h01 * h01
        da = (h11 * g0 - h01 * g1) / det
        db = (h00 * g1 - h01 * g0) / det
        da = np.clip(np.nan_to_num(da), -5, 5)
        db = np.clip(np.nan_to_num(db), -5, 5)
        a = np.where(done, a, a + da)
        b = np.where(done, b, b + db)
        done |= np.maximum(np.abs(da), np.abs(db)) < tol * np.maximum(1.0, np.abs(b))
        if done.all():
            break
    eta = a + x * b
    pi = 1.0 / (1.0 + np.exp(-eta))
    w = pi * (1 - pi)
    h00, h01, h11 = w.sum(axis=0), (w * x).sum(axis=0), (w * x * x).sum(axis=0)
    var_b = h00 / (h00 * h11 - h01 * h01)
    ok = done & (np.abs(eta).max(axis=0) < 30) & np.isfinite(var_b) & (var_b > 0)
    return b, np.sqrt(np.where(var_b > 0, var_b, np.nan)), ok


def _single_feature_cox(x, status, start, count, max_iter=50, tol=1e-9):
    n, p = x.shape

    def tail(a):
        return np.cumsum(a[::-1], axis=0)[::-1]

    def derivs(b):
        eta = x * b
        c = eta.max(axis=0)
        e = np.exp(eta - c)
        s0 = tail(e)[start]
        s1 = tail(e * x)[start] / s0
        s2 = tail(e * x * x)[start] / s0
        ll = status @ eta - count @ (np.log(s0) + c)
        return ll, status @ x - count @ s1, count @ (s2 - s1 * s1)

    b = np.zeros(p)
    ll, g, h = derivs(b)
    done = np.zeros(p, dtype=bool)
    for _ in range(max_iter):
        step = np.where(done | (h <= 0), 0.0, g / np.where(h > 0, h, 1.0))
        t = np.ones(p)
        for _half in range(30):
            new = b + t * step
            ll_new, g_new, h_new = derivs(new)
            bad = ~(np.isfinite(ll_new) & (ll_new >= ll - 1e-12 * np.abs(ll)))
            if not bad.any():
                break
            t = np.where(bad, t / 2, t)
        moved = np.abs(new - b)
        b, ll, g, h = new, ll_new, g_new, h_new
        done |= moved < tol * np.maximum(1.0, np.abs(b))
        if done.all():
            break
    ok = done & (h > 0) & np.isfinite(b)
    return b, np.sqrt(np.where(h > 0, 1.0 / np.where(h > 0, h, 1.0), np.nan)), ok


def _results(features, coef, se, ok, q, flags=None):
    z = np.where(ok, coef / se, 0.0)
    pv = np.where(ok, wald_p_value(z), 1.0)
    disc = benjamini_hochberg(pv, q)
    out = []
    for i, j in enumerate(features):
        flag = None if flags is None else flags[i]
        if flag is None and not ok[i]:
            flag = "nonconvergent"
        out.append(TestResult(int(j), float(z[i]), float(pv[i]), bool(disc[i]), flag))
    return out


def univariate_screen(dataset: Dataset, q=0.1):
    """Separate unpenalized fit and Wald test per penalized feature, then BH at ``q``.

    Unpenalized columns of ``dataset`` enter every model as adjustment
    covariates.  Fits that fail to converge (e.g. separation) get p = 1.
    """
    features = np.flatnonzero(dataset.selectable)
    covariates = np.flatnonzero(~dataset.penalized & dataset.usable)
    if covariates.size == 0:
        x = dataset.x[:, features]
        if dataset.family == "gaussian":
            coef, se, ok = _single_feature_gaussian(x, dataset.response.y)
        elif dataset.family == "binomial":
            coef, se, ok = _single_feature_binomial(x, dataset.response.y)
        else:
            r = dataset.risk
            coef, se, ok = _single_feature_cox(x, dataset.response.status, r.start, r.count)
    else:
        coef = np.empty(features.size)
        se = np.empty(features.size)
        ok = np.empty(features.size, dtype=bool)
        for i, j in enumerate(features):
            c, s, conv = fit_unpenalized(dataset, list(covariates) + [j])
            coef[i], se[i], ok[i] = c[-1], s[-1], conv
    return _results(features, coef, se, ok, q)


def sample_split(dataset: Dataset, q=0.1, seed=None, n_select=20, spec=None, controls=None):
    """Single-split inference: select on one half, test on the other.

    Stage 1 fits a lasso path on a random half and keeps the first
    ``n_select`` features to enter it.  Stage 2 refits those features
    (plus any unpenalized covariates) without penalty on the other half
    and applies BH to their Wald p-values.  Features not carried into
    stage 2 are reported with p = 1.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    half = dataset.n // 2
    first, second = np.sort(perm[:half]), np.sort(perm[half:])
    d1, d2 = dataset.subset(first), dataset.subset(second)
    spec = PenaltySpec("lasso") if spec is None else spec
    base = SolverControls() if controls is None else controls
    ctl = SolverControls(base.tol, base.kkt_tol, base.max_iterations, n_select, base.cox_full_w)
    path = fit_path(d1, spec, make_lambda_grid(d1, spec), ctl)
    chosen = path.entry_order()[:n_select]

    features = np.flatnonzero(dataset.selectable)
    pos = {j: i for i, j in enumerate(features)}
    coef = np.zeros(features.size)
    se = np.ones(features.size)
    ok = np.zeros(features.size, dtype=bool)
    flags = ["not_selected"] * features.size
    if chosen:
        covariates = list(np.flatnonzero(~dataset.penalized & dataset.usable))
        c, s, conv = fit_unpenalized(d2, covariates + chosen)
        c, s = c[len(covariates):], s[len(covariates):]
        for j, cj, sj in zip(chosen, c, s):
            i = pos[j]
            flags[i] = None if conv else "nonconvergent"
            coef[i], se[i], ok[i] = cj, sj, conv
    z = np.where(ok, coef / se, 0.0)
    pv = np.where(ok, wald_p_value(z), 1.0)
    tested = np.array([pos[j] for j in chosen], dtype=int)
    disc = np.zeros(features.size, dtype=bool)
    disc[tested] = benjamini_hochberg(pv[tested], q)
    return [TestResult(int(j), float(z[i]), float(pv[i]), bool(disc[i]), flags[i]) for i, j in enumerate(features)]
