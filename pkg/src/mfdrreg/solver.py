"""Pathwise coordinate descent for penalized gaussian, logistic and Cox models.

Each grid point is solved by IRLS: the loss is replaced by its quadratic
approximation at the current coefficients (diagonal weights ``W``), the
penalized quadratic is minimized by cyclic coordinate descent with an
active-set strategy, and the approximation is refreshed until the
coefficients stop moving.  Solutions are warm-started down a decreasing
lambda grid and every emitted solution carries a KKT certificate.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import family as fam
from .data import DataError, Dataset
from .penalty import ENET, LASSO, MCP, SCAD, PenaltySpec, _threshold, kkt_residual, selection_condition

log = logging.getLogger(__name__)

# mean working weight below which a GLM/Cox fit is treated as diverging
WEIGHT_FLOOR = 1e-10
# spread of the linear predictor beyond which fitted probabilities or hazard
# ratios are numerically degenerate (exp(-60) ~ 1e-26)
ETA_SPREAD_CEILING = 60.0
# fraction of null deviance explained at which the path stops as saturated
SATURATION_RATIO = 0.99


class ConvergenceError(RuntimeError):
    """The solver failed at a grid point."""

    def __init__(self, lambda_index, residual, message="coordinate descent did not converge"):
        super().__init__(f"{message} at lambda index {lambda_index} (KKT residual {residual:.3g})")
        self.lambda_index = lambda_index
        self.residual = residual


class SaturationWarning(RuntimeWarning):
    """The fit approached saturation (separable data or a diverging path)."""


@dataclass(frozen=True)
class SolverControls:
    tol: float = 1e-7
    kkt_tol: float = 1e-4
    max_iterations: int = 30000  # coordinate sweeps per lambda and certification attempt
    max_active: int = None
    cox_full_w: bool = False
    trace: bool = False
    partial: bool = False  # on non-convergence return the fitted prefix instead of raising


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    lambda_max: float
    ratio: float

    @property
    def count(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class PathFit:
    """Solutions along a lambda grid, on the standardized scale.

    ``v_hat[k, j] = x_j' W x_j`` at the k-th solution (diagonal ``W`` unless
    the fit was made with ``cox_full_w``).  ``dispersion`` is the residual
    variance estimate for gaussian fits and 1 otherwise.
    """

    family: str
    penalty: PenaltySpec
    lambdas: np.ndarray
    beta: np.ndarray
    intercept: np.ndarray
    eta: np.ndarray
    v_hat: np.ndarray
    dispersion: np.ndarray
    loss: np.ndarray
    kkt: np.ndarray
    iterations: np.ndarray
    penalized: np.ndarray
    selectable: np.ndarray
    n: int
    lambda_max: float
    feature_names: tuple = ()
    warnings: tuple = ()
    traces: list = field(default=None, repr=False)
    truncated: bool = False

    @property
    def n_lambda(self):
        return self.lambdas.shape[0]

    def active_set(self, k):
        return np.flatnonzero(self.selectable & (self.beta[k] != 0))

    @property
    def selected_count(self):
        return ((self.beta != 0) & self.selectable).sum(axis=1)

    def entry_order(self):
        """Selectable features in the order they enter the path.

        Ties within one grid point are broken by coefficient magnitude.
        """
        seen = np.zeros(self.beta.shape[1], dtype=bool)
        order = []
        for k in range(self.n_lambda):
            new = np.flatnonzero(self.selectable & (self.beta[k] != 0) & ~seen)
            new = new[np.argsort(-np.abs(self.beta[k, new]), kind="stable")]
            order.extend(new.tolist())
            seen[new] = True
        return order

    def coefficients_raw(self, record):
        from .data import unstandardize_coefficients

        out = np.empty_like(self.beta)
        icpt = np.empty(self.n_lambda)
        for k in range(self.n_lambda):
            out[k], adj = unstandardize_coefficients(self.beta[k], record)
            icpt[k] = self.intercept[k] + adj
        return out, icpt


# ------------------------------------------------------------------ #
# Kernel
# ------------------------------------------------------------------ #


@njit(cache=True, nogil=True)
def _cd_sweep(x, w, r, v, beta, pen_mask, cols, n_cols, active, lam, lam2, gamma, pcode, fresh_v=False):
    n = x.shape[0]
    chg = 0.0
    for idx in range(n_cols):
        j = cols[idx]
        g = 0.0
        if fresh_v:
            acc = 0.0
            for i in range(n):
                wx = w[i] * x[i, j]
                g += wx * r[i]
                acc += wx * x[i, j]
            v[j] = acc / n
        else:
            for i in range(n):
                g += w[i] * x[i, j] * r[i]
        vj = v[j]
        if vj <= 0.0:
            continue
        z = g / n + vj * beta[j]
        if pen_mask[j]:
            new = _threshold(z, vj, lam, lam2, gamma, pcode)
        else:
            new = z / vj
        d = new - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * x[i, j]
            beta[j] = new
            if abs(d) > chg:
                chg = abs(d)
        if new != 0.0:
            active[j] = True
    return chg


@njit(cache=True, nogil=True)
def _intercept_step(w, r, sw, b0):
    n = r.shape[0]
    g = 0.0
    for i in range(n):
        g += w[i] * r[i]
    d = g / n / sw
    if d != 0.0:
        for i in range(n):
            r[i] -= d
        b0[0] += d
    return abs(d)


@njit(cache=True, nogil=True)
def _convex_penalty(beta, pen_mask, lam, lam2):
    out = 0.0
    for j in range(beta.shape[0]):
        if pen_mask[j]:
            b = abs(beta[j])
            out += lam * b + 0.5 * lam2 * b * b
    return out


@njit(cache=True, nogil=True)
def _linear_predictor(x, beta, b0, eta):
    n, p = x.shape
    for i in range(n):
        eta[i] = b0
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                eta[i] += bj * x[i, j]


@njit(cache=True, nogil=True)
def _diverging(eta, mean_weight):
    if mean_weight < WEIGHT_FLOOR:
        return True
    return eta.max() - eta.min() > ETA_SPREAD_CEILING


@njit(cache=True, nogil=True)
def _solve(x, code, y, start, count, beta, b0, use_intercept, pen_mask, usable,
           lam, lam2, gamma, pcode, tol, max_sweeps, trace):
    """Minimize the penalized objective at one lambda, in place.

    Returns (sweeps, status); status 1 means ``max_sweeps`` was hit and 2
    that the fit is diverging (weights collapsed or the linear predictor
    spread past ``ETA_SPREAD_CEILING``).
    ``trace`` (if non-empty) receives the surrogate objective after every
    sweep, with NaN marking the start of each IRLS iteration.
    """
    n, p = x.shape
    eta = np.empty(n)
    w = np.empty(n)
    s = np.empty(n)
    r = np.empty(n)
    v = np.zeros(p)
    _linear_predictor(x, beta, b0[0], eta)
    loss = fam.evaluate(code, y, start, count, eta, w, s)
    halving = code != fam.GAUSSIAN and (pcode == LASSO or pcode == ENET)
    obj = loss + _convex_penalty(beta, pen_mask, lam, lam2)

    all_cols = np.flatnonzero(usable)
    active = np.zeros(p, dtype=np.bool_)
    for j in all_cols:
        if beta[j] != 0.0 or not pen_mask[j]:
            active[j] = True
    beta_old = np.empty(p)
    n_trace = trace.shape[0]
    t = 0
    sweeps = 0
    while True:
        for i in range(n):
            r[i] = s[i] / w[i] if w[i] > 0.0 else 0.0
        sw = 0.0
        for i in range(n):
            sw += w[i]
        sw /= n
        if code != fam.GAUSSIAN and _diverging(eta, sw):
            return sweeps, 2
        for j in all_cols:
            acc = 0.0
            for i in range(n):
                acc += w[i] * x[i, j] * x[i, j]
            v[j] = acc / n
        beta_old[:] = beta
        b0_old = b0[0]
        if t < n_trace:
            trace[t] = np.nan
            t += 1

        # inner coordinate descent on the quadratic surrogate
        while True:
            chg = _cd_sweep(x, w, r, v, beta, pen_mask, all_cols, all_cols.shape[0], active,
                            lam, lam2, gamma, pcode)
            if use_intercept and sw > 0.0:
                chg = max(chg, _intercept_step(w, r, sw, b0))
            sweeps += 1
            if t < n_trace:
                q = 0.0
                for i in range(n):
                    q += w[i] * r[i] * r[i]
                trace[t] = 0.5 * q / n + _convex_penalty(beta, pen_mask, lam, lam2)
                t += 1
            scale = max(1.0, np.abs(beta).max()) if p > 0 else 1.0
            if chg < tol * scale:
                break
            if sweeps >= max_sweeps:
                return sweeps, 1
            act = np.flatnonzero(active)
            while sweeps < max_sweeps:
                chg = _cd_sweep(x, w, r, v, beta, pen_mask, act, act.shape[0], active,
                                lam, lam2, gamma, pcode)
                if use_intercept and sw > 0.0:
                    chg = max(chg, _intercept_step(w, r, sw, b0))
                sweeps += 1
                if t < n_trace:
                    q = 0.0
                    for i in range(n):
                        q += w[i] * r[i] * r[i]
                    trace[t] = 0.5 * q / n + _convex_penalty(beta, pen_mask, lam, lam2)
                    t += 1
                scale = max(1.0, np.abs(beta).max())
                if chg < tol * scale:
                    break
            if sweeps >= max_sweeps:
                return sweeps, 1

        if code == fam.GAUSSIAN:
            return sweeps, 0

        _linear_predictor(x, beta, b0[0], eta)
        loss = fam.evaluate(code, y, start, count, eta, w, s)
        new_obj = loss + _convex_penalty(beta, pen_mask, lam, lam2)
        if halving:
            k = 0
            while new_obj > obj + 1e-12 * (1.0 + abs(obj)) and k < 30:
                for j in range(p):
                    beta[j] = 0.5 * (beta[j] + beta_old[j])
                b0[0] = 0.5 * (b0[0] + b0_old)
                _linear_predictor(x, beta, b0[0], eta)
                loss = fam.evaluate(code, y, start, count, eta, w, s)
                new_obj = loss + _convex_penalty(beta, pen_mask, lam, lam2)
                k += 1
        obj = new_obj
        d = abs(b0[0] - b0_old)
        for j in range(p):
            d = max(d, abs(beta[j] - beta_old[j]))
        if d < tol * max(1.0, np.abs(beta).max()):
            return sweeps, 0
        if sweeps >= max_sweeps:
            return sweeps, 1


@njit(cache=True, nogil=True)
def _solve_stepwise(x, code, y, start, count, beta, b0, use_intercept, pen_mask, usable,
                    lam, lam2, gamma, pcode, tol, max_sweeps):
    """Like ``_solve`` but refreshes the IRLS weights after every sweep.

    Solving each quadratic surrogate exactly can cycle between local minima
    when the penalty is concave and features are correlated; a single sweep
    per weight update moves gradually toward a fixed point instead.  If
    successive steps keep reversing direction (an oscillation), the update
    is damped toward the previous iterate; damping leaves the fixed points
    unchanged.
    """
    n, p = x.shape
    eta = np.empty(n)
    w = np.empty(n)
    s = np.empty(n)
    r = np.empty(n)
    v = np.zeros(p)
    prev = np.empty(p)
    last = np.zeros(p + 1)
    d = np.empty(p + 1)
    all_cols = np.flatnonzero(usable)
    active = np.zeros(p, dtype=np.bool_)
    for j in all_cols:
        if beta[j] != 0.0 or not pen_mask[j]:
            active[j] = True
    full = True
    sweeps = 0
    step = 1.0
    reversals = 0
    while sweeps < max_sweeps:
        _linear_predictor(x, beta, b0[0], eta)
        fam.evaluate(code, y, start, count, eta, w, s)
        sw = 0.0
        for i in range(n):
            r[i] = s[i] / w[i] if w[i] > 0.0 else 0.0
            sw += w[i]
        sw /= n
        if _diverging(eta, sw):
            return sweeps, 2
        prev[:] = beta
        prev_b0 = b0[0]
        cols = all_cols if full else np.flatnonzero(active)
        chg = _cd_sweep(x, w, r, v, beta, pen_mask, cols, cols.shape[0], active,
                        lam, lam2, gamma, pcode, True)
        if use_intercept and sw > 0.0:
            chg = max(chg, _intercept_step(w, r, sw, b0))
        sweeps += 1
        small = chg < tol * max(1.0, np.abs(beta).max())
        if small and full:
            return sweeps, 0
        full = small
        for j in range(p):
            d[j] = beta[j] - prev[j]
        d[p] = b0[0] - prev_b0
        dot = 0.0
        nd = 0.0
        nl = 0.0
        for j in range(p + 1):
            dot += d[j] * last[j]
            nd += d[j] * d[j]
            nl += last[j] * last[j]
        last[:] = d
        if dot < -0.5 * np.sqrt(nd * nl):
            reversals += 1
            if reversals >= 5 and step > 1.0 / 64:
                step *= 0.5
                reversals = 0
        else:
            reversals = 0
        if step < 1.0:
            for j in cols:
                beta[j] = prev[j] + step * (beta[j] - prev[j])
            b0[0] = prev_b0 + step * (b0[0] - prev_b0)
    return sweeps, 1


# ------------------------------------------------------------------ #
# Python driver
# ------------------------------------------------------------------ #


class _Problem:
    """Arrays a dataset contributes to the kernel, prepared once."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.x = np.asfortranarray(dataset.x, dtype=float)
        self.code, self.y, self.start, self.count = fam.family_arrays(dataset)
        self.use_intercept = dataset.family != "cox"
        self.usable = np.array(dataset.usable)
        self.pen_mask = np.array(dataset.penalized & dataset.usable)
        self.selectable = np.array(dataset.selectable)

    def solve(self, beta, b0, spec, lam, tol, max_sweeps, trace=None, stepwise=None):
        if stepwise is None:
            stepwise = self.code != fam.GAUSSIAN and spec.code in (MCP, SCAD)
        if stepwise and trace is None:
            return _solve_stepwise(self.x, self.code, self.y, self.start, self.count, beta, b0,
                                   self.use_intercept, self.pen_mask, self.usable, float(lam),
                                   float(spec.lambda2), float(spec.gamma), spec.code, float(tol),
                                   int(max_sweeps))
        trace = np.zeros(0) if trace is None else trace
        return _solve(self.x, self.code, self.y, self.start, self.count, beta, b0, self.use_intercept,
                      self.pen_mask, self.usable, float(lam), float(spec.lambda2), float(spec.gamma),
                      spec.code, float(tol), int(max_sweeps), trace)

    def state(self, beta, b0):
        eta = np.empty(self.dataset.n)
        _linear_predictor(self.x, beta, b0, eta)
        w = np.empty_like(eta)
        s = np.empty_like(eta)
        loss = fam.evaluate(self.code, self.y, self.start, self.count, eta, w, s)
        return fam.FamilyState(eta, w, s, float(loss))

    def null_fit(self, max_sweeps=10000):
        p = self.dataset.p
        beta = np.zeros(p)
        b0 = np.zeros(1)
        if self.code == fam.GAUSSIAN:
            b0[0] = self.y.mean()
        elif self.code == fam.BINOMIAL:
            m = self.y.mean()
            b0[0] = np.log(m / (1 - m))
        if (self.usable & ~self.pen_mask).any():
            _, status = self.solve(beta, b0, PenaltySpec("lasso"), np.inf, 1e-10, max_sweeps)
            if status:
                raise ConvergenceError(-1, np.nan, "unpenalized null model did not converge")
        return beta, b0


def _lambda_max(problem, beta0, b0):
    st = problem.state(beta0, b0[0])
    u = problem.x.T @ st.working_residuals / problem.dataset.n
    sel = problem.selectable
    if not sel.any():
        raise ValueError("no usable penalized features")
    lmax = float(np.abs(u[sel]).max())
    if not lmax > 0:
        if problem.dataset.family == "cox" and not np.any(st.working_weights > 0):
            raise fam.DegenerateLikelihood("degenerate partial likelihood: no risk set has two subjects")
        raise DataError("the null-model score is zero for every penalized feature")
    return lmax


def make_lambda_grid(dataset, spec=None, count=100, ratio=None):
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``.

    ``lambda_max`` is the smallest lambda at which every penalized
    coefficient is zero: the largest ``|u_j| / n`` at the null model
    (intercept and unpenalized covariates fitted alone).
    """
    if count < 2:
        raise ValueError("grid needs at least 2 values")
    if ratio is None:
        ratio = 0.001 if dataset.n > dataset.p else 0.05
    if not 0 < ratio < 1:
        raise ValueError("lambda_min_ratio must be in (0, 1)")
    problem = _Problem(dataset)
    beta0, b0 = problem.null_fit()
    lmax = _lambda_max(problem, beta0, b0)
    values = lmax * np.exp(np.linspace(0.0, np.log(ratio), count))
    values[0] = lmax
    return LambdaGrid(values, lmax, float(ratio))


def _gaussian_dispersion(loss, n, n_coef):
    df = n - n_coef
    return 2.0 * n * loss / df if df > 0 else np.nan


def _solve_certified(problem, beta, b0, spec, spec_k, lam, controls, stepwise):
    """Solve at one lambda until the KKT certificate holds, for at most four attempts.

    Returns (sweeps, status, kkt, state, v_over_n, trace); status 0 means
    certified, 1 not converged, 2 diverging.
    """
    n = problem.dataset.n
    tol = controls.tol
    total = 0
    for attempt in range(4):
        trace = np.full(min(controls.max_iterations, 100000) + 1000, np.inf) if controls.trace else None
        sweeps, status = problem.solve(beta, b0, spec, lam, tol, controls.max_iterations, trace, stepwise)
        total += sweeps
        st = problem.state(beta, b0[0])
        u = problem.x.T @ st.working_residuals / n
        v = (problem.x * problem.x).T @ st.working_weights / n
        use = problem.usable
        kkt = kkt_residual(u[use], beta[use], v[use], spec_k, problem.pen_mask[use])
        if status == 2:
            return total, status, kkt, st, v, trace
        sel = problem.selectable
        agree = np.array_equal(selection_condition(u[sel] * n, v[sel] * n, beta[sel], n, lam),
                               beta[sel] != 0)
        if kkt <= controls.kkt_tol and agree:
            return total, 0, kkt, st, v, trace
        # out of sweeps: resume from here with a fresh budget; converged but
        # uncertified: tighten the stopping rule
        if status == 0:
            tol /= 100.0
    return total, 1, kkt, st, v, trace


def fit_path(dataset, spec=None, grid=None, controls=None):
    """Fit ``spec`` along ``grid`` with warm starts.

    Parameters
    ----------
    dataset : Dataset
    spec : PenaltySpec, optional
        Penalty family and fixed parameters; ``spec.lam`` is ignored.
    grid : LambdaGrid or array_like, optional
        Decreasing lambda values.  Defaults to :func:`make_lambda_grid`.
    controls : SolverControls, optional

    Returns
    -------
    PathFit
    """
    spec = PenaltySpec("lasso") if spec is None else spec
    controls = SolverControls() if controls is None else controls
    problem = _Problem(dataset)
    beta0, b0_null = problem.null_fit(controls.max_iterations)
    lmax = _lambda_max(problem, beta0, b0_null)
    if grid is None:
        grid = make_lambda_grid(dataset, spec)
    values = np.asarray(getattr(grid, "values", grid), dtype=float)
    if values.ndim != 1 or values.size < 1 or np.any(values <= 0) or np.any(np.diff(values) >= 0):
        raise ValueError("lambda grid must be strictly decreasing and positive")

    n, p = dataset.n, dataset.p
    nlam = values.shape[0]
    out = {k: [] for k in ("beta", "intercept", "eta", "v", "disp", "loss", "kkt", "iters")}
    traces = [] if controls.trace else None
    beta = beta0.copy()
    b0 = b0_null.copy()
    notes = []
    saturated = False
    truncated = False
    null_loss = problem.state(beta0, b0_null[0]).loss

    for k in range(nlam):
        lam = values[k]
        spec_k = spec.at(lam)
        iters = 0
        if lam >= lmax:
            beta[:] = beta0
            b0[:] = b0_null
            st = problem.state(beta, b0[0])
            u = problem.x.T @ st.working_residuals / n
            v = (problem.x * problem.x).T @ st.working_weights / n
            kkt = kkt_residual(u[problem.usable], beta[problem.usable], v[problem.usable], spec_k,
                               problem.pen_mask[problem.usable])
            if traces is not None:
                traces.append(np.zeros(0))
        else:
            stepwise = problem.code != fam.GAUSSIAN and not spec.convex
            iters, status, kkt, st, v, trace = _solve_certified(problem, beta, b0, spec, spec_k, lam,
                                                                controls, stepwise)
            if k > 0 and (status == 2 or (status == 1 and saturated)):
                # no finite solution at this lambda, or none the solver can
                # reach once probabilities are clamped: keep the certified prefix
                what = "coefficients diverge" if status == 2 else f"no convergence (KKT residual {kkt:.3g})"
                msg = (f"path stopped at lambda index {k}: {what} "
                       "(model saturated; data may be separable)")
                warnings.warn(msg, SaturationWarning, stacklevel=2)
                notes.append(msg)
                truncated = True
                break
            if status:
                if not controls.partial or k == 0:
                    raise ConvergenceError(k, kkt, *(("coefficients diverge",) if status == 2 else ()))
                msg = f"path truncated: no convergence at lambda index {k} (KKT residual {kkt:.3g})"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                notes.append(msg)
                truncated = True
                break
            if traces is not None:
                traces.append(trace[np.isfinite(trace) | np.isnan(trace)])
        if dataset.family == "binomial" and not saturated:
            if np.abs(st.eta).max() >= np.log((1 - fam.PI_CLAMP) / fam.PI_CLAMP):
                saturated = True
                msg = f"fitted probabilities saturated at lambda index {k}; data may be separable"
                warnings.warn(msg, SaturationWarning, stacklevel=2)
                notes.append(msg)
        if controls.cox_full_w and dataset.family == "cox":
            v_full = fam.cox_full_quadratic_weights(dataset, st.eta)
        else:
            v_full = v * n
        n_coef = int((beta[problem.usable] != 0).sum()) + (1 if problem.use_intercept else 0)
        disp = _gaussian_dispersion(st.loss, n, n_coef) if dataset.family == "gaussian" else 1.0
        out["beta"].append(beta.copy())
        out["intercept"].append(b0[0] if problem.use_intercept else 0.0)
        out["eta"].append(st.eta)
        out["v"].append(v_full)
        out["disp"].append(disp)
        out["loss"].append(st.loss)
        out["kkt"].append(kkt)
        out["iters"].append(iters)
        if (dataset.family != "gaussian" and k + 1 < nlam and null_loss > 0
                and 1.0 - st.loss / null_loss >= SATURATION_RATIO):
            msg = (f"path stopped after lambda index {k}: {100 * SATURATION_RATIO:g}% of the null "
                   "deviance explained (model saturated)")
            warnings.warn(msg, SaturationWarning, stacklevel=2)
            notes.append(msg)
            truncated = True
            break
        if controls.max_active is not None and (beta[problem.selectable] != 0).sum() > controls.max_active:
            log.info("stopping path at lambda index %d: more than %d active features", k, controls.max_active)
            break

    m = len(out["beta"])
    return PathFit(
        family=dataset.family,
        penalty=spec,
        lambdas=values[:m].copy(),
        beta=np.array(out["beta"]).reshape(m, p),
        intercept=np.array(out["intercept"]),
        eta=np.array(out["eta"]).reshape(m, n),
        v_hat=np.array(out["v"]).reshape(m, p),
        dispersion=np.array(out["disp"], dtype=float),
        loss=np.array(out["loss"]),
        kkt=np.array(out["kkt"]),
        iterations=np.array(out["iters"], dtype=int),
        penalized=np.array(dataset.penalized),
        selectable=np.array(dataset.selectable),
        n=n,
        lambda_max=lmax,
        feature_names=dataset.feature_names,
        warnings=tuple(notes),
        traces=traces,
        truncated=truncated,
    )
