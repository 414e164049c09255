import warnings

import numpy as np
import pytest

from mfdrreg import family as fam
from mfdrreg.data import Binary, Continuous, DataError, Dataset, Survival
from mfdrreg.penalty import PenaltySpec, selection_condition
from mfdrreg.solver import (
    ConvergenceError,
    SaturationWarning,
    SolverControls,
    fit_path,
    make_lambda_grid,
)


def gaussian_data(seed, n=20, p=5, signal=(1.5, -1.0)):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: len(signal)] = signal
    return Dataset.from_raw(x, Continuous(x @ beta + 2.0 + rng.standard_normal(n)))


def binomial_data(seed, n=80, p=6):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    eta = 1.2 * x[:, 0] - 0.8 * x[:, 1]
    return Dataset.from_raw(x, Binary((rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)))


def cox_data(seed, n=60, p=5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    t = rng.exponential(1.0, n) / np.exp(0.9 * x[:, 0])
    c = rng.exponential(2.0, n)
    return Dataset.from_raw(x, Survival(np.minimum(t, c), (t <= c).astype(float)))


# ------------------------------------------------------------------ #
# Independent proximal-gradient oracles
# ------------------------------------------------------------------ #


def soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def fista(grad_loss, loss, p, lam, step, intercept=True, tol=1e-10, max_iter=200000):
    """Accelerated proximal gradient on ``loss(b0, beta) + lam * |beta|_1``."""
    theta = np.zeros(p + 1)
    z = theta.copy()
    t = 1.0
    for _ in range(max_iter):
        g = grad_loss(z[0], z[1:])
        new = z - step * g
        new[1:] = soft(new[1:], step * lam)
        if not intercept:
            new[0] = 0.0
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = new + (t - 1) / t_new * (new - theta)
        done = np.max(np.abs(new - theta)) < tol
        theta, t = new, t_new
        if done:
            break
    return theta[0], theta[1:], loss(theta[0], theta[1:]) + lam * np.abs(theta[1:]).sum()


def gaussian_oracle(ds, lam):
    x, y, n = ds.x, ds.response.y, ds.n

    def loss(b0, b):
        r = y - b0 - x @ b
        return r @ r / (2 * n)

    def grad(b0, b):
        r = y - b0 - x @ b
        return -np.r_[r.sum(), x.T @ r] / n

    step = 1.0 / (np.linalg.eigvalsh(np.c_[np.ones(n), x].T @ np.c_[np.ones(n), x] / n).max())
    return fista(grad, loss, ds.p, lam, step)


def logistic_oracle(ds, lam):
    x, y, n = ds.x, ds.response.y, ds.n

    def loss(b0, b):
        eta = b0 + x @ b
        return np.mean(np.logaddexp(0, eta) - y * eta)

    def grad(b0, b):
        pi = 1 / (1 + np.exp(-(b0 + x @ b)))
        return np.r_[np.sum(pi - y), x.T @ (pi - y)] / n

    xa = np.c_[np.ones(n), x]
    step = 4.0 / np.linalg.eigvalsh(xa.T @ xa / n).max()
    return fista(grad, loss, ds.p, lam, step)


def cox_oracle(ds, lam):
    """Breslow partial likelihood written directly over risk sets (O(n^2))."""
    x, n = ds.x, ds.n
    t, d = ds.response.time, ds.response.status
    at_risk = t[None, :] >= t[:, None]  # row i: who is at risk at time t_i

    def loss(b0, b):
        eta = x @ b
        return -np.sum(d * (eta - np.log(at_risk @ np.exp(eta)))) / n

    def grad(b0, b):
        e = np.exp(x @ b)
        denom = at_risk @ e
        mean_x = (at_risk * e) @ x / denom[:, None]
        return np.r_[0.0, -(d @ (x - mean_x)) / n]

    step = 1.0 / np.linalg.eigvalsh(x.T @ x / n).max()
    return fista(grad, loss, ds.p, lam, step, intercept=False)


@pytest.mark.parametrize("seed", range(5))
def test_gaussian_lasso_matches_proximal_gradient(seed):
    ds = gaussian_data(seed)
    grid = make_lambda_grid(ds, count=8, ratio=0.05)
    fit = fit_path(ds, PenaltySpec("lasso"), grid)
    y, x, n = ds.response.y, ds.x, ds.n
    for k in range(1, fit.n_lambda):
        b0, b, obj = gaussian_oracle(ds, fit.lambdas[k])
        r = y - fit.intercept[k] - x @ fit.beta[k]
        ours = r @ r / (2 * n) + fit.lambdas[k] * np.abs(fit.beta[k]).sum()
        assert abs(ours - obj) < 1e-6
        np.testing.assert_allclose(fit.beta[k], b, atol=1e-4)
        assert fit.intercept[k] == pytest.approx(b0, abs=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_logistic_lasso_matches_proximal_gradient(seed):
    ds = binomial_data(seed)
    grid = make_lambda_grid(ds, count=6, ratio=0.1)
    fit = fit_path(ds, PenaltySpec("lasso"), grid)
    for k in (2, 5):
        b0, b, _ = logistic_oracle(ds, fit.lambdas[k])
        np.testing.assert_allclose(fit.beta[k], b, atol=1e-4)
        assert fit.intercept[k] == pytest.approx(b0, abs=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_cox_lasso_matches_proximal_gradient(seed):
    ds = cox_data(seed)
    grid = make_lambda_grid(ds, count=6, ratio=0.1)
    fit = fit_path(ds, PenaltySpec("lasso"), grid)
    for k in (2, 5):
        _, b, _ = cox_oracle(ds, fit.lambdas[k])
        np.testing.assert_allclose(fit.beta[k], b, atol=1e-4)


# ------------------------------------------------------------------ #
# Grid and path structure
# ------------------------------------------------------------------ #


def test_lambda_max_closed_form_gaussian():
    ds = gaussian_data(0, n=50, p=8)
    y = ds.response.y
    grid = make_lambda_grid(ds, count=100, ratio=0.001)
    assert grid.lambda_max == pytest.approx(np.max(np.abs(ds.x.T @ (y - y.mean()))) / ds.n, rel=1e-12)
    assert grid.count == 100
    assert grid.values[0] == grid.lambda_max
    assert grid.values[-1] == pytest.approx(0.001 * grid.lambda_max, rel=1e-12)
    assert np.all(np.diff(grid.values) < 0)


def test_default_ratio_depends_on_dimension():
    assert make_lambda_grid(gaussian_data(0, n=50, p=8)).ratio == 0.001
    assert make_lambda_grid(gaussian_data(0, n=20, p=30)).ratio == 0.05


@pytest.mark.parametrize("maker", [gaussian_data, binomial_data, cox_data])
def test_null_model_at_and_above_lambda_max(maker):
    ds = maker(1)
    grid = make_lambda_grid(ds)
    fit = fit_path(ds, PenaltySpec("lasso"), [grid.lambda_max * 1.0001, grid.lambda_max, grid.lambda_max * 0.9])
    assert fit.selected_count[:2].tolist() == [0, 0]
    assert fit.selected_count[2] >= 1


def test_pure_noise_response_without_scale_is_rejected():
    x = np.random.default_rng(0).standard_normal((10, 3))
    ds = Dataset.from_raw(x, Continuous(np.full(10, 3.0)))
    with pytest.raises(DataError, match="null-model score is zero"):
        make_lambda_grid(ds)


@pytest.mark.parametrize("penalty", ["lasso", "enet", "mcp", "scad"])
@pytest.mark.parametrize("maker", [gaussian_data, binomial_data, cox_data])
def test_every_solution_is_certified(penalty, maker):
    ds = maker(2)
    spec = PenaltySpec(penalty, lambda2=0.2 if penalty == "enet" else 0.0)
    fit = fit_path(ds, spec, make_lambda_grid(ds, spec, count=30, ratio=0.05))
    assert np.all(fit.kkt <= 1e-4)
    n = ds.n
    for k in range(fit.n_lambda):
        st_u, st_v = _score_and_weights(ds, fit, k)
        sel = selection_condition(st_u, st_v, fit.beta[k], n, fit.lambdas[k])
        np.testing.assert_array_equal(sel, fit.beta[k] != 0)


def _score_and_weights(ds, fit, k):
    st = fam.family_state(ds, fit.beta[k], fit.intercept[k])
    return fam.score(ds, st), fam.quadratic_weights(ds, st)


def test_enet_without_ridge_matches_lasso_path():
    ds = binomial_data(3)
    grid = make_lambda_grid(ds, count=20)
    a = fit_path(ds, PenaltySpec("lasso"), grid)
    b = fit_path(ds, PenaltySpec("enet", lambda2=0.0), grid)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)


@pytest.mark.parametrize("maker", [gaussian_data, binomial_data, cox_data])
def test_warm_start_equals_cold_start(maker):
    ds = maker(4)
    grid = make_lambda_grid(ds, count=15, ratio=0.05)
    controls = SolverControls(tol=1e-10)
    path = fit_path(ds, PenaltySpec("lasso"), grid, controls)
    for k in (3, 9, 14):
        cold = fit_path(ds, PenaltySpec("lasso"), [grid.values[k]], controls)
        np.testing.assert_allclose(path.beta[k], cold.beta[0], atol=1e-6)


@pytest.mark.parametrize("maker", [gaussian_data, binomial_data])
def test_surrogate_objective_never_increases_within_a_quadratic(maker):
    ds = maker(5)
    fit = fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds, count=20), SolverControls(trace=True))
    checked = 0
    for trace in fit.traces:
        for segment in np.split(trace, np.flatnonzero(np.isnan(trace))):
            seg = segment[~np.isnan(segment)]
            if seg.size > 1:
                assert np.all(np.diff(seg) <= 1e-12 * (1 + np.abs(seg[:-1])))
                checked += 1
    assert checked > 0


def test_unpenalized_covariate_enters_at_lambda_max():
    rng = np.random.default_rng(6)
    n = 100
    x = rng.standard_normal((n, 4))
    y = 2.0 * x[:, 0] + 0.5 * x[:, 1] + rng.standard_normal(n)
    ds = Dataset.from_raw(x, Continuous(y), penalized=[False, True, True, True])
    fit = fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds, count=10))
    assert np.all(fit.beta[:, 0] != 0)
    assert fit.selected_count[0] == 0
    assert not fit.selectable[0]


def test_max_active_stops_the_path():
    ds = gaussian_data(7, n=60, p=20, signal=(1, 1, 1, 1, 1, 1))
    fit = fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds), SolverControls(max_active=3))
    assert fit.selected_count[-1] > 3
    assert np.all(fit.selected_count[:-1] <= 3)


def collinear_binomial(seed):
    # near-duplicate columns make coordinate descent crawl
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((80, 1)) + 0.05 * rng.standard_normal((80, 6))
    y = rng.random(80) < 1 / (1 + np.exp(x[:, 1] - x[:, 0]))
    return Dataset.from_raw(x, Binary(y.astype(float)))


def test_non_convergence_reports_lambda_index():
    ds = collinear_binomial(8)
    with pytest.raises(ConvergenceError) as info:
        fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds), SolverControls(max_iterations=1))
    assert info.value.lambda_index >= 1


def test_partial_controls_truncate_instead_of_raising():
    ds = collinear_binomial(8)
    grid = make_lambda_grid(ds)
    with pytest.warns(RuntimeWarning, match="path truncated"):
        fit = fit_path(ds, PenaltySpec("lasso"), grid, SolverControls(max_iterations=3, partial=True))
    assert fit.truncated and 1 <= fit.n_lambda < grid.count


def test_separable_logistic_warns():
    x = np.linspace(-1, 1, 20)[:, None]
    ds = Dataset.from_raw(x, Binary((x[:, 0] > 0).astype(float)))
    with pytest.warns(SaturationWarning):
        fit = fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds, count=50, ratio=1e-4))
    assert fit.warnings


def test_separable_mcp_stops_with_warning_not_error():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((60, 3))
    ds = Dataset.from_raw(x, Binary((x[:, 0] + 0.3 * x[:, 1] > 0).astype(float)))
    with pytest.warns(SaturationWarning, match="path stopped"):
        fit = fit_path(ds, PenaltySpec("mcp"), make_lambda_grid(ds, count=50))
    assert fit.truncated and 1 < fit.n_lambda < 50
    assert fit.kkt.max() <= 1e-4


def test_diverging_coefficients_stop_the_path():
    # one column nearly separates the classes; MCP leaves large effects unpenalized
    rng = np.random.default_rng(3)
    x = rng.standard_normal((200, 4))
    y = (x[:, 0] + 0.05 * rng.standard_normal(200) > 0).astype(float)
    ds = Dataset.from_raw(x, Binary(y))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_path(ds, PenaltySpec("mcp"), make_lambda_grid(ds, count=50))
    assert fit.truncated and fit.kkt.max() <= 1e-4
    assert any("coefficients diverge" in str(w.message) for w in caught)


def test_mcp_shrinks_strong_signals_less_than_lasso():
    rng = np.random.default_rng(9)
    n = 200
    x = rng.standard_normal((n, 30))
    t = rng.exponential(1.0, n) / np.exp(-0.8 * x[:, 0] - 0.6 * x[:, 1])
    status = (rng.random(n) < 0.7).astype(float)
    ds = Dataset.from_raw(x, Survival(t, status))
    grid = make_lambda_grid(ds, count=40, ratio=0.05)
    lasso = fit_path(ds, PenaltySpec("lasso"), grid)
    mcp = fit_path(ds, PenaltySpec("mcp"), grid)
    k = 20
    assert np.all(np.abs(mcp.beta[k, :2]) > np.abs(lasso.beta[k, :2]))


def test_raw_scale_coefficients_reproduce_predictions():
    rng = np.random.default_rng(10)
    raw = rng.normal(5, 3, size=(40, 3))
    y = raw @ np.array([0.5, 0.0, -0.2]) + rng.standard_normal(40)
    ds = Dataset.from_raw(raw, Continuous(y))
    fit = fit_path(ds, PenaltySpec("lasso"), make_lambda_grid(ds, count=10))
    beta_raw, icpt = fit.coefficients_raw(ds.record)
    for k in range(fit.n_lambda):
        np.testing.assert_allclose(raw @ beta_raw[k] + icpt[k], fit.eta[k], atol=1e-10)


def test_full_weight_option_changes_only_cox_v_hat():
    ds = cox_data(11)
    grid = make_lambda_grid(ds, count=10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        diag = fit_path(ds, PenaltySpec("lasso"), grid)
        full = fit_path(ds, PenaltySpec("lasso"), grid, SolverControls(cox_full_w=True))
    np.testing.assert_array_equal(diag.beta, full.beta)
    for k in range(full.n_lambda):
        np.testing.assert_allclose(full.v_hat[k], fam.cox_full_quadratic_weights(ds, full.eta[k]), rtol=1e-12)
    assert np.all(full.v_hat > 0)
    assert not np.allclose(full.v_hat, diag.v_hat)
