import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdrreg.penalty import (
    PenaltySpec,
    kkt_residual,
    penalty_value,
    selection_condition,
    threshold,
)

FAMILIES = ["lasso", "enet", "mcp", "scad"]


def make(family, lam, lambda2=0.0, gamma=None):
    return PenaltySpec(family, lam, lambda2 if family == "enet" else 0.0, gamma)


def elementwise_penalty(b, spec, v):
    """Penalty of each entry of ``b``; MCP/SCAD act on the curvature-scaled v|b|."""
    lam, g, a = spec.lam, spec.gamma, np.abs(b)
    if spec.family == "lasso":
        return lam * a
    if spec.family == "enet":
        return lam * a + 0.5 * spec.lambda2 * a * a
    c = v * a
    if spec.family == "mcp":
        out = np.where(c <= g * lam, lam * c - c * c / (2 * g), g * lam * lam / 2)
    else:
        out = np.select([c <= lam, c <= g * lam],
                        [lam * c, (2 * g * lam * c - c * c - lam * lam) / (2 * (g - 1))],
                        lam * lam * (g + 1) / 2)
    return out / v


def scalar_objective(b, z, v, spec):
    return 0.5 * v * (b - z / v) ** 2 + elementwise_penalty(b, spec, v)


def grid_minimizer(z, v, spec, half_width=20.0, step=1e-4):
    """Brute-force scalar minimizer, refined once around the coarse optimum."""
    grid = np.arange(-half_width, half_width + step, step)
    b0 = grid[np.argmin(scalar_objective(grid, z, v, spec))]
    fine = np.arange(b0 - 2 * step, b0 + 2 * step, 1e-7)
    return fine[np.argmin(scalar_objective(fine, z, v, spec))]


def test_penalty_value_matches_elementwise_oracle():
    b = np.array([-2.0, -0.3, 0.0, 0.1, 0.7, 4.0])
    v = np.array([0.5, 1.0, 1.0, 2.0, 0.25, 1.5])
    for family in FAMILIES:
        spec = make(family, 0.4, 0.3)
        assert penalty_value(b, spec, v) == pytest.approx(elementwise_penalty(b, spec, v).sum(), rel=1e-12)


def test_lasso_boundary_is_inactive():
    assert threshold(0.5, 1.0, make("lasso", 0.5)) == 0.0


def test_lasso_soft_threshold_value():
    # oracle: grid search over the scalar objective
    spec = make("lasso", 0.5)
    assert abs(grid_minimizer(2.0, 1.0, spec) - 1.5) < 1e-6
    assert threshold(2.0, 1.0, spec) == pytest.approx(1.5, abs=1e-12)


def test_mcp_beyond_concave_region_is_unpenalized():
    # z = 2 > gamma * lambda = 1.5, so the minimizer is the unpenalized z / v = 2
    spec = make("mcp", 0.5, gamma=3.0)
    assert abs(grid_minimizer(2.0, 1.0, spec) - 2.0) < 1e-6
    assert threshold(2.0, 1.0, spec) == pytest.approx(2.0, abs=1e-12)


def test_mcp_inside_concave_region():
    # (|z| - lambda) / (1 - 1/gamma) = 0.5 / (2/3) = 0.75
    spec = make("mcp", 0.5, gamma=3.0)
    assert abs(grid_minimizer(1.0, 1.0, spec) - 0.75) < 1e-6
    assert threshold(1.0, 1.0, spec) == pytest.approx(0.75, abs=1e-12)


def test_enet_without_ridge_equals_lasso():
    for z in np.linspace(-3, 3, 41):
        assert threshold(z, 1.3, make("enet", 0.5, 0.0)) == threshold(z, 1.3, make("lasso", 0.5))


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("z,v,lam", [(2.0, 1.0, 0.5), (-1.1, 0.7, 0.4), (0.9, 0.25, 0.3),
                                     (3.3, 2.0, 0.8), (0.05, 0.2, 0.1), (-0.6, 0.2, 0.1)])
def test_threshold_matches_grid_minimizer(family, z, v, lam):
    spec = make(family, lam, lambda2=0.3)
    expected = grid_minimizer(z, v, spec)
    assert threshold(z, v, spec) == pytest.approx(expected, abs=2e-6)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-5, 5), st.floats(0.05, 3), st.floats(0.01, 2))
def test_threshold_is_odd(family, z, v, lam):
    spec = make(family, lam, 0.2)
    assert threshold(-z, v, spec) == -threshold(z, v, spec)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-5, 5), st.floats(0, 1), st.floats(0.05, 3), st.floats(0.01, 2))
def test_threshold_nondecreasing_in_z(family, z, dz, v, lam):
    spec = make(family, lam, 0.2)
    assert threshold(z + dz, v, spec) >= threshold(z, v, spec) - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-5, 5), st.floats(0.05, 3), st.floats(0.01, 2), st.floats(0, 1))
def test_threshold_shrinks_with_lambda(family, z, v, lam, dlam):
    small = abs(threshold(z, v, make(family, lam, 0.2)))
    large = abs(threshold(z, v, make(family, lam + dlam, 0.2)))
    assert large <= small + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-5, 5), st.floats(0.05, 3), st.floats(0.01, 2))
def test_zero_exactly_when_inside_lambda(family, z, v, lam):
    out = threshold(z, v, make(family, lam, 0.2))
    assert (out == 0) == (abs(z) <= lam)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["mcp", "scad"]), st.floats(-5, 5), st.floats(0.05, 3), st.floats(0.01, 2))
def test_large_gamma_recovers_lasso(family, z, v, lam):
    a = threshold(z, v, make(family, lam, gamma=1e8))
    b = threshold(z, v, make("lasso", lam))
    assert a == pytest.approx(b, abs=1e-6)


def test_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec("mcp", 0.1, gamma=1.0)
    with pytest.raises(ValueError):
        PenaltySpec("scad", 0.1, gamma=2.0)
    with pytest.raises(ValueError):
        PenaltySpec("lasso", 0.1, lambda2=0.5)
    with pytest.raises(ValueError):
        PenaltySpec("ridge")
    assert PenaltySpec("elastic-net").family == "enet"
    assert PenaltySpec("mcp").gamma == 3.0
    assert PenaltySpec("scad").gamma == 3.7


def test_kkt_residual_null_model():
    spec = make("lasso", 0.5)
    assert kkt_residual([0.2, -0.5, 0.1], np.zeros(3), 1.0, spec, [True] * 3) == 0.0


def test_kkt_residual_detects_perturbation():
    # exact solution of a 1-D lasso: b = 1.5 with u/n = z - v b = 0.5 = lambda
    spec = make("lasso", 0.5)
    assert kkt_residual([0.5], [1.5], 1.0, spec, [True]) == pytest.approx(0.0)
    # moving b by 0.1 changes the score by v * 0.1
    assert kkt_residual([0.4], [1.6], 1.0, spec, [True]) == pytest.approx(0.1)


def test_kkt_residual_unpenalized_needs_zero_score():
    spec = make("lasso", 0.5)
    assert kkt_residual([0.3], [0.0], 1.0, spec, [False]) == pytest.approx(0.3)


def test_selection_condition_interior():
    lam = 0.4
    assert not selection_condition(0.3 * lam * 50, 50.0, 0.0, 50, lam)
    assert selection_condition(0.5 * 50, 50.0, 1.0, 50, lam)
