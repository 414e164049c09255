"""Penalty families, their coordinate-wise thresholding rules and KKT checks.

Concavity of MCP and SCAD is measured on the curvature-scaled coefficient
``v * b``: for a coordinate with quadratic weight ``v`` the penalty is
``P(v * |b|) / v``.  With standardized gaussian data ``v == 1`` and this is
the ordinary penalty; for weighted (logistic, Cox) problems it keeps every
one-dimensional subproblem convex and makes the selection rule
``|u_j + v_j b_j| / n > lambda`` exact for all four families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

LASSO, ENET, MCP, SCAD = 0, 1, 2, 3
_CODES = {"lasso": LASSO, "enet": ENET, "mcp": MCP, "scad": SCAD}
_ALIASES = {"elasticnet": "enet", "elastic-net": "enet", "elastic_net": "enet"}
DEFAULT_GAMMA = {"mcp": 3.0, "scad": 3.7}


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty family with its tuning parameters.

    ``lam`` is the lasso weight (lambda_1 for the elastic net) and is
    overwritten per grid point when fitting a path; ``lambda2`` is the
    elastic-net ridge weight; ``gamma`` the MCP/SCAD concavity.
    """

    family: str = "lasso"
    lam: float = 0.0
    lambda2: float = 0.0
    gamma: float = None

    def __post_init__(self):
        fam = str(self.family).lower()
        fam = _ALIASES.get(fam, fam)
        if fam not in _CODES:
            raise ValueError(f"unknown penalty {self.family!r}; expected one of {sorted(_CODES)}")
        object.__setattr__(self, "family", fam)
        gamma = DEFAULT_GAMMA.get(fam, np.inf) if self.gamma is None else float(self.gamma)
        object.__setattr__(self, "gamma", gamma)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if fam == "mcp" and not gamma > 1:
            raise ValueError("MCP requires gamma > 1")
        if fam == "scad" and not gamma > 2:
            raise ValueError("SCAD requires gamma > 2")
        if fam == "enet":
            if self.lambda2 < 0:
                raise ValueError("elastic net requires lambda2 >= 0")
        elif self.lambda2 != 0:
            raise ValueError("lambda2 applies only to the elastic net")

    @property
    def code(self):
        return _CODES[self.family]

    @property
    def convex(self):
        return self.family in ("lasso", "enet")

    def at(self, lam):
        return PenaltySpec(self.family, float(lam), self.lambda2, self.gamma)


# ------------------------------------------------------------------ #
# Scalar kernels (shared with the coordinate-descent solver)
# ------------------------------------------------------------------ #


@njit(cache=True, nogil=True)
def _threshold(z, v, lam, lam2, gamma, code):
    az = abs(z)
    if az <= lam:
        return 0.0
    s = 1.0 if z > 0 else -1.0
    if code == LASSO:
        return s * (az - lam) / v
    if code == ENET:
        return s * (az - lam) / (v + lam2)
    if code == MCP:
        if az <= gamma * lam:
            return s * (az - lam) / (v * (1.0 - 1.0 / gamma))
        return z / v
    # SCAD
    if az <= 2.0 * lam:
        return s * (az - lam) / v
    if az <= gamma * lam:
        return s * (az - gamma * lam / (gamma - 1.0)) / (v * (1.0 - 1.0 / (gamma - 1.0)))
    return z / v


@njit(cache=True, nogil=True)
def _derivative(b, v, lam, lam2, gamma, code):
    """Penalty slope at |b| > 0 for a coordinate with weight v."""
    ab = abs(b)
    if code == LASSO:
        return lam
    if code == ENET:
        return lam + lam2 * ab
    c = v * ab
    if code == MCP:
        return max(lam - c / gamma, 0.0)
    if c <= lam:
        return lam
    if c <= gamma * lam:
        return (gamma * lam - c) / (gamma - 1.0)
    return 0.0


def threshold(z, v, spec):
    """Minimizer of ``v/2 * (b - z/v)**2 + P(b)`` for one coordinate.

    >>> threshold(2.0, 1.0, PenaltySpec("lasso", 0.5))
    1.5
    """
    if not v > 0:
        raise ValueError("v must be positive")
    return _threshold(float(z), float(v), spec.lam, spec.lambda2, spec.gamma, spec.code)


def penalty_value(beta, spec, v=1.0):
    """Penalty ``P(beta)`` summed over coordinates, with curvature weights ``v``."""
    b = np.abs(np.atleast_1d(np.asarray(beta, dtype=float)))
    v = np.broadcast_to(np.asarray(v, dtype=float), b.shape)
    lam, g = spec.lam, spec.gamma
    if spec.family == "lasso":
        return float(lam * b.sum())
    if spec.family == "enet":
        return float(lam * b.sum() + 0.5 * spec.lambda2 * (b * b).sum())
    c = v * b
    if spec.family == "mcp":
        val = np.where(c <= g * lam, lam * c - c * c / (2 * g), 0.5 * g * lam * lam)
    else:
        val = np.where(
            c <= lam,
            lam * c,
            np.where(c <= g * lam, (2 * g * lam * c - c * c - lam * lam) / (2 * (g - 1)), 0.5 * lam * lam * (g + 1)),
        )
    return float((val / v).sum())


def penalty_slope(beta, v, spec):
    """Vectorized penalty slope at nonzero coefficients (0 where beta == 0)."""
    beta = np.asarray(beta, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), beta.shape)
    out = np.zeros_like(beta)
    for j in np.flatnonzero(beta):
        out[j] = _derivative(beta[j], v[j], spec.lam, spec.lambda2, spec.gamma, spec.code)
    return out


def kkt_residual(u_over_n, beta, v_over_n, spec, penalized):
    """Largest violation of the penalized score equations.

    Active penalized features must satisfy ``u_j/n = sign(b_j) P'(b_j)``,
    inactive ones ``|u_j/n| <= lambda`` and unpenalized ones ``u_j/n = 0``.
    """
    g = np.asarray(u_over_n, dtype=float)
    beta = np.asarray(beta, dtype=float)
    penalized = np.asarray(penalized, dtype=bool)
    if not (g.shape == beta.shape == penalized.shape):
        raise ValueError("inconsistent lengths")
    v = np.broadcast_to(np.asarray(v_over_n, dtype=float), beta.shape)
    active = beta != 0
    res = np.where(penalized, np.maximum(np.abs(g) - spec.lam, 0.0), np.abs(g))
    act = penalized & active
    if act.any():
        slope = penalty_slope(beta[act], v[act], spec)
        res[act] = np.abs(g[act] - np.sign(beta[act]) * slope)
    return float(res.max()) if res.size else 0.0


def selection_condition(u_j, v_j, beta_j, n, lambda_effective):
    """``|u_j + v_j b_j| / n > lambda``: true exactly for selected features at a solution."""
    return np.abs(np.asarray(u_j) + np.asarray(v_j) * np.asarray(beta_j)) / n > lambda_effective
