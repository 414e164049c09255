"""Likelihood families: gaussian, binomial (logistic) and Cox partial likelihood.

Every family reports, for a linear predictor ``eta``, the diagonal of the
weight matrix ``W`` (second derivatives of the loss in ``eta``), the score
residuals ``s`` with ``u = X.T @ s`` and the per-observation loss
``-loglik / n``.  Cox uses the Breslow convention for ties and, by
default, only the diagonal of ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import Dataset

GAUSSIAN, BINOMIAL, COX = 0, 1, 2
FAMILY_CODES = {"gaussian": GAUSSIAN, "binomial": BINOMIAL, "cox": COX}

PI_CLAMP = 1e-5


class DegenerateLikelihood(ArithmeticError):
    pass


@dataclass(frozen=True)
class FamilyState:
    eta: np.ndarray
    working_weights: np.ndarray
    working_residuals: np.ndarray
    loss: float


# ------------------------------------------------------------------ #
# Kernels
# ------------------------------------------------------------------ #


@njit(cache=True, nogil=True)
def _gaussian(y, eta, w, s):
    n = eta.shape[0]
    loss = 0.0
    for i in range(n):
        r = y[i] - eta[i]
        s[i] = r
        w[i] = 1.0
        loss += r * r
    return 0.5 * loss / n


@njit(cache=True, nogil=True)
def _binomial(y, eta, w, s):
    n = eta.shape[0]
    loss = 0.0
    for i in range(n):
        e = eta[i]
        if e >= 0:
            pi = 1.0 / (1.0 + np.exp(-e))
            loss += np.log1p(np.exp(-e)) + e - y[i] * e
        else:
            t = np.exp(e)
            pi = t / (1.0 + t)
            loss += np.log1p(t) - y[i] * e
        if pi < PI_CLAMP:
            pi = PI_CLAMP
        elif pi > 1.0 - PI_CLAMP:
            pi = 1.0 - PI_CLAMP
        s[i] = y[i] - pi
        w[i] = pi * (1.0 - pi)
    return loss / n


@njit(cache=True, nogil=True)
def _cox(status, start, count, eta, w, s):
    n = eta.shape[0]
    m = start.shape[0]
    # suffix sums of exp(eta), each scaled by its own suffix maximum so that
    # no risk set underflows however spread out eta becomes
    top = np.empty(n)
    tail = np.empty(n)
    hi = -np.inf
    acc = 0.0
    for i in range(n - 1, -1, -1):
        if eta[i] > hi:
            acc = acc * np.exp(hi - eta[i]) + 1.0
            hi = eta[i]
        else:
            acc += np.exp(eta[i] - hi)
        top[i] = hi
        tail[i] = acc
    loss = 0.0
    for i in range(n):
        if status[i] > 0:
            loss -= eta[i]
    # a = sum_k count_k / D_k and b = sum_k count_k / D_k^2 over risk sets
    # containing i, stored relative to exp(-ref) and exp(-2 ref)
    a = 0.0
    b = 0.0
    ref = np.inf
    k = 0
    for i in range(n):
        while k < m and start[k] <= i:
            mk = top[start[k]]
            d = tail[start[k]]
            if ref == np.inf:
                a = count[k] / d
                b = count[k] / (d * d)
            else:
                f = np.exp(mk - ref)
                a = a * f + count[k] / d
                b = b * f * f + count[k] / (d * d)
            ref = mk
            loss += count[k] * (np.log(d) + mk)
            k += 1
        if ref == np.inf:
            s[i] = status[i]
            w[i] = 0.0
            continue
        e = np.exp(eta[i] - ref)
        ea = e * a
        s[i] = status[i] - ea
        wi = ea - e * e * b
        w[i] = wi if wi > 0.0 else 0.0
    return loss / n


@njit(cache=True, nogil=True)
def evaluate(code, y, start, count, eta, w, s):
    """Fill ``w`` and ``s`` for the family ``code`` and return the loss."""
    if code == GAUSSIAN:
        return _gaussian(y, eta, w, s)
    if code == BINOMIAL:
        return _binomial(y, eta, w, s)
    return _cox(y, start, count, eta, w, s)


# ------------------------------------------------------------------ #
# Public API
# ------------------------------------------------------------------ #

_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0)


def family_arrays(dataset: Dataset):
    """(code, y, start, count) as consumed by :func:`evaluate`."""
    fam = dataset.family
    if fam == "cox":
        r = dataset.risk
        return COX, np.array(dataset.response.status, dtype=float), np.array(r.start), np.array(r.count)
    return FAMILY_CODES[fam], np.array(dataset.response.y, dtype=float), _EMPTY_I, _EMPTY_F


def _state(dataset, beta, intercept, family):
    if dataset.family != family:
        raise ValueError(f"dataset has a {dataset.family} response, not {family}")
    eta = dataset.x @ np.asarray(beta, dtype=float) + intercept
    code, y, start, count = family_arrays(dataset)
    w = np.empty(dataset.n)
    s = np.empty(dataset.n)
    loss = evaluate(code, y, start, count, eta, w, s)
    return FamilyState(eta, w, s, float(loss))


def gaussian_state(dataset, beta, intercept=0.0):
    return _state(dataset, beta, intercept, "gaussian")


def binomial_state(dataset, beta, intercept=0.0):
    return _state(dataset, beta, intercept, "binomial")


def cox_state(dataset, beta):
    st = _state(dataset, beta, 0.0, "cox")
    if not np.any(st.working_weights > 0):
        raise DegenerateLikelihood("degenerate partial likelihood")
    return st


def family_state(dataset, beta, intercept=0.0):
    if dataset.family == "cox":
        return cox_state(dataset, beta)
    return _state(dataset, beta, intercept, dataset.family)


def score(dataset, state):
    """Score vector ``u = X.T s`` (gradient of the log-likelihood)."""
    return dataset.x.T @ state.working_residuals


def quadratic_weights(dataset, state):
    """``v_j = x_j' W x_j`` using the diagonal of ``W``."""
    return (dataset.x * dataset.x).T @ state.working_weights


def deviance(dataset, beta, intercept=0.0):
    """Per-observation deviance used as the cross-validation error.

    Gaussian: mean squared error.  Binomial: mean binomial deviance.
    Cox: ``-2 * log partial likelihood / n``.
    """
    return 2.0 * family_state(dataset, beta, intercept).loss


# ------------------------------------------------------------------ #
# Cox: exact weight structure
# ------------------------------------------------------------------ #


def cox_risk_probabilities(dataset, eta):
    """``pi[i, k] = exp(eta_i) / sum_{l in R_k} exp(eta_l)`` (zero outside R_k)."""
    r = dataset.risk
    e = np.exp(eta - eta.max())
    tail = np.cumsum(e[::-1])[::-1]
    pi = np.zeros((dataset.n, r.m))
    for k, (s0, d0) in enumerate(zip(r.start, tail[r.start])):
        pi[s0:, k] = e[s0:] / d0
    return pi


def cox_weight_matrix(dataset, eta):
    """Dense second-derivative matrix of the negative log partial likelihood in ``eta``.

    Off-diagonal entries are ``-sum_k d_k pi_ik pi_lk``.
    """
    pi = cox_risk_probabilities(dataset, eta)
    d = dataset.risk.count
    return np.diag(pi @ d) - (pi * d) @ pi.T


def cox_full_quadratic_weights(dataset, eta):
    """``x_j' W x_j`` with the full Cox ``W``, in O(n p) via risk-set sums."""
    r = dataset.risk
    x = dataset.x
    e = np.exp(eta - eta.max())

    def tail(a):
        return np.cumsum(a[::-1], axis=0)[::-1]

    s0 = tail(e)[r.start]
    s1 = tail(e[:, None] * x)[r.start] / s0[:, None]
    s2 = tail(e[:, None] * x * x)[r.start] / s0[:, None]
    return r.count @ (s2 - s1 * s1)
