"""Datasets, responses and column standardization.

Penalized columns are put on a common scale (mean 0, ``sum(x**2) == n``)
before fitting.  A :class:`StandardizationRecord` keeps what is needed to
map standardized coefficients back to the raw feature scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Invalid or unusable input data."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# ------------------------------------------------------------------ #
# Responses
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class Continuous:
    y: np.ndarray
    family = "gaussian"

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim != 1 or not np.all(np.isfinite(y)):
            raise DataError("continuous response must be a finite vector")
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    def take(self, idx):
        return Continuous(self.y[idx])


@dataclass(frozen=True)
class Binary:
    y: np.ndarray
    family = "binomial"

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
            raise DataError("binary response must contain only 0 and 1")
        if y.min() == y.max():
            raise DataError("binary response needs at least one 0 and one 1")
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    def take(self, idx):
        return Binary(self.y[idx])


@dataclass(frozen=True)
class Survival:
    """Right-censored survival times; ``status == 1`` marks an observed event."""

    time: np.ndarray
    status: np.ndarray
    family = "cox"

    def __post_init__(self):
        t = _frozen(self.time)
        d = _frozen(self.status)
        if t.ndim != 1 or t.shape != d.shape:
            raise DataError("time and status must be vectors of equal length")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise DataError("survival times must be finite and positive")
        if not np.all((d == 0) | (d == 1)):
            raise DataError("status must contain only 0 and 1")
        if d.sum() < 1:
            raise DataError("survival response needs at least one event")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "status", d)

    def __len__(self):
        return self.time.shape[0]

    def take(self, idx):
        return Survival(self.time[idx], self.status[idx])


Response = Continuous | Binary | Survival


# ------------------------------------------------------------------ #
# Standardization
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class StandardizationRecord:
    """Column means and scales used to standardize a design.

    ``constant`` flags zero-variance columns; those are centered to zero,
    given scale 1, and never enter a fit.
    """

    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray

    @classmethod
    def identity(cls, p):
        return cls(np.zeros(p), np.ones(p), np.zeros(p, dtype=bool))


def standardize(raw, penalized=None):
    """Center each column and scale it so that ``sum(x_j**2) == n``.

    Parameters
    ----------
    raw : (n, p) array_like
        Finite feature matrix, ``n >= 2``.
    penalized : (p,) array_like of bool, optional
        Penalization flags.  Used only to check that at least one
        penalized column is usable.

    Returns
    -------
    x : (n, p) np.ndarray
    record : StandardizationRecord
    """
    x = np.array(raw, dtype=float)
    if x.ndim != 2:
        raise DataError("design matrix must be two-dimensional")
    n, p = x.shape
    if n < 2 or p < 1:
        raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if not np.all(np.isfinite(x)):
        raise DataError("design matrix contains non-finite entries")
    penalized = np.ones(p, dtype=bool) if penalized is None else np.asarray(penalized, dtype=bool)

    means = x.mean(axis=0)
    x -= means
    scales = np.sqrt((x * x).sum(axis=0) / n)
    # relative test so huge-but-constant columns are still caught
    constant = scales <= 1e-12 * np.maximum(np.abs(means), 1.0)
    scales[constant] = 1.0
    x[:, constant] = 0.0
    x /= scales
    if penalized.any() and np.all(constant[penalized]):
        raise DataError("no usable penalized features")
    return x, StandardizationRecord(_frozen(means), _frozen(scales), _frozen(constant, bool))


def unstandardize_coefficients(beta_std, record):
    """Map standardized coefficients to the raw feature scale.

    Returns
    -------
    beta_raw : np.ndarray
    intercept_adjustment : float
        Amount to add to the standardized-scale intercept so that raw-scale
        predictions agree.
    """
    beta_std = np.asarray(beta_std, dtype=float)
    if beta_std.shape != record.scales.shape:
        raise ValueError(
            f"coefficient length {beta_std.shape[0]} does not match record length {record.scales.shape[0]}"
        )
    beta_raw = np.where(record.constant, 0.0, beta_std / record.scales)
    return beta_raw, float(-beta_raw @ record.means)


# ------------------------------------------------------------------ #
# Dataset
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class RiskSetIndex:
    """Event-time structure of time-sorted survival data (Breslow ties).

    Rows are sorted by time ascending.  For the k-th unique event time,
    the risk set is rows ``start[k]:`` and ``count[k]`` events occur
    there.  ``first[i]`` is the first row sharing row i's time.
    """

    event_times: np.ndarray
    start: np.ndarray
    count: np.ndarray
    first: np.ndarray

    @classmethod
    def build(cls, time, status):
        time = np.asarray(time, dtype=float)
        status = np.asarray(status, dtype=float)
        if np.any(np.diff(time) < 0):
            raise ValueError("times must be sorted ascending")
        n = time.shape[0]
        new_group = np.r_[True, time[1:] != time[:-1]]
        group_start = np.flatnonzero(new_group)
        first = group_start[np.cumsum(new_group) - 1]
        events = np.add.reduceat(status, group_start)
        has_event = events > 0
        return cls(
            _frozen(time[group_start[has_event]]),
            _frozen(group_start[has_event], np.int64),
            _frozen(events[has_event]),
            _frozen(first if n else np.zeros(0), np.int64),
        )

    @property
    def m(self):
        return self.start.shape[0]


@dataclass(frozen=True)
class Dataset:
    """A design matrix with its response and penalization flags.

    Survival data are stored sorted by time ascending; ``order[i]`` is the
    original row index of internal row ``i``.
    """

    x: np.ndarray
    response: Response
    penalized: np.ndarray = None
    feature_names: tuple = None
    record: StandardizationRecord = None
    order: np.ndarray = None
    risk: RiskSetIndex = field(default=None, repr=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 2:
            raise DataError("design matrix must be two-dimensional")
        n, p = x.shape
        if n < 2 or p < 1:
            raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(x)):
            raise DataError("design matrix contains non-finite entries")
        if len(self.response) != n:
            raise DataError(f"response length {len(self.response)} != {n} rows")
        pen = np.ones(p, dtype=bool) if self.penalized is None else np.array(self.penalized, dtype=bool)
        if pen.shape != (p,):
            raise DataError("penalized flags must have length p")
        names = tuple(f"V{j + 1}" for j in range(p)) if self.feature_names is None else tuple(map(str, self.feature_names))
        if len(names) != p:
            raise DataError("feature_names must have length p")
        record = self.record if self.record is not None else StandardizationRecord.identity(p)
        order = np.arange(n) if self.order is None else np.asarray(self.order, dtype=np.int64)
        response = self.response
        risk = self.risk
        if isinstance(response, Survival) and risk is None:
            perm = np.argsort(response.time, kind="stable")
            x = x[perm]
            response = response.take(perm)
            order = order[perm]
            risk = RiskSetIndex.build(response.time, response.status)
        x.setflags(write=False)
        pen.setflags(write=False)
        order.setflags(write=False)
        for name, value in [("x", x), ("penalized", pen), ("feature_names", names), ("record", record),
                            ("order", order), ("response", response), ("risk", risk)]:
            object.__setattr__(self, name, value)

    @classmethod
    def from_raw(cls, raw, response, penalized=None, feature_names=None):
        """Standardize ``raw`` and wrap it with ``response``."""
        x, record = standardize(raw, penalized)
        return cls(x, response, penalized, feature_names, record)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def family(self):
        return self.response.family

    @property
    def usable(self):
        """Columns that may enter a fit (non-constant)."""
        return ~self.record.constant

    @property
    def selectable(self):
        """Penalized, non-constant columns: the features counted by mFDR."""
        return self.penalized & self.usable

    def subset(self, rows):
        """Rows ``rows`` (internal order) as a new dataset; no re-standardization."""
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.response.take(rows), self.penalized,
                       self.feature_names, self.record, self.order[rows])

    def with_penalized(self, penalized):
        return Dataset(self.x, self.response, penalized, self.feature_names, self.record, self.order, self.risk)


# ------------------------------------------------------------------ #
# CSV ingestion
# ------------------------------------------------------------------ #


def read_csv(path, y, family, status=None, unpenalized: Sequence[str] = (), columns=None):
    """Load a header-bearing CSV file into a standardized :class:`Dataset`.

    ``y`` names the response column (survival time for ``family="cox"``),
    ``status`` the event indicator for Cox models.  Every remaining column
    (or those listed in ``columns``) becomes a feature; columns listed in
    ``unpenalized`` are kept out of the penalty.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    index = {h: k for k, h in enumerate(header)}
    needed = [y] + ([status] if family == "cox" else [])
    if family == "cox" and status is None:
        raise DataError("cox family requires a status column")
    for col in needed + list(unpenalized) + list(columns or []):
        if col not in index:
            raise DataError(f"{path}: column {col!r} not found in header")
    reserved = set(needed)
    features = list(columns) if columns else [h for h in header if h not in reserved]

    values = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.upper() in ("NA", "NAN"):
                raise DataError(f"{path}: missing value at row {r}, column {header[c]!r}")
            try:
                values[r - 2, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column {header[c]!r}") from None

    yv = values[:, index[y]]
    if family == "gaussian":
        response = Continuous(yv)
    elif family == "binomial":
        response = Binary(yv)
    elif family == "cox":
        response = Survival(yv, values[:, index[status]])
    else:
        raise DataError(f"unknown family {family!r}")
    x = values[:, [index[f] for f in features]]
    penalized = np.array([f not in set(unpenalized) for f in features])
    return Dataset.from_raw(x, response, penalized, features)
