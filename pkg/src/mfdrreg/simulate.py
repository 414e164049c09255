"""Seeded simulation scenarios for checking the mFDR bound and comparing methods.

Replication ``r`` of a scenario with seed ``s`` draws everything from
``numpy.random.default_rng([s, r, stream])`` with separate streams for the
features, failure (or outcome) noise, censoring and any method-level
randomness (sample splits, CV folds).  Results therefore do not depend on
the number of worker threads or the order in which replications finish,
and two scenarios that differ only in their censoring share the same
features and failure times.

Features are laid out as ``[A | B | C]``: causal features (nonzero
coefficients), features correlated with a causal feature, and noise.
"""

from __future__ import annotations

import logging
import math
import secrets
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .comparators import sample_split, univariate_screen
from .data import Binary, Continuous, DataError, Dataset, Survival
from .family import DegenerateLikelihood
from .mfdr import mfdr_path
from .penalty import PenaltySpec
from .selection import cross_validate, select_index_by_mfdr
from .solver import ConvergenceError, SolverControls, fit_path, make_lambda_grid

log = logging.getLogger(__name__)

FEATURES, OUTCOME, CENSORING, METHOD = 0, 1, 2, 3
CLASSES = ("A", "B", "C")
COMPARATORS = ("univariate", "sample_split", "cv")


@dataclass(frozen=True)
class Correlation:
    """Feature correlation structure.

    ``independent``: all features iid N(0, 1).
    ``ar``: features after the causal ones follow a stationary AR(``rho``)
    sequence, ``cor(x_j, x_k) = rho^|j - k|``.
    ``blocks``: each causal feature heads a block of ``block_size``
    exchangeable features with pairwise correlation ``block_rho``; the
    remaining noise features follow AR(``rho``) indexed over the noise block.
    """

    kind: str = "independent"
    rho: float = 0.0
    block_size: int = 10
    block_rho: float = 0.5

    def __post_init__(self):
        if self.kind not in ("independent", "ar", "blocks"):
            raise ValueError(f"unknown correlation {self.kind!r}")
        if not -1 < self.rho < 1:
            raise ValueError("rho must be in (-1, 1)")
        if not 0 <= self.block_rho < 1:
            raise ValueError("block_rho must be in [0, 1)")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    p: int
    beta: tuple
    family: str = "gaussian"
    penalty: str = "lasso"
    correlation: Correlation = Correlation()
    censoring: tuple = None
    sigma: float = 1.0
    replications: int = 200
    seed: int = 1
    lambda_policy: str = "fixed"
    alpha: float = 0.1
    nlambda: int = 100
    lambda_min_ratio: float = 0.05
    comparators: tuple = ()
    readout: float = 0.2

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        beta = beta + (0.0,) * (self.p - len(beta))
        object.__setattr__(self, "beta", beta)
        if len(beta) != self.p:
            raise ValueError(f"beta has {len(beta)} entries for p = {self.p}")
        if self.censoring is not None:
            cens = tuple(float(g) for g in self.censoring)
            cens = cens + (0.0,) * (self.p - len(cens))
            if len(cens) != self.p:
                raise ValueError(f"censoring has {len(cens)} entries for p = {self.p}")
            object.__setattr__(self, "censoring", cens)
            if self.family != "cox":
                raise ValueError("censoring applies only to cox scenarios")
        object.__setattr__(self, "comparators", tuple(self.comparators))
        if self.family not in ("gaussian", "binomial", "cox"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.n < 4 or self.p < 1:
            raise ValueError("need n >= 4 and p >= 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.lambda_policy not in ("fixed", "mfdr"):
            raise ValueError("lambda_policy must be 'fixed' or 'mfdr'")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        for c in self.comparators:
            if c not in COMPARATORS:
                raise ValueError(f"unknown comparator {c!r}; expected {COMPARATORS}")
        if self.correlation.kind == "blocks" and self.n_causal * self.correlation.block_size > self.p:
            raise ValueError("blocks do not fit in p features")
        PenaltySpec(self.penalty)

    @property
    def n_causal(self):
        return int(np.count_nonzero(self.beta))

    def feature_classes(self):
        """Class label ('A', 'B' or 'C') of every feature."""
        beta = np.asarray(self.beta)
        labels = np.full(self.p, "C")
        labels[beta != 0] = "A"
        if self.correlation.kind == "blocks":
            a = self.n_causal
            labels[a: a * self.correlation.block_size] = "B"
        return labels


# ------------------------------------------------------------------ #
# Generators
# ------------------------------------------------------------------ #


def _ar_columns(z, rho):
    """In-place stationary AR(rho) recursion across columns of iid normals."""
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, z.shape[1]):
        z[:, j] = rho * z[:, j - 1] + scale * z[:, j]
    return z


def generate_features(n, p, correlation=Correlation(), rng=None, n_causal=0):
    """Standard normal design with the requested correlation structure.

    Parameters
    ----------
    n, p : int
    correlation : Correlation
    rng : numpy.random.Generator or int, optional
    n_causal : int
        Number of leading causal features, kept out of the AR noise block.
    """
    rng = np.random.default_rng(rng)
    x = rng.standard_normal((n, p))
    c = correlation
    if c.kind == "ar" and c.rho:
        _ar_columns(x[:, n_causal:], c.rho)
    elif c.kind == "blocks":
        size = c.block_size
        shared = rng.standard_normal((n, n_causal))
        a, s = math.sqrt(c.block_rho), math.sqrt(1.0 - c.block_rho)
        x[:, :n_causal] = a * shared + s * x[:, :n_causal]
        for i in range(n_causal):
            cols = slice(n_causal + i * (size - 1), n_causal + (i + 1) * (size - 1))
            x[:, cols] = a * shared[:, [i]] + s * x[:, cols]
        if c.rho:
            _ar_columns(x[:, n_causal * size:], c.rho)
    return x


def generate_response(x, beta, family, censoring=None, rng=None, censoring_rng=None, sigma=1.0):
    """Outcome drawn from ``family`` with linear predictor ``x @ beta``.

    Cox failure times are exponential with rate ``exp(x beta)``; when
    ``censoring`` coefficients are given, censoring times are exponential
    with rate ``exp(x censoring)`` and the observed time is the minimum.
    """
    rng = np.random.default_rng(rng)
    eta = x @ np.asarray(beta, dtype=float)
    n = eta.shape[0]
    if family == "gaussian":
        return Continuous(eta + sigma * rng.standard_normal(n))
    if family == "binomial":
        prob = 1.0 / (1.0 + np.exp(-eta))
        return Binary((rng.random(n) < prob).astype(float))
    if family == "cox":
        failure = rng.exponential(1.0, n) / np.exp(eta)
        if censoring is None:
            return Survival(failure, np.ones(n))
        crng = np.random.default_rng(censoring_rng)
        cens = crng.exponential(1.0, n) / np.exp(x @ np.asarray(censoring, dtype=float))
        return Survival(np.minimum(failure, cens), (failure <= cens).astype(float))
    raise ValueError(f"unknown family {family!r}")


def replication_stream(seed, r, stream):
    return np.random.default_rng([seed, r, stream])


def simulate_dataset(scenario: Scenario, r):
    """The dataset of replication ``r``."""
    x = generate_features(scenario.n, scenario.p, scenario.correlation,
                          replication_stream(scenario.seed, r, FEATURES), scenario.n_causal)
    resp = generate_response(x, scenario.beta, scenario.family, scenario.censoring,
                             replication_stream(scenario.seed, r, OUTCOME),
                             replication_stream(scenario.seed, r, CENSORING), scenario.sigma)
    return Dataset.from_raw(x, resp)


# ------------------------------------------------------------------ #
# Runner
# ------------------------------------------------------------------ #


@dataclass
class Replication:
    index: int
    class_counts: np.ndarray = None  # (3, n_lambda) selections per class along the path
    mfdr_hat: np.ndarray = None
    expected_false: np.ndarray = None
    methods: dict = field(default_factory=dict)  # method -> (A, B, C) counts
    censoring_rate: float = float("nan")
    truncated: bool = False
    error: str = None


@dataclass(frozen=True)
class MethodSummary:
    mean_counts: tuple  # mean A, B, C selections
    observed_fdr: float  # mean of C / max(selected, 1)
    ac_ratio: float  # total A / total C

    def row(self):
        return dict(zip(("mean_A", "mean_B", "mean_C"), self.mean_counts),
                    observed_fdr=self.observed_fdr, ac_ratio=self.ac_ratio)


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    lambdas: np.ndarray  # shared grid, or None under the mFDR policy
    mean_class_counts: np.ndarray  # (3, n_lambda)
    empirical_mfdr: np.ndarray
    empirical_mfdr_se: np.ndarray
    mean_mfdr_hat: np.ndarray
    mean_mfdr_hat_se: np.ndarray
    mean_expected_false: np.ndarray
    readout_lambda: float
    readout_mfdr_hat: float
    methods: dict
    completed: int
    failures: int
    failure_messages: tuple
    mean_censoring_rate: float
    truncated_paths: int = 0

    def lambda_rows(self):
        if self.lambdas is None:
            return []
        rows = []
        for k, lam in enumerate(self.lambdas):
            rows.append(dict(lambda_=lam,
                             mean_A=self.mean_class_counts[0, k],
                             mean_B=self.mean_class_counts[1, k],
                             mean_C=self.mean_class_counts[2, k],
                             empirical_mfdr=self.empirical_mfdr[k],
                             empirical_mfdr_se=self.empirical_mfdr_se[k],
                             mean_mfdr_hat=self.mean_mfdr_hat[k],
                             mean_mfdr_hat_se=self.mean_mfdr_hat_se[k],
                             mean_EF=self.mean_expected_false[k]))
        return rows

    def summary_rows(self):
        rows = [("replications", self.scenario.replications), ("completed", self.completed),
                ("failures", self.failures), ("truncated_paths", self.truncated_paths), ("mean_censoring_rate", self.mean_censoring_rate),
                ("readout_target", self.scenario.readout),
                ("readout_lambda", self.readout_lambda), ("readout_mfdr_hat", self.readout_mfdr_hat)]
        for name, m in self.methods.items():
            for key, value in m.row().items():
                rows.append((f"{name}.{key}", value))
        return rows


def _counts(labels, chosen):
    return tuple(int(np.count_nonzero(chosen & (labels == c))) for c in CLASSES)


def _run_one(scenario, r, grid, controls, labels):
    rep = Replication(r)
    try:
        ds = simulate_dataset(scenario, r)
        if scenario.family == "cox":
            rep.censoring_rate = 1.0 - float(np.mean(ds.response.status))
        spec = PenaltySpec(scenario.penalty)
        g = grid if grid is not None else make_lambda_grid(ds, spec, scenario.nlambda, scenario.lambda_min_ratio)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            path = fit_path(ds, spec, g, controls)
        rep.truncated = path.truncated
        table = mfdr_path(path)
        k_total = len(np.asarray(getattr(g, "values", g)))
        counts = np.full((3, k_total), np.nan)
        active = path.beta != 0
        for i, c in enumerate(CLASSES):
            counts[i, : path.n_lambda] = active[:, labels == c].sum(axis=1)
        rep.class_counts = counts
        rep.mfdr_hat = np.full(k_total, np.nan)
        rep.mfdr_hat[: path.n_lambda] = table.mfdr
        rep.expected_false = np.full(k_total, np.nan)
        rep.expected_false[: path.n_lambda] = table.expected_false_discoveries
        k = select_index_by_mfdr(table, scenario.alpha)
        if path.truncated and table.mfdr[-1] <= scenario.alpha:
            # the rule might have picked a lambda beyond the truncation point
            raise ConvergenceError(path.n_lambda, path.kkt[-1], "path truncated before the mFDR rule resolved")
        chosen = np.zeros(scenario.p, dtype=bool) if k is None else active[k]
        rep.methods["mfdr"] = _counts(labels, chosen)
        q = scenario.alpha
        if "univariate" in scenario.comparators:
            res = univariate_screen(ds, q)
            rep.methods["univariate"] = _counts(labels, _discovered(res, scenario.p))
        if "sample_split" in scenario.comparators:
            seed = int(replication_stream(scenario.seed, r, METHOD).integers(2**63))
            res = sample_split(ds, q, seed=seed)
            rep.methods["sample_split"] = _counts(labels, _discovered(res, scenario.p))
        if "cv" in scenario.comparators:
            seed = int(replication_stream(scenario.seed, r, METHOD + 1).integers(2**63))
            cv = cross_validate(ds, spec, g, folds=10, seed=seed, controls=controls)
            rep.methods["cv"] = _counts(labels, active[min(cv.min_index, path.n_lambda - 1)])
    except (ConvergenceError, DegenerateLikelihood, DataError, np.linalg.LinAlgError) as exc:
        rep.error = f"replication {r}: {type(exc).__name__}: {exc}"
        log.warning(rep.error)
    return rep


def _discovered(results, p):
    out = np.zeros(p, dtype=bool)
    for t in results:
        out[t.feature] = t.adjusted_discovery
    return out


def _interpolate_readout(lambdas, emp, mhat, target):
    """Mean mFDR estimate where the empirical curve first reaches ``target``.

    Linear interpolation between neighbouring grid points (linear in
    log-lambda on a log-spaced grid).
    """
    hits = np.flatnonzero(emp >= target)
    if hits.size == 0 or hits[0] == 0:
        return float("nan"), float("nan")
    k = hits[0]
    e0, e1 = emp[k - 1], emp[k]
    t = (target - e0) / (e1 - e0) if e1 > e0 else 1.0
    loglam = (1 - t) * math.log(lambdas[k - 1]) + t * math.log(lambdas[k])
    return math.exp(loglam), float((1 - t) * mhat[k - 1] + t * mhat[k])


def run_scenario(scenario: Scenario, controls=None, threads=1):
    """Run every replication of ``scenario`` and aggregate.

    Under the ``fixed`` policy all replications share the default grid of
    replication 0, and the per-lambda aggregates are reported: the empirical
    mFDR as a ratio of means (total noise selections over total
    selections, with a delta-method Monte-Carlo SE) and the mean estimated
    mFDR.  Under either policy the mFDR rule (smallest lambda with
    estimated mFDR <= alpha) and any comparators are summarized per
    method.  Failed replications are excluded and counted.
    """
    controls = replace(SolverControls() if controls is None else controls, partial=True)
    labels = scenario.feature_classes()
    grid = None
    if scenario.lambda_policy == "fixed":
        ds0 = simulate_dataset(scenario, 0)
        grid = make_lambda_grid(ds0, PenaltySpec(scenario.penalty), scenario.nlambda,
                                scenario.lambda_min_ratio).values

    def work(r):
        return _run_one(scenario, r, grid, controls, labels)

    reps = range(scenario.replications)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, reps))
    else:
        results = [work(r) for r in reps]
    ok = [x for x in results if x.error is None]
    failed = [x.error for x in results if x.error is not None]

    nan = float("nan")
    lam_out = counts_mean = emp = emp_se = mh = mh_se = ef = None
    readout = (nan, nan)
    if grid is not None and ok:
        counts = np.array([x.class_counts for x in ok])  # (m, 3, K)
        noise = counts[:, 2, :]
        total = counts.sum(axis=1)
        m = counts.shape[0]
        counts_mean = np.nanmean(counts, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            sum_r = np.nansum(total, axis=0)
            emp = np.where(sum_r > 0, np.nansum(noise, axis=0) / sum_r, 0.0)
            resid = noise - emp * total
            mean_r = sum_r / m
            emp_se = np.where(mean_r > 0, np.sqrt(np.nansum(resid**2, axis=0) / max(m * (m - 1), 1)) / mean_r, 0.0)
        mhat = np.array([x.mfdr_hat for x in ok])
        mh = _nanmean(mhat)
        mh_se = _nanse(mhat)
        ef = _nanmean(np.array([x.expected_false for x in ok]))
        lam_out = grid
        readout = _interpolate_readout(grid, emp, mh, scenario.readout)

    methods = {}
    names = ["mfdr"] + [c for c in COMPARATORS if c in scenario.comparators]
    for name in names:
        c = np.array([x.methods[name] for x in ok], dtype=float).reshape(-1, 3)
        if c.shape[0] == 0:
            methods[name] = MethodSummary((nan, nan, nan), nan, nan)
            continue
        sel = c.sum(axis=1)
        fdr = float(np.mean(c[:, 2] / np.maximum(sel, 1)))
        a_tot, c_tot = c[:, 0].sum(), c[:, 2].sum()
        ratio = a_tot / c_tot if c_tot > 0 else (math.inf if a_tot > 0 else nan)
        methods[name] = MethodSummary(tuple(float(v) for v in c.mean(axis=0)), fdr, float(ratio))

    cens = [x.censoring_rate for x in ok]
    return ScenarioResult(
        scenario=scenario, lambdas=lam_out, mean_class_counts=counts_mean,
        empirical_mfdr=emp, empirical_mfdr_se=emp_se, mean_mfdr_hat=mh, mean_mfdr_hat_se=mh_se,
        mean_expected_false=ef, readout_lambda=readout[0], readout_mfdr_hat=readout[1],
        methods=methods, completed=len(ok), failures=len(failed), failure_messages=tuple(failed),
        mean_censoring_rate=float(np.nanmean(cens)) if cens and scenario.family == "cox" else nan,
        truncated_paths=sum(x.truncated for x in ok),
    )


def _nanmean(a):
    good = ~np.isnan(a)
    cnt = good.sum(axis=0)
    return np.where(cnt > 0, np.where(good, a, 0.0).sum(axis=0) / np.maximum(cnt, 1), np.nan)


def _nanse(a):
    good = ~np.isnan(a)
    cnt = good.sum(axis=0)
    mu = _nanmean(a)
    dev = np.where(good, a - mu, 0.0)
    var = (dev**2).sum(axis=0) / np.maximum(cnt - 1, 1)
    return np.where(cnt > 1, np.sqrt(var / np.maximum(cnt, 1)), np.nan)


# ------------------------------------------------------------------ #
# Bundled scenarios
# ------------------------------------------------------------------ #

_FAMILY_ALIASES = {"linear": "gaussian", "logistic": "binomial", "cox": "cox"}


def accuracy_scenario(family="linear", correlated=False, n=400, p=100, penalty="lasso", **kw):
    """Four causal features of size ``10 / sqrt(n)``, the rest noise."""
    fam = _FAMILY_ALIASES.get(family, family)
    corr = Correlation("ar", 0.8) if correlated else Correlation()
    name = f"accuracy-{family}-{'ar' if correlated else 'independent'}"
    return Scenario(name, n, p, (10 / math.sqrt(n),) * 4, fam, penalty, corr, **kw)


def censoring_scenario(which="A", n=500, p=100, penalty="lasso", **kw):
    """Cox model with 50% censoring; in ``A`` some noise features drive censoring."""
    which = which.upper()
    gamma = (0, 0, 0, 0, 0.45, -0.45, 0.45, -0.45) if which == "A" else (0.0,)
    kw.setdefault("lambda_policy", "mfdr")
    return Scenario(f"censoring-{which.lower()}-{penalty}", n, p, (0.45,) * 4, "cox", penalty,
                    Correlation(), gamma, **kw)


def abc_scenario(family="cox", b=0.45, n=400, p=300, n_causal=10, **kw):
    """Causal features, each with nine block-correlated partners, plus AR(0.8) noise."""
    fam = _FAMILY_ALIASES.get(family, family)
    kw.setdefault("lambda_policy", "mfdr")
    kw.setdefault("replications", 100)
    kw.setdefault("comparators", ("univariate", "sample_split"))
    return Scenario(f"abc-{family}-b{b:g}", n, p, (b,) * n_causal, fam, "lasso",
                    Correlation("blocks", 0.8, 10, 0.5), **kw)


PRESETS = {
    "accuracy-linear-independent": lambda: accuracy_scenario("linear", False),
    "accuracy-linear-ar": lambda: accuracy_scenario("linear", True),
    "accuracy-logistic-independent": lambda: accuracy_scenario("logistic", False),
    "accuracy-logistic-ar": lambda: accuracy_scenario("logistic", True),
    "accuracy-cox-independent": lambda: accuracy_scenario("cox", False),
    "accuracy-cox-ar": lambda: accuracy_scenario("cox", True),
    "censoring-a": lambda: censoring_scenario("A"),
    "censoring-b": lambda: censoring_scenario("B"),
    "abc-cox": lambda: abc_scenario("cox"),
    "abc-logistic": lambda: abc_scenario("logistic"),
}


def _floats(text):
    """Comma-separated reals; ``v*k`` repeats ``v`` k times."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "*" in item:
            v, k = item.split("*")
            out.extend([float(v)] * int(k))
        else:
            out.append(float(item))
    return tuple(out)


_INT_KEYS = {"n", "p", "replications", "seed", "nlambda"}
_FLOAT_KEYS = {"alpha", "lambda_min_ratio", "sigma", "readout"}


def parse_scenario(text, name="custom"):
    """Build a scenario from ``key = value`` lines.

    ``base`` names a bundled preset to start from; the remaining keys
    override its fields.  ``beta`` and ``censoring`` take comma lists with
    ``v*k`` repetition and are zero-padded to ``p``.  ``correlation`` is
    ``independent``, ``ar`` or ``blocks``, tuned by ``rho``,
    ``block_size`` and ``block_rho``.  ``comparators`` is a comma list.
    Blank lines and ``#`` comments are ignored.
    """
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        fields[key.lower().replace("-", "_")] = value
    if "base" in fields:
        base_name = fields.pop("base")
        if base_name not in PRESETS:
            raise ValueError(f"unknown base scenario {base_name!r}")
        base = PRESETS[base_name]()
    else:
        base = None
    corr_keys = {k: fields.pop(k) for k in ("correlation", "rho", "block_size", "block_rho") if k in fields}
    kw = {}
    for key, value in fields.items():
        if key in _INT_KEYS:
            kw[key] = int(value)
        elif key in _FLOAT_KEYS:
            kw[key] = float(value)
        elif key in ("beta", "censoring"):
            kw[key] = None if value.lower() == "none" else _floats(value)
        elif key == "comparators":
            kw[key] = tuple(s.strip() for s in value.split(",") if s.strip())
        elif key == "family":
            kw[key] = _FAMILY_ALIASES.get(value, value)
        elif key in ("penalty", "lambda_policy", "name"):
            kw[key] = value
        else:
            raise ValueError(f"unknown scenario key {key!r}")
    corr = base.correlation if base is not None else Correlation()
    if corr_keys:
        corr = Correlation(
            corr_keys.get("correlation", corr.kind),
            float(corr_keys.get("rho", corr.rho)),
            int(corr_keys.get("block_size", corr.block_size)),
            float(corr_keys.get("block_rho", corr.block_rho)),
        )
    kw["correlation"] = corr
    if base is None:
        missing = {"n", "p", "beta"} - kw.keys()
        if missing:
            raise ValueError(f"scenario without base needs {sorted(missing)}")
        kw.setdefault("name", name)
        return Scenario(**kw)
    if "p" in kw and "beta" not in kw:
        kw["beta"] = base.beta[: kw["p"]]
        if base.censoring is not None and "censoring" not in kw:
            kw["censoring"] = base.censoring[: kw["p"]]
    return replace(base, **kw)


def new_seed():
    """A fresh 63-bit seed from the OS entropy pool."""
    return secrets.randbits(63)
