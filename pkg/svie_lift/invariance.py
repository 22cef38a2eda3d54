"""Empirical limiting laws of homogeneous Volterra equations and two-sample convergence tests."""

from dataclasses import (
    dataclass,
    replace,
)
from typing import TYPE_CHECKING

import numpy as np
from dbt.adapters.events.logging import AdapterLogger
from scipy import stats
from scipy.spatial.distance import cdist

from svie_lift.exceptions import (
    ConfigValidationError,
    InvalidModelError,
)
from svie_lift.spde_solver import (
    InitialCondition,
    RunningMoments,
    run_ensemble,
    with_horizon,
)

if TYPE_CHECKING:
    from svie_lift.config import Scenario

LOGGER = AdapterLogger("svie_lift")

DEFAULT_LEVEL = 0.05
DEFAULT_RESAMPLES = 500
MIN_LAW_PATHS = 100
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
# Pairwise distance matrices in dimension > 1 are built on at most this many points per sample.
MAX_MULTIVARIATE_POINTS = 2000


def _cross_mean_abs_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of |a_i - b_j| over all pairs in O((n + m) log m)."""
    b_sorted = np.sort(b)
    prefix = np.concatenate([[0.0], np.cumsum(b_sorted)])
    below = np.searchsorted(b_sorted, a, side="left")
    total = prefix[-1]
    lower = a * below - prefix[below]
    upper = (total - prefix[below]) - a * (b_sorted.shape[0] - below)
    return float(np.sum(lower + upper)) / (a.shape[0] * b_sorted.shape[0])


def _cross_mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[1] == 1:
        return _cross_mean_abs_1d(a[:, 0], b[:, 0])
    return float(cdist(a, b).mean())


def _as_sample(x) -> np.ndarray:
    sample = np.asarray(x, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    if sample.ndim != 2 or sample.shape[0] == 0:
        raise InvalidModelError(f"samples must have shape (n, d) with n >= 1, got {sample.shape}")
    return sample


def energy_distance(x, y) -> float:
    """Two-sample energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic, clamped at 0)."""
    x, y = _as_sample(x), _as_sample(y)
    value = 2.0 * _cross_mean_dist(x, y) - _cross_mean_dist(x, x) - _cross_mean_dist(y, y)
    return max(value, 0.0)


def _within_pair_sums_1d(sorted_values: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Sum over unordered within-group pairs of |z_i - z_j| for both groups of a sorted pool."""
    sums = []
    for group in (True, False):
        mask = labels == group
        members = sorted_values[mask]
        ranks = np.arange(members.shape[0])
        sums.append(float(np.dot(members, 2.0 * ranks - (members.shape[0] - 1))))
    return sums[0], sums[1]


def _permutation_statistics_1d(pooled: np.ndarray, n_x: int, rng: np.random.Generator, resamples: int) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    sorted_values = pooled[order]
    n = pooled.shape[0]
    n_y = n - n_x
    total = float(np.dot(sorted_values, 2.0 * np.arange(n) - (n - 1)))
    labels = np.zeros(n, dtype=bool)
    labels[:n_x] = True
    statistics = np.empty(resamples)
    for index in range(resamples):
        permuted = rng.permutation(labels)[order]
        within_x, within_y = _within_pair_sums_1d(sorted_values, permuted)
        cross = total - within_x - within_y
        statistics[index] = 2.0 * cross / (n_x * n_y) - 2.0 * within_x / n_x**2 - 2.0 * within_y / n_y**2
    return np.maximum(statistics, 0.0)


def _permutation_statistics(pooled: np.ndarray, n_x: int, rng: np.random.Generator, resamples: int) -> np.ndarray:
    distances = cdist(pooled, pooled)
    n = pooled.shape[0]
    statistics = np.empty(resamples)
    for index in range(resamples):
        labels = rng.permutation(n)
        first, second = labels[:n_x], labels[n_x:]
        cross = distances[np.ix_(first, second)].mean()
        statistics[index] = (
            2.0 * cross - distances[np.ix_(first, first)].mean() - distances[np.ix_(second, second)].mean()
        )
    return np.maximum(statistics, 0.0)


@dataclass(frozen=True)
class ConvergenceVerdict:
    """Energy-distance permutation test with per-coordinate KS statistics.

    ``passed`` means no difference detected at ``level`` by the energy test; the KS
    values are reported alongside.
    """

    label: str
    statistic: float
    p_value: float
    ks_statistics: tuple[float, ...]
    ks_p_values: tuple[float, ...]
    level: float
    resamples: int
    n_first: int
    n_second: int

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidModelError(f"p-value outside [0, 1]: {self.p_value}")

    @property
    def passed(self) -> bool:
        return self.p_value >= self.level

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "energy_distance": self.statistic,
            "p_value": self.p_value,
            "ks_statistics": list(self.ks_statistics),
            "ks_p_values": list(self.ks_p_values),
            "level": self.level,
            "resamples": self.resamples,
            "n_first": self.n_first,
            "n_second": self.n_second,
            "passed": self.passed,
        }


def compare_samples(
    x,
    y,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    label: str = "samples",
) -> ConvergenceVerdict:
    """Permutation p-value (1 + #{T* >= T}) / (B + 1) of the energy distance T; approximate."""
    x, y = _as_sample(x), _as_sample(y)
    if x.shape[1] != y.shape[1]:
        raise InvalidModelError("samples must have the same dimension")
    rng = np.random.default_rng(seed)
    if x.shape[1] > 1:
        if x.shape[0] > MAX_MULTIVARIATE_POINTS:
            x = x[rng.choice(x.shape[0], MAX_MULTIVARIATE_POINTS, replace=False)]
        if y.shape[0] > MAX_MULTIVARIATE_POINTS:
            y = y[rng.choice(y.shape[0], MAX_MULTIVARIATE_POINTS, replace=False)]
    observed = energy_distance(x, y)
    pooled = np.concatenate([x, y])
    if x.shape[1] == 1:
        permuted = _permutation_statistics_1d(pooled[:, 0], x.shape[0], rng, resamples)
    else:
        permuted = _permutation_statistics(pooled, x.shape[0], rng, resamples)
    p_value = (1.0 + float(np.sum(permuted >= observed))) / (resamples + 1.0)
    ks = [stats.ks_2samp(x[:, k], y[:, k]) for k in range(x.shape[1])]
    verdict = ConvergenceVerdict(
        label=label,
        statistic=observed,
        p_value=p_value,
        ks_statistics=tuple(float(result.statistic) for result in ks),
        ks_p_values=tuple(float(result.pvalue) for result in ks),
        level=level,
        resamples=resamples,
        n_first=x.shape[0],
        n_second=y.shape[0],
    )
    LOGGER.debug(f"{label}: energy {observed:.4g}, p={p_value:.4f}")
    return verdict


@dataclass(frozen=True)
class LawEstimate:
    """Terminal sample X(T) over the surviving paths with summary statistics."""

    T: float
    sample: np.ndarray
    paths: np.ndarray
    seed: int
    diverged: int
    mean: np.ndarray
    variance: np.ndarray
    standard_error: np.ndarray
    quantiles: np.ndarray

    @classmethod
    def from_sample(cls, T: float, sample, paths=None, seed: int = 0, diverged: int = 0) -> "LawEstimate":
        sample = _as_sample(sample)
        if not np.all(np.isfinite(sample)):
            raise InvalidModelError("law sample contains non-finite values")
        moments = RunningMoments.from_samples(sample)
        return cls(
            T=T,
            sample=sample,
            paths=np.arange(sample.shape[0]) if paths is None else np.asarray(paths),
            seed=seed,
            diverged=diverged,
            mean=moments.mean,
            variance=moments.variance,
            standard_error=np.sqrt(moments.variance / sample.shape[0]),
            quantiles=np.quantile(sample, QUANTILES, axis=0),
        )

    @property
    def size(self) -> int:
        return self.sample.shape[0]

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "paths": self.size,
            "seed": self.seed,
            "diverged": self.diverged,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "standard_error": self.standard_error.tolist(),
            "quantiles": {f"{q:g}": row.tolist() for q, row in zip(QUANTILES, self.quantiles)},
        }


def estimate_law(
    scenario: "Scenario",
    T: float,
    N: int,
    first_path: int = 0,
    initial: InitialCondition | None = None,
) -> LawEstimate:
    """Sample X(T) on paths ``first_path .. first_path + N - 1``.

    Raises:
        InvalidModelError: for inhomogeneous kernels.
        DivergenceError: when more than 1% of the paths diverge.
    """
    if not scenario.coefficients.homogeneous:
        raise InvalidModelError("limiting laws are estimated for homogeneous kernels only")
    if N < MIN_LAW_PATHS:
        raise ConfigValidationError("law.paths", f"must be >= {MIN_LAW_PATHS}, got {N}")
    cfg = with_horizon(scenario.solver, T)
    cfg = replace(cfg, record_every=cfg.n_steps, record_norms=False)
    ensemble = run_ensemble(
        cfg,
        scenario.coefficients,
        scenario.noise,
        scenario.weight,
        initial or scenario.initial,
        scenario.seed,
        N,
        workers=scenario.workers,
        first_path=first_path,
    )
    estimate = LawEstimate.from_sample(
        T, ensemble.terminal, ensemble.terminal_paths, scenario.seed, len(ensemble.diverged)
    )
    LOGGER.info(f"law at T={T:g}: mean {estimate.mean.tolist()}, variance {estimate.variance.tolist()}")
    return estimate


def two_horizon_comparison(
    scenario: "Scenario",
    T1: float,
    T2: float,
    N: int,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
) -> tuple[LawEstimate, LawEstimate, ConvergenceVerdict]:
    """Both law estimates of ``test_convergence`` together with its verdict."""
    if not T1 < T2:
        raise ConfigValidationError("law.t1", f"must be smaller than law.t2, got {T1} >= {T2}")
    first = estimate_law(scenario, T1, N, first_path=0)
    second = estimate_law(scenario, T2, N, first_path=N)
    verdict = compare_samples(
        first.sample, second.sample, level, resamples, seed=scenario.seed, label=f"X({T1:g}) vs X({T2:g})"
    )
    LOGGER.info(f"two-horizon test {verdict.label}: p={verdict.p_value:.4f}, {'pass' if verdict.passed else 'fail'}")
    return first, second, verdict


def test_convergence(
    scenario: "Scenario",
    T1: float,
    T2: float,
    N: int,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
) -> ConvergenceVerdict:
    """Compare X(T1) on paths [0, N) with X(T2) on the disjoint paths [N, 2N)."""
    return two_horizon_comparison(scenario, T1, T2, N, level, resamples)[2]


# not a pytest test
test_convergence.__test__ = False  # type: ignore[attr-defined]


def initial_value_comparison(
    scenario: "Scenario",
    x0_a,
    x0_b,
    T: float,
    N: int,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
) -> tuple[LawEstimate, LawEstimate, ConvergenceVerdict]:
    """Both law estimates of ``initial_dependence_probe`` together with its verdict."""
    first = estimate_law(scenario, T, N, first_path=0, initial=InitialCondition.constant(x0_a))
    second = estimate_law(scenario, T, N, first_path=N, initial=InitialCondition.constant(x0_b))
    verdict = compare_samples(
        first.sample, second.sample, level, resamples, seed=scenario.seed, label=f"x0={x0_a} vs x0={x0_b}"
    )
    LOGGER.info(f"initial-value probe {verdict.label}: p={verdict.p_value:.4f}")
    return first, second, verdict


def initial_dependence_probe(
    scenario: "Scenario",
    x0_a,
    x0_b,
    T: float,
    N: int,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
) -> ConvergenceVerdict:
    """Compare X(T) started from x0_a (paths [0, N)) and from x0_b (paths [N, 2N))."""
    return initial_value_comparison(scenario, x0_a, x0_b, T, N, level, resamples)[2]
