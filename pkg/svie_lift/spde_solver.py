"""Time stepping of the lifted SPDE on the curve grid and extraction of X(t) = Y(t)(0).

One step reads

    Y_{n+1} = S_dx (Y_n + dt a(t_n, Y_n) + b(t_n, Y_n) dL_n),   dt = dx,

so the shift is an index move and the boundary value Y_n(0) reproduces the left-point
Euler sum of the Volterra equation exactly.

Paths are advanced in batches: a batch keeps one buffer of shape (P, N + J + 1, d)
and the state at step n is the window ``buf[:, n:n + J + 1]``; shifting only moves the
window and copies the tail into the next slot.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import (
    dataclass,
    field,
    replace,
)

import numpy as np
from dbt.adapters.events.logging import AdapterLogger

from svie_lift.coefficients import (
    CoefficientSet,
    lift_a,
    lift_b,
    truncation_mass,
)
from svie_lift.exceptions import (
    ConfigValidationError,
    DivergenceError,
    InvalidModelError,
    PicardConvergenceError,
)
from svie_lift.levy_noise import (
    PURPOSE_INITIAL,
    LevyModel,
    NoiseStream,
    sample_increments,
)
from svie_lift.weighted_space import (
    Curve,
    WeightFunction,
    as_point,
    batch_norm_w,
    norm_w,
    shift,
)

LOGGER = AdapterLogger("svie_lift")

DEFAULT_DIVERGENCE_CAP = 1e12
DEFAULT_CHECK_EVERY = 8
DEFAULT_BATCH_SIZE = 256
MAX_DIVERGED_FRACTION = 0.01
PICARD_TOLERANCE = 1e-12
PICARD_MAX_ITERATIONS = 200
PICARD_ROW_CHUNK = 256


@dataclass(frozen=True)
class SolverConfig:
    """Horizon and grid of a run. The grid step equals the time step."""

    T: float
    dt: float
    x_max: float
    divergence_cap: float = DEFAULT_DIVERGENCE_CAP
    check_every: int = DEFAULT_CHECK_EVERY
    record_every: int = 1
    record_norms: bool = False
    snapshot_times: tuple[float, ...] = ()
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigValidationError("grid.dt", f"must be positive, got {self.dt}")
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise ConfigValidationError("horizon", f"must be positive, got {self.T}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigValidationError("horizon", f"T={self.T} is not a multiple of dt={self.dt}")
        if self.J < self.n_steps + 1:
            raise ConfigValidationError(
                "grid.x_max", f"must be at least T + dt = {self.T + self.dt}, got {self.x_max}"
            )
        if self.check_every < 1 or self.record_every < 1 or self.batch_size < 1:
            raise ConfigValidationError("solver", "check_every, record_every and batch_size must be >= 1")
        for time in self.snapshot_times:
            if not 0.0 <= time <= self.T:
                raise ConfigValidationError("output.snapshots", f"snapshot time {time} outside [0, {self.T}]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def J(self) -> int:
        return int(math.ceil(self.x_max / self.dt - 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=float) * self.dt

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.J + 1, dtype=float) * self.dt

    @property
    def record_indices(self) -> np.ndarray:
        indices = np.arange(0, self.n_steps + 1, self.record_every)
        if indices[-1] != self.n_steps:
            indices = np.append(indices, self.n_steps)
        return indices


@dataclass(frozen=True)
class SolverState:
    n: int
    dt: float
    Y: Curve

    def __post_init__(self):
        if self.dt != self.Y.dx:
            raise ConfigValidationError("grid.dt", f"time step {self.dt} must equal the grid step {self.Y.dx}")

    @classmethod
    def initial(cls, Y: Curve) -> "SolverState":
        return cls(0, Y.dx, Y)

    @property
    def t(self) -> float:
        return self.n * self.dt

    @property
    def X(self) -> np.ndarray:
        return self.Y.values[0]


@dataclass
class PathOutput:
    """Boundary trajectory X(t_n) = Y(t_n)(0) of one path with optional diagnostics."""

    path: int
    times: np.ndarray
    X: np.ndarray
    snapshots: dict[float, Curve] = field(default_factory=dict)
    norms: np.ndarray | None = None
    diverged_step: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_step is not None

    @property
    def terminal(self) -> np.ndarray:
        return self.X[-1]

    @property
    def sup_second_moment(self) -> float:
        return float(np.max(np.einsum("nd,nd->n", self.X, self.X)))


@dataclass(frozen=True)
class InitialCondition:
    """x0 as a deterministic curve (forcing x0(t)), a constant, or a per-path sampled constant."""

    kind: str
    value: tuple[float, ...] = (0.0,)
    scale: float = 0.0
    curve: Curve | None = None

    @classmethod
    def constant(cls, value) -> "InitialCondition":
        return cls("constant", tuple(float(v) for v in as_point(value)))

    @classmethod
    def sampled(cls, mean, scale: float) -> "InitialCondition":
        return cls("sampled", tuple(float(v) for v in as_point(mean)), float(scale))

    @classmethod
    def forcing(cls, curve: Curve) -> "InitialCondition":
        return cls("curve", tuple(float(v) for v in curve.values[0]), curve=curve)

    def values_for(self, seed: int, path: int, dx: float, J: int, d: int) -> np.ndarray:
        """Initial curve of ``path`` as node values of shape (J+1, d)."""
        if self.kind == "curve":
            if self.curve.dx != dx or self.curve.J < J or self.curve.d != d:
                raise InvalidModelError("initial curve does not cover the solver grid")
            return self.curve.values[: J + 1]
        point = as_point(self.value, d)
        if self.kind == "sampled":
            rng = NoiseStream(seed, path, PURPOSE_INITIAL).rng
            point = point + self.scale * rng.standard_normal(d)
        return np.broadcast_to(point, (J + 1, d))


def step(
    state: SolverState,
    coeffs: CoefficientSet,
    noise_increment,
    w: WeightFunction | None = None,
    divergence_cap: float = DEFAULT_DIVERGENCE_CAP,
) -> SolverState:
    """One left-point Euler step of the mild equation followed by the exact shift."""
    drift = lift_a(coeffs, state.t, state.Y)
    diffusion = lift_b(coeffs, state.t, state.Y)
    increment = as_point(noise_increment, coeffs.m)
    updated = state.Y.values + state.dt * drift.values + diffusion.matrices @ increment
    if not np.all(np.isfinite(updated)):
        raise DivergenceError(f"non-finite state at step {state.n + 1}", step=state.n + 1)
    Y = shift(Curve(state.Y.dx, updated), 1)
    if w is not None and norm_w(Y, w) > divergence_cap:
        raise DivergenceError(f"norm exceeded {divergence_cap:g} at step {state.n + 1}", step=state.n + 1)
    return SolverState(state.n + 1, state.dt, Y)


def _drift_nodes(coeffs: CoefficientSet, t: float, nodes: np.ndarray, u: np.ndarray) -> np.ndarray:
    values = np.array(coeffs.mu_at(t + nodes[None, :], t, u[:, None, :]))
    if coeffs.mu_infinity is not None:
        values[:, -1] = coeffs.mu_infinity(u)
    return values


def _diffusion_nodes(coeffs: CoefficientSet, t: float, nodes: np.ndarray, u: np.ndarray) -> np.ndarray:
    values = np.array(coeffs.sigma_at(t + nodes[None, :], t, u[:, None, :]))
    if coeffs.sigma_infinity is not None:
        values[:, -1] = coeffs.sigma_infinity(u)
    return values


def _advance_batch(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    w: WeightFunction,
    paths: list[int],
    initial: np.ndarray,
    increments: np.ndarray,
) -> list[PathOutput]:
    """Run the scheme for a batch of paths; ``initial`` is (P, J+1, d), ``increments`` (P, N, m)."""
    P, N, J, d = len(paths), cfg.n_steps, cfg.J, coeffs.d
    nodes = cfg.nodes
    dt = cfg.dt
    buf = np.zeros((P, N + J + 1, d))
    buf[:, : J + 1] = initial
    X = np.empty((P, N + 1, d))
    X[:, 0] = buf[:, 0]
    active = np.ones(P, dtype=bool)
    diverged_at: list[int | None] = [None] * P
    norms = np.empty((P, N + 1)) if cfg.record_norms else None
    snapshot_steps = {int(round(time / dt)): time for time in cfg.snapshot_times}
    snapshots: list[dict[float, Curve]] = [{} for _ in range(P)]

    def flag(mask: np.ndarray, n: int) -> None:
        for index in np.nonzero(mask & active)[0]:
            diverged_at[index] = n
            LOGGER.warning(f"path {paths[index]} diverged at step {n}")
        active[mask] = False

    def check(n: int) -> np.ndarray:
        window = buf[:, n : n + J + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            values = batch_norm_w(np.where(active[:, None, None], window, 0.0), dt, w)
        flag(~np.isfinite(values) | (values > cfg.divergence_cap), n)
        return values

    if norms is not None:
        norms[:, 0] = check(0)
    for n in range(N):
        if n in snapshot_steps:
            for index in range(P):
                snapshots[index][snapshot_steps[n]] = Curve(dt, buf[index, n : n + J + 1])
        t = n * dt
        window = buf[:, n : n + J + 1]
        u = window[:, 0].copy()
        flag(~np.all(np.isfinite(u), axis=1), n)
        u[~active] = 0.0
        drift = _drift_nodes(coeffs, t, nodes, u)
        diffusion = _diffusion_nodes(coeffs, t, nodes, u)
        drift *= dt
        noise = np.einsum("pjdm,pm->pjd", diffusion, increments[:, n])
        if not np.all(active):
            drift[~active] = 0.0
            noise[~active] = 0.0
        window += drift
        window += noise
        buf[:, n + J + 1] = buf[:, n + J]
        X[:, n + 1] = buf[:, n + 1]
        if norms is not None:
            norms[:, n + 1] = check(n + 1)
        elif (n + 1) % cfg.check_every == 0 or n + 1 == N:
            check(n + 1)
    if N in snapshot_steps:
        for index in range(P):
            snapshots[index][snapshot_steps[N]] = Curve(dt, buf[index, N : N + J + 1])

    times = cfg.times
    return [
        PathOutput(
            path=paths[index],
            times=times,
            X=X[index],
            snapshots=snapshots[index],
            norms=None if norms is None else norms[index],
            diverged_step=diverged_at[index],
        )
        for index in range(P)
    ]


def simulate_increments(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    w: WeightFunction,
    initial: InitialCondition,
    increments: np.ndarray,
    seed: int = 0,
    paths: list[int] | None = None,
) -> list[PathOutput]:
    """Lifted scheme driven by given increments of shape (P, N, m) or (N, m)."""
    increments = np.asarray(increments, dtype=float)
    if increments.ndim == 2:
        increments = increments[None]
    if increments.shape[1:] != (cfg.n_steps, coeffs.m):
        raise InvalidModelError(f"increments must have shape (P, {cfg.n_steps}, {coeffs.m}), got {increments.shape}")
    paths = list(range(increments.shape[0])) if paths is None else paths
    start = np.stack([initial.values_for(seed, path, cfg.dt, cfg.J, coeffs.d) for path in paths])
    return _advance_batch(cfg, coeffs, w, paths, start, increments)


def simulate_path(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    model: LevyModel,
    stream: NoiseStream,
    w: WeightFunction,
    initial: InitialCondition,
) -> PathOutput:
    """Full boundary trajectory of the path identified by ``stream``.

    Raises:
        DivergenceError: when the path exceeds the norm cap.
    """
    increments = sample_increments(model, stream.fresh(), cfg.dt, cfg.n_steps)
    (output,) = simulate_increments(cfg, coeffs, w, initial, increments, stream.seed, [stream.path])
    if output.diverged:
        raise DivergenceError(
            f"path {stream.path} diverged at step {output.diverged_step}", path=stream.path, step=output.diverged_step
        )
    return output


def svie_direct_increments(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    initial: InitialCondition,
    increments: np.ndarray,
    seed: int = 0,
    path: int = 0,
) -> PathOutput:
    """X_n = x0(t_n) + sum_{k<n} mu(t_n, t_k, X_k) dt + sigma(t_n, t_k, X_k) dL_k, quadratic in N."""
    N, d = cfg.n_steps, coeffs.d
    increments = np.asarray(increments, dtype=float)
    forcing = initial.values_for(seed, path, cfg.dt, cfg.J, d)
    times = cfg.times
    X = np.empty((N + 1, d))
    X[0] = forcing[0]
    for n in range(1, N + 1):
        past = slice(0, n)
        drift = coeffs.mu_at(times[n], times[past], X[past])
        diffusion = coeffs.sigma_at(times[n], times[past], X[past])
        X[n] = forcing[n] + cfg.dt * drift.sum(axis=0) + np.einsum("kdm,km->d", diffusion, increments[past])
        if not np.all(np.isfinite(X[n])) or float(np.dot(X[n], X[n])) > cfg.divergence_cap**2:
            raise DivergenceError(f"direct Volterra sum diverged at step {n}", path=path, step=n)
    return PathOutput(path=path, times=times, X=X)


def svie_direct(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    model: LevyModel,
    stream: NoiseStream,
    initial: InitialCondition,
) -> PathOutput:
    """Direct Euler discretisation of the Volterra sum on the noise of ``stream``."""
    increments = sample_increments(model, stream.fresh(), cfg.dt, cfg.n_steps)
    return svie_direct_increments(cfg, coeffs, initial, increments, stream.seed, stream.path)


def picard_oracle(
    coeffs: CoefficientSet,
    x0,
    T: float,
    fine_dt: float,
    tol: float = PICARD_TOLERANCE,
    max_iterations: int = PICARD_MAX_ITERATIONS,
) -> PathOutput:
    """Deterministic Volterra solution (sigma = 0) by fixed-point iteration with trapezoid quadrature.

    Raises:
        InvalidModelError: when sigma does not vanish at x0.
        PicardConvergenceError: when successive iterates still differ by ``tol`` after
            ``max_iterations`` sweeps.
    """
    start = as_point(x0, coeffs.d)
    if np.any(coeffs.sigma_at(np.array([0.0, T]), 0.0, start) != 0.0):
        raise InvalidModelError("the Picard oracle needs a vanishing diffusion kernel")
    n = int(round(T / fine_dt))
    times = np.arange(n + 1, dtype=float) * fine_dt
    X = np.broadcast_to(start, (n + 1, coeffs.d)).copy()
    for iteration in range(1, max_iterations + 1):
        updated = np.empty_like(X)
        for row_start in range(0, n + 1, PICARD_ROW_CHUNK):
            rows = np.arange(row_start, min(row_start + PICARD_ROW_CHUNK, n + 1))
            t = times[rows][:, None]
            s = np.minimum(times[None, :], t)
            values = coeffs.mu_at(t, s, X[None, :, :])
            weights = np.where(times[None, :] < t, fine_dt, 0.0)
            weights[:, 0] = np.where(rows > 0, fine_dt / 2.0, 0.0)
            weights[np.arange(rows.shape[0]), rows] = np.where(rows > 0, fine_dt / 2.0, 0.0)
            updated[rows] = start + np.einsum("ik,ikd->id", weights, values)
        residual = float(np.max(np.abs(updated - X)))
        X = updated
        LOGGER.debug(f"picard iteration {iteration}: residual {residual:.3e}")
        if residual < tol:
            return PathOutput(path=0, times=times, X=X)
    raise PicardConvergenceError(f"no convergence after {max_iterations} Picard iterations (residual {residual:.3e})")


def ou_mean(lam: float, theta, x0, t) -> np.ndarray:
    return np.asarray(theta) + (np.asarray(x0) - np.asarray(theta)) * np.exp(-lam * np.asarray(t))


def ou_variance(lam: float, sigma: float, t) -> np.ndarray:
    return sigma**2 * -np.expm1(-2.0 * lam * np.asarray(t)) / (2.0 * lam)


def euler_ou_moments(lam: float, theta: float, sigma: float, x0: float, dt: float, n: int) -> tuple[float, float]:
    """Mean and variance of X_n for X_{k+1} = X_k + dt lam (theta - X_k) + sigma dW_k."""
    factor = 1.0 - lam * dt
    mean = theta + (x0 - theta) * factor**n
    variance = sigma**2 * dt * (1.0 - factor ** (2 * n)) / (1.0 - factor**2)
    return mean, variance


def exponential_kernel_solution(x0, t, scale: float, decay: float) -> np.ndarray:
    """Solution of X(t) = x0 + int_0^t scale e^{-decay (t-s)} X(s) ds."""
    rate = decay - scale
    t = np.asarray(t, dtype=float)
    if rate == 0.0:
        return np.multiply.outer(1.0 + scale * t, np.asarray(x0))
    return np.multiply.outer(1.0 + scale / rate * -np.expm1(-rate * t), np.asarray(x0))


@dataclass
class RunningMoments:
    """Count, mean and centred second moment over paths; ``merge`` is Chan's pairwise update."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, shape: tuple[int, ...]) -> "RunningMoments":
        return cls(0, np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "RunningMoments":
        if samples.shape[0] == 0:
            return cls.empty(samples.shape[1:])
        mean = samples.mean(axis=0)
        return cls(samples.shape[0], mean, ((samples - mean) ** 2).sum(axis=0))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        total = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / total)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / total)
        return RunningMoments(total, mean, m2)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)


@dataclass
class EnsembleResult:
    """Aggregated outcome of an ensemble run; diverged paths are excluded and listed."""

    times: np.ndarray
    record_indices: np.ndarray
    moments: RunningMoments
    terminal: np.ndarray
    terminal_paths: np.ndarray
    sup_second_moments: np.ndarray
    diverged: list[tuple[int, int]]
    trajectories: dict[int, np.ndarray]
    truncation_mass: float
    requested: int

    @property
    def sup_second_moment(self) -> float:
        """Empirical E[max_n |X(t_n)|^2] over the surviving paths."""
        if self.sup_second_moments.shape[0] == 0:
            return math.nan
        return float(self.sup_second_moments.mean())

    @property
    def diverged_fraction(self) -> float:
        return len(self.diverged) / self.requested


@dataclass
class _BatchResult:
    moments: RunningMoments
    terminal: np.ndarray
    terminal_paths: np.ndarray
    sup_second_moments: np.ndarray
    diverged: list[tuple[int, int]]
    trajectories: dict[int, np.ndarray]


def _run_batch(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    model: LevyModel,
    w: WeightFunction,
    initial: InitialCondition,
    seed: int,
    paths: list[int],
    keep_trajectories: bool,
) -> _BatchResult:
    increments = np.stack([sample_increments(model, NoiseStream(seed, path), cfg.dt, cfg.n_steps) for path in paths])
    start = np.stack([initial.values_for(seed, path, cfg.dt, cfg.J, coeffs.d) for path in paths])
    outputs = _advance_batch(cfg, coeffs, w, paths, start, increments)
    survivors = [output for output in outputs if not output.diverged]
    recorded = cfg.record_indices
    if survivors:
        samples = np.stack([output.X[recorded] for output in survivors])
    else:
        samples = np.empty((0, recorded.shape[0], coeffs.d))
    LOGGER.debug(f"finished batch of paths {paths[0]}..{paths[-1]}")
    return _BatchResult(
        moments=RunningMoments.from_samples(samples),
        terminal=samples[:, -1] if survivors else np.empty((0, coeffs.d)),
        terminal_paths=np.array([output.path for output in survivors], dtype=int),
        sup_second_moments=np.array([output.sup_second_moment for output in survivors]),
        diverged=[(output.path, output.diverged_step) for output in outputs if output.diverged],
        trajectories={output.path: output.X[recorded] for output in survivors} if keep_trajectories else {},
    )


def run_ensemble(
    cfg: SolverConfig,
    coeffs: CoefficientSet,
    model: LevyModel,
    w: WeightFunction,
    initial: InitialCondition,
    seed: int,
    n_paths: int,
    workers: int = 1,
    first_path: int = 0,
    keep_trajectories: bool = False,
    max_diverged_fraction: float = MAX_DIVERGED_FRACTION,
) -> EnsembleResult:
    """Simulate paths ``first_path .. first_path + n_paths - 1`` in fixed batches.

    Batches do not depend on the worker count and are merged in order, so results are
    identical for any number of workers.

    Raises:
        DivergenceError: when more than ``max_diverged_fraction`` of the paths diverge.
    """
    if n_paths < 1:
        raise ConfigValidationError("paths", f"must be >= 1, got {n_paths}")
    path_ids = list(range(first_path, first_path + n_paths))
    batches = [path_ids[i : i + cfg.batch_size] for i in range(0, n_paths, cfg.batch_size)]
    LOGGER.info(f"simulating {n_paths} paths in {len(batches)} batches on {workers} worker(s)")

    def run(batch: list[int]) -> _BatchResult:
        return _run_batch(cfg, coeffs, model, w, initial, seed, batch, keep_trajectories)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, batches))
    else:
        results = [run(batch) for batch in batches]

    moments = RunningMoments.empty((cfg.record_indices.shape[0], coeffs.d))
    trajectories: dict[int, np.ndarray] = {}
    diverged: list[tuple[int, int]] = []
    for result in results:
        moments = moments.merge(result.moments)
        trajectories.update(result.trajectories)
        diverged.extend(result.diverged)
    first_x0 = initial.values_for(seed, first_path, cfg.dt, cfg.J, coeffs.d)[0]
    ensemble = EnsembleResult(
        times=cfg.times,
        record_indices=cfg.record_indices,
        moments=moments,
        terminal=np.concatenate([result.terminal for result in results]),
        terminal_paths=np.concatenate([result.terminal_paths for result in results]),
        sup_second_moments=np.concatenate([result.sup_second_moments for result in results]),
        diverged=diverged,
        trajectories=trajectories,
        truncation_mass=truncation_mass(coeffs, 0.0, first_x0, cfg.J * cfg.dt),
        requested=n_paths,
    )
    if diverged:
        LOGGER.warning(f"{len(diverged)} of {n_paths} paths diverged and were excluded")
    if ensemble.diverged_fraction > max_diverged_fraction:
        raise DivergenceError(
            f"{len(diverged)} of {n_paths} paths diverged (more than {max_diverged_fraction:.0%})",
            path=diverged[0][0],
            step=diverged[0][1],
        )
    LOGGER.info(
        f"ensemble finished: {ensemble.terminal.shape[0]} paths, sup second moment {ensemble.sup_second_moment:.6g}"
    )
    return ensemble


def with_horizon(cfg: SolverConfig, T: float) -> SolverConfig:
    """Same grid settings for another horizon, extending x_max when needed."""
    return replace(cfg, T=T, x_max=max(cfg.x_max, cfg.x_max + T - cfg.T), snapshot_times=())
