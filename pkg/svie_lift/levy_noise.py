"""Mean-zero, square-integrable Levy drivers on R^m: Gaussian part plus compound Poisson jumps."""

import math
from abc import (
    ABC,
    abstractmethod,
)
from dataclasses import (
    dataclass,
    field,
    replace,
)

import numpy as np
from dbt.adapters.events.logging import AdapterLogger

from svie_lift.exceptions import InvalidModelError

LOGGER = AdapterLogger("svie_lift")

# Substream purposes mixed into the seed sequence next to (seed, path).
PURPOSE_INCREMENTS = 0
PURPOSE_INITIAL = 1


class JumpLaw(ABC):
    """Distribution of a single jump in R^m."""

    m: int

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` jumps, shape (n, m)."""

    @property
    @abstractmethod
    def mean(self) -> np.ndarray:
        pass

    @property
    @abstractmethod
    def second_moment(self) -> float:
        """E|J|^2."""


@dataclass(frozen=True)
class SymmetricTwoPointJumps(JumpLaw):
    """Each coordinate jumps by +height or -height with equal probability."""

    height: float
    m: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.height) and self.height > 0.0):
            raise InvalidModelError(f"jump height must be positive, got {self.height}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        signs = rng.integers(0, 2, size=(n, self.m)) * 2 - 1
        return self.height * signs.astype(float)

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.m)

    @property
    def second_moment(self) -> float:
        return self.m * self.height**2


@dataclass(frozen=True)
class GaussianJumps(JumpLaw):
    """Jumps ~ N(mean, scale^2 I); a non-zero mean is removed by compensation."""

    location: tuple[float, ...]
    scale: float

    def __post_init__(self):
        if not self.location:
            raise InvalidModelError("gaussian jumps need a location vector")
        if not (math.isfinite(self.scale) and self.scale >= 0.0):
            raise InvalidModelError(f"jump scale must be non-negative, got {self.scale}")

    @property
    def m(self) -> int:  # type: ignore[override]
        return len(self.location)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.location) + self.scale * rng.standard_normal((n, self.m))

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.location, dtype=float)

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.mean, self.mean)) + self.m * self.scale**2


@dataclass(frozen=True)
class LevyModel:
    """Levy driver with covariance diag(gaussian_spectrum) and compensated compound Poisson jumps.

    ``normalization`` multiplies every increment; ``normalized()`` picks it so that
    E|L(1)|^2 = 1.
    """

    m: int
    gaussian_spectrum: tuple[float, ...]
    jump_rate: float = 0.0
    jump_law: JumpLaw | None = None
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gaussian_spectrum", tuple(float(v) for v in self.gaussian_spectrum))
        if self.m < 1:
            raise InvalidModelError(f"noise dimension must be >= 1, got {self.m}")
        if len(self.gaussian_spectrum) != self.m:
            raise InvalidModelError(
                f"gaussian spectrum has {len(self.gaussian_spectrum)} eigenvalues, expected m={self.m}"
            )
        if any(not math.isfinite(v) or v < 0.0 for v in self.gaussian_spectrum):
            raise InvalidModelError("gaussian spectrum must be finite and non-negative")
        if not (math.isfinite(self.jump_rate) and self.jump_rate >= 0.0):
            raise InvalidModelError(f"jump rate must be non-negative, got {self.jump_rate}")
        if self.jump_rate > 0.0 and self.jump_law is None:
            raise InvalidModelError("a positive jump rate needs a jump law")
        if self.jump_law is not None and self.jump_law.m != self.m:
            raise InvalidModelError(f"jump law dimension {self.jump_law.m} does not match m={self.m}")
        if not (math.isfinite(self.normalization) and self.normalization >= 0.0):
            raise InvalidModelError(f"normalization must be non-negative, got {self.normalization}")

    @classmethod
    def brownian(cls, m: int = 1) -> "LevyModel":
        """Standard Brownian motion in R^m scaled to unit second moment."""
        return cls(m=m, gaussian_spectrum=(1.0 / m,) * m)

    @property
    def has_jumps(self) -> bool:
        return self.jump_rate > 0.0 and self.jump_law is not None

    @property
    def raw_second_moment(self) -> float:
        jumps = self.jump_rate * self.jump_law.second_moment if self.has_jumps else 0.0
        return math.fsum(self.gaussian_spectrum) + jumps

    def normalized(self) -> "LevyModel":
        raw = self.raw_second_moment
        if raw <= 0.0:
            raise InvalidModelError("cannot normalize a driver with zero second moment")
        LOGGER.debug(f"normalizing Levy driver: raw second moment {raw:.6g}")
        return replace(self, normalization=1.0 / math.sqrt(raw))


def second_moment(model: LevyModel) -> float:
    """E|L(1)|^2 = normalization^2 * (trace Q0 + rate * E|J|^2)."""
    return model.normalization**2 * model.raw_second_moment


@dataclass
class NoiseStream:
    """Random stream of one path, keyed by (seed, path, purpose) through Philox.

    The stream is stateful: draws advance it. ``fresh()`` restarts from the key.
    """

    seed: int
    path: int
    purpose: int = PURPOSE_INCREMENTS
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.path < 0:
            raise InvalidModelError("seed and path index must be non-negative")
        self._rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, self.path, self.purpose])))

    @property
    def rng(self) -> np.random.Generator:
        return self._rng

    def fresh(self) -> "NoiseStream":
        return NoiseStream(self.seed, self.path, self.purpose)

    def substream(self, purpose: int) -> "NoiseStream":
        return NoiseStream(self.seed, self.path, purpose)


def sample_increments(model: LevyModel, stream: NoiseStream, dt: float, n: int) -> np.ndarray:
    """``n`` consecutive increments over steps of length ``dt``, shape (n, m).

    Gaussian draws come first, then Poisson counts, then jump sizes, so a stream
    always yields the same increments for the same (model, dt, n).
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise InvalidModelError(f"time step must be positive, got {dt}")
    rng = stream.rng
    spectrum = np.asarray(model.gaussian_spectrum)
    increments = rng.standard_normal((n, model.m)) * np.sqrt(dt * spectrum)
    if model.has_jumps:
        law = model.jump_law
        counts = rng.poisson(model.jump_rate * dt, size=n)
        total = int(counts.sum())
        if total:
            sizes = law.sample(rng, total)
            np.add.at(increments, np.repeat(np.arange(n), counts), sizes)
        increments -= model.jump_rate * dt * law.mean
    if model.normalization != 1.0:
        increments *= model.normalization
    return increments


def sample_increment(model: LevyModel, stream: NoiseStream, dt: float) -> np.ndarray:
    """One increment L(t + dt) - L(t), shape (m,)."""
    return sample_increments(model, stream, dt, 1)[0]
