"""Exception hierarchy for svie-lift.

Every error raised by the library is a ``dbt_common`` runtime error so callers can
catch ``DbtRuntimeError`` at the boundary, as the CLI does.
"""

from dbt_common.exceptions import (
    DbtRuntimeError,
    DbtValidationError,
)


class SvieLiftError(DbtRuntimeError):
    """Root of all svie-lift errors."""

    CODE = 20000
    MESSAGE = "svie-lift error"


class InvalidCurveError(SvieLiftError):
    """A curve violates the grid or finiteness invariants."""


class GridMismatchError(SvieLiftError):
    """Two curves or operators do not share dx, node count and dimension."""


class EvaluationError(SvieLiftError):
    """Point evaluation outside the admissible range."""


class InvalidModelError(SvieLiftError):
    """A Levy model or jump law has invalid parameters."""


class KernelError(SvieLiftError):
    """A kernel returned non-finite values or violated the shape contract."""


class CertificationError(SvieLiftError):
    """Certification cannot be carried out with the given inputs."""


class PicardConvergenceError(SvieLiftError):
    """Fixed-point iteration of the deterministic Volterra equation did not converge."""


class DivergenceError(SvieLiftError):
    """A path exceeded the norm cap, or too many paths of an ensemble diverged."""

    def __init__(self, msg: str, path: int | None = None, step: int | None = None) -> None:
        super().__init__(msg)
        self.path = path
        self.step = step


class ReplayMismatchError(SvieLiftError):
    """An output directory belongs to a run with a different config hash."""


class ConfigValidationError(DbtValidationError):
    """Scenario configuration failed validation.

    ``field`` holds the dotted path of the offending field, e.g. ``grid.dt``.
    """

    def __init__(self, field: str, problem: str) -> None:
        super().__init__(f"{field}: {problem}")
        self.field = field
        self.problem = problem
