"""Discrete model of the weighted curve space H_w.

Elements of H_w are absolutely continuous U-valued functions on [0, inf) with

    |f|_w^2 = |f(0)|^2 + int_0^inf w(x) |f'(x)|^2 dx.

A ``Curve`` stores node values on a uniform grid x_j = j * dx, j = 0..J, and is
interpreted as the piecewise linear interpolant on [0, J * dx] continued by the
constant ``values[J]`` (the value at infinity). Every ``Curve`` is therefore a genuine
element of H_w and all norms below are exact on that class whenever the weight
supplies exact cell integrals.
"""

import math
from collections.abc import Callable
from dataclasses import (
    dataclass,
    field,
)

import numpy as np
from dbt.adapters.events.logging import AdapterLogger
from scipy import integrate

from svie_lift.exceptions import (
    EvaluationError,
    GridMismatchError,
    InvalidCurveError,
    InvalidModelError,
)

LOGGER = AdapterLogger("svie_lift")

ALPHA_SAFETY_FACTOR = 0.99
CONSISTENCY_RTOL = 1e-6

# Coordinates of an element of the truncated space U = R^d, shape (d,).
HilbertPoint = np.ndarray

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class WeightFunction:
    """Non-decreasing weight w with w(0) = 1 and 1/w integrable.

    ``integral`` is W(x) = int_0^x w and ``inv_integral`` is V(x) = int_0^x 1/w. When
    ``cell_integral`` is given it returns int_a^(a+dx) w for an array of left ends ``a``
    without cancellation; otherwise cells are integrated from ``integral`` or, when that
    is missing as well, with Simpson's rule.
    """

    name: str
    value: ArrayFn
    deriv: ArrayFn
    inv_integral: ArrayFn
    inv_integral_total: float
    alpha_w: float
    integral: ArrayFn | None = None
    cell_integral: Callable[[np.ndarray, float], np.ndarray] | None = None
    inv_cell_integral: Callable[[np.ndarray, float], np.ndarray] | None = None
    alpha_w_exact: bool = True
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    @property
    def has_exact_antiderivatives(self) -> bool:
        return self.integral is not None or self.cell_integral is not None

    def cell_weights(self, dx: float, J: int) -> np.ndarray:
        """int_{x_j}^{x_j+dx} w for j = 0..J-1 (cached per grid)."""
        key = ("w", float(dx), int(J))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        left = np.arange(J, dtype=float) * dx
        if self.cell_integral is not None:
            cells = self.cell_integral(left, dx)
        elif self.integral is not None:
            cells = np.diff(self.integral(np.arange(J + 1, dtype=float) * dx))
        else:
            cells = dx / 6.0 * (self.value(left) + 4.0 * self.value(left + dx / 2.0) + self.value(left + dx))
        cells = np.asarray(cells, dtype=float)
        cells.setflags(write=False)
        self._cache[key] = cells
        return cells

    def node_inv_integral(self, dx: float, J: int) -> np.ndarray:
        """V(x_j) for j = 0..J (cached per grid)."""
        key = ("v", float(dx), int(J))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        nodes = np.arange(J + 1, dtype=float) * dx
        if self.inv_cell_integral is not None:
            values = np.concatenate([[0.0], np.cumsum(self.inv_cell_integral(nodes[:-1], dx))])
        else:
            values = np.asarray(self.inv_integral(nodes), dtype=float)
        values.setflags(write=False)
        self._cache[key] = values
        return values

    def check(self, x_max: float = 20.0, samples: int = 2001) -> None:
        """Verify w(0) = 1, monotonicity, integrability and antiderivative consistency."""
        xs = np.linspace(0.0, x_max, samples)
        if not math.isclose(float(self.value(np.array([0.0]))[0]), 1.0, rel_tol=1e-12):
            raise InvalidModelError(f"weight {self.name}: w(0) must equal 1")
        if np.any(self.deriv(xs) < 0.0):
            raise InvalidModelError(f"weight {self.name}: w must be non-decreasing")
        if not math.isfinite(self.inv_integral_total) or self.inv_integral_total <= 0.0:
            raise InvalidModelError(f"weight {self.name}: 1/w must be integrable")
        h = 1e-5
        probe = xs[1:-1:50]
        checks = [(self.inv_integral, lambda x: 1.0 / self.value(x))]
        if self.integral is not None:
            checks.append((self.integral, self.value))
        for antiderivative, integrand in checks:
            numeric = (antiderivative(probe + h) - antiderivative(probe - h)) / (2.0 * h)
            expected = integrand(probe)
            # quadrature antiderivatives carry absolute noise, so the tolerance follows the integrand's scale
            scale = float(np.max(np.abs(expected)))
            if not np.allclose(numeric, expected, rtol=CONSISTENCY_RTOL, atol=CONSISTENCY_RTOL * scale):
                raise InvalidModelError(f"weight {self.name}: antiderivative inconsistent with w")


def exponential_weight(rho: float) -> WeightFunction:
    """w(x) = exp(rho x); alpha_w = rho exactly."""
    if not rho > 0.0:
        raise InvalidModelError(f"exponential weight needs rho > 0, got {rho}")
    return WeightFunction(
        name=f"exponential(rho={rho:g})",
        value=lambda x: np.exp(rho * x),
        deriv=lambda x: rho * np.exp(rho * x),
        integral=lambda x: np.expm1(rho * x) / rho,
        inv_integral=lambda x: -np.expm1(-rho * x) / rho,
        inv_integral_total=1.0 / rho,
        alpha_w=rho,
        cell_integral=lambda a, dx: np.exp(rho * a) * (math.expm1(rho * dx) / rho),
        inv_cell_integral=lambda a, dx: np.exp(-rho * a) * (-math.expm1(-rho * dx) / rho),
    )


def polynomial_exponential_weight(q: float, rho: float) -> WeightFunction:
    """w(x) = (1 + x)^q exp(rho x) with q, rho >= 0; alpha_w = rho exactly.

    Integrability of 1/w needs rho > 0 or q > 1. Antiderivatives are closed form for
    q = 0 or rho = 0 and computed with adaptive quadrature otherwise.
    """
    if q < 0.0 or rho < 0.0:
        raise InvalidModelError(f"polynomial-exponential weight needs q, rho >= 0, got q={q}, rho={rho}")
    if rho == 0.0 and q <= 1.0:
        raise InvalidModelError(f"polynomial weight (1+x)^{q:g} is not integrable in reciprocal; need q > 1")
    if q == 0.0:
        return exponential_weight(rho)

    def value(x):
        return (1.0 + x) ** q * np.exp(rho * x)

    def deriv(x):
        return value(x) * (q / (1.0 + x) + rho)

    name = f"polynomial-exponential(q={q:g}, rho={rho:g})"
    if rho == 0.0:
        return WeightFunction(
            name=name,
            value=value,
            deriv=deriv,
            integral=lambda x: ((1.0 + x) ** (q + 1.0) - 1.0) / (q + 1.0),
            inv_integral=lambda x: (1.0 - (1.0 + x) ** (1.0 - q)) / (q - 1.0),
            inv_integral_total=1.0 / (q - 1.0),
            alpha_w=0.0,
        )

    def inv_integrand(s):
        return 1.0 / value(s)

    def inv_integral(x):
        x = np.asarray(x, dtype=float)
        flat = [integrate.quad(inv_integrand, 0.0, float(xi), epsabs=1e-14, epsrel=1e-12)[0] for xi in x.ravel()]
        return np.asarray(flat).reshape(x.shape)

    total = integrate.quad(inv_integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12)[0]
    return WeightFunction(
        name=name,
        value=value,
        deriv=deriv,
        inv_integral=inv_integral,
        inv_integral_total=total,
        alpha_w=rho,
        inv_cell_integral=lambda a, dx: dx / 6.0 * (
            inv_integrand(a) + 4.0 * inv_integrand(a + dx / 2.0) + inv_integrand(a + dx)
        ),
    )


def weight_from_callable(
    value: ArrayFn,
    deriv: ArrayFn,
    name: str = "custom",
    sample_max: float = 50.0,
    samples: int = 20001,
) -> WeightFunction:
    """Weight from plain callables; alpha_w is estimated on a dense sample grid."""
    xs = np.linspace(0.0, sample_max, samples)
    ratio = float(np.min(deriv(xs) / value(xs)))
    if ratio < 0.0:
        raise InvalidModelError(f"weight {name}: w must be non-decreasing")
    alpha = ALPHA_SAFETY_FACTOR * ratio
    LOGGER.warning(f"alpha_w for weight {name} is an estimate ({alpha:.6g}) from {samples} samples")

    def inv_integrand(s):
        return 1.0 / value(np.asarray(s, dtype=float))

    def inv_integral(x):
        x = np.asarray(x, dtype=float)
        flat = [integrate.quad(inv_integrand, 0.0, float(xi), epsabs=1e-14, epsrel=1e-12)[0] for xi in x.ravel()]
        return np.asarray(flat).reshape(x.shape)

    total = integrate.quad(inv_integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12)[0]
    return WeightFunction(
        name=name,
        value=value,
        deriv=deriv,
        inv_integral=inv_integral,
        inv_integral_total=total,
        alpha_w=alpha,
        alpha_w_exact=False,
        inv_cell_integral=lambda a, dx: dx / 6.0 * (
            inv_integrand(a) + 4.0 * inv_integrand(a + dx / 2.0) + inv_integrand(a + dx)
        ),
    )


def as_point(u, d: int | None = None) -> HilbertPoint:
    """Coerce ``u`` to a finite coordinate vector of dimension ``d``."""
    point = np.atleast_1d(np.asarray(u, dtype=float))
    if point.ndim != 1:
        raise InvalidCurveError(f"expected a coordinate vector, got shape {point.shape}")
    if d is not None and point.shape[0] != d:
        if point.shape[0] == 1:
            point = np.full(d, point[0])
        else:
            raise GridMismatchError(f"expected dimension {d}, got {point.shape[0]}")
    if not np.all(np.isfinite(point)):
        raise InvalidCurveError("coordinates must be finite")
    return point


@dataclass(frozen=True)
class Curve:
    """Element of H_w on the grid x_j = j * dx, j = 0..J; ``values`` has shape (J+1, d)."""

    dx: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if not (math.isfinite(self.dx) and self.dx > 0.0):
            raise InvalidCurveError(f"grid step must be positive, got {self.dx}")
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 1:
            raise InvalidCurveError(f"curve needs at least two nodes and d >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidCurveError("curve values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, u, dx: float, J: int) -> "Curve":
        point = as_point(u)
        return cls(dx, np.broadcast_to(point, (J + 1, point.shape[0])))

    @classmethod
    def zeros(cls, dx: float, J: int, d: int) -> "Curve":
        return cls(dx, np.zeros((J + 1, d)))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], dx: float, J: int, tail=None) -> "Curve":
        """Sample ``f`` (vectorised, returning shape (n,) or (n, d)) at the nodes.

        When ``tail`` is given it replaces the last node, which then carries the value
        at infinity.
        """
        values = np.array(f(np.arange(J + 1, dtype=float) * dx), dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if tail is not None:
            values[-1] = as_point(tail, values.shape[1])
        return cls(dx, values)

    @property
    def J(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def x_max(self) -> float:
        return self.J * self.dx

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.J + 1, dtype=float) * self.dx

    @property
    def tail(self) -> HilbertPoint:
        return self.values[-1]

    @property
    def slopes(self) -> np.ndarray:
        """Piecewise constant derivative, shape (J, d)."""
        return np.diff(self.values, axis=0) / self.dx

    def same_grid(self, other: "Curve") -> bool:
        return self.dx == other.dx and self.values.shape == other.values.shape

    def _require_same_grid(self, other: "Curve") -> None:
        if not self.same_grid(other):
            raise GridMismatchError(
                f"grid mismatch: (dx={self.dx}, J={self.J}, d={self.d}) vs (dx={other.dx}, J={other.J}, d={other.d})"
            )

    def __add__(self, other: "Curve") -> "Curve":
        self._require_same_grid(other)
        return Curve(self.dx, self.values + other.values)

    def __sub__(self, other: "Curve") -> "Curve":
        self._require_same_grid(other)
        return Curve(self.dx, self.values - other.values)

    def __neg__(self) -> "Curve":
        return Curve(self.dx, -self.values)

    def __mul__(self, scalar: float) -> "Curve":
        return Curve(self.dx, float(scalar) * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CurveOperator:
    """Linear map R^m -> H_w given by one d x m matrix per node; ``matrices`` is (J+1, d, m)."""

    dx: float
    matrices: np.ndarray

    def __post_init__(self):
        matrices = np.array(self.matrices, dtype=float)
        if matrices.ndim != 3 or matrices.shape[0] < 2:
            raise InvalidCurveError(f"operator needs shape (J+1, d, m), got {matrices.shape}")
        if not np.all(np.isfinite(matrices)):
            raise InvalidCurveError("operator entries must be finite")
        matrices.setflags(write=False)
        object.__setattr__(self, "matrices", matrices)

    @property
    def J(self) -> int:
        return self.matrices.shape[0] - 1

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def m(self) -> int:
        return self.matrices.shape[2]

    @property
    def tail_matrix(self) -> np.ndarray:
        return self.matrices[-1]

    def apply(self, v) -> Curve:
        return Curve(self.dx, self.matrices @ as_point(v, self.m))

    def __sub__(self, other: "CurveOperator") -> "CurveOperator":
        if self.dx != other.dx or self.matrices.shape != other.matrices.shape:
            raise GridMismatchError("operator grid mismatch")
        return CurveOperator(self.dx, self.matrices - other.matrices)


def _weighted_slope_products(g: Curve, h: Curve, w: WeightFunction) -> float:
    cells = w.cell_weights(g.dx, g.J)
    return float(np.dot(np.einsum("jd,jd->j", g.slopes, h.slopes), cells))


def norm_w(h: Curve, w: WeightFunction) -> float:
    """|h|_w, exact on piecewise linear curves when w has exact cell integrals."""
    return math.sqrt(inner_w(h, h, w))


def inner_w(g: Curve, h: Curve, w: WeightFunction) -> float:
    g._require_same_grid(h)  # pylint: disable=protected-access
    return float(np.dot(g.values[0], h.values[0])) + _weighted_slope_products(g, h, w)


def batch_norm_w(values: np.ndarray, dx: float, w: WeightFunction) -> np.ndarray:
    """|.|_w of a stack of node arrays of shape (P, J+1, d), returning shape (P,)."""
    slopes = np.diff(values, axis=1) / dx
    cells = w.cell_weights(dx, values.shape[1] - 1)
    squared = np.einsum("pd,pd->p", values[:, 0], values[:, 0]) + np.einsum("pjd,pjd,j->p", slopes, slopes, cells)
    return np.sqrt(squared)


def norm_w_infinity(h: Curve, w: WeightFunction) -> float:
    """Equivalent norm with |h(0)| replaced by the value at infinity."""
    return math.sqrt(inner_w_infinity(h, h, w))


def inner_w_infinity(g: Curve, h: Curve, w: WeightFunction) -> float:
    g._require_same_grid(h)  # pylint: disable=protected-access
    return float(np.dot(g.tail, h.tail)) + _weighted_slope_products(g, h, w)


def seminorm_0(h: Curve, w: WeightFunction) -> float:
    """|h|_0 = sqrt(int w |h'|^2), the derivative part shared by both norms."""
    return math.sqrt(max(_weighted_slope_products(h, h, w), 0.0))


def evaluate_many(h: Curve, xs) -> np.ndarray:
    """Point evaluations at ``xs`` (shape (n,)), returning shape (n, d)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(xs < 0.0) or not np.all(np.isfinite(xs)):
        raise EvaluationError("evaluation points must be finite and >= 0")
    position = np.minimum(xs / h.dx, float(h.J))
    left = np.minimum(np.floor(position).astype(int), h.J - 1)
    theta = (position - left)[:, None]
    return (1.0 - theta) * h.values[left] + theta * h.values[left + 1]


def evaluate(h: Curve, x: float) -> HilbertPoint:
    """delta_x h: linear interpolation between nodes, the tail beyond the last node."""
    return evaluate_many(h, [x])[0]


def delta_infinity(h: Curve) -> HilbertPoint:
    return h.tail.copy()


def adjoint_delta(u, x: float, w: WeightFunction, dx: float, J: int) -> Curve:
    """delta_x^* u = (1 + V(. ^ x)) u sampled on the grid."""
    if not 0.0 <= x <= J * dx:
        raise EvaluationError(f"adjoint point {x} outside grid [0, {J * dx}]")
    point = as_point(u)
    nodes = np.arange(J + 1, dtype=float) * dx
    capped = np.minimum(nodes, x)
    on_grid = capped == nodes
    profile = np.empty(J + 1)
    profile[on_grid] = w.node_inv_integral(dx, J)[on_grid]
    if not np.all(on_grid):
        profile[~on_grid] = float(w.inv_integral(np.array([x]))[0])
    return Curve(dx, (1.0 + profile)[:, None] * point[None, :])


def adjoint_delta0_infinity(u, w: WeightFunction, dx: float, J: int) -> Curve:
    """Adjoint of delta_0 for the |.|_{w,inf} scalar product on the truncated grid.

    Node values (1 + V(x_J) - V(x_j)) u; converges to (1 + int_x^inf 1/w) u as x_J grows.
    """
    V = w.node_inv_integral(dx, J)
    return Curve(dx, (1.0 + V[-1] - V)[:, None] * as_point(u)[None, :])


def psi_maximizer(u, w: WeightFunction, dx: float, J: int) -> Curve:
    """Tail-zero curve (V(x_J) - V(x_j)) u attaining the norm of delta_0 on tail-zero curves."""
    V = w.node_inv_integral(dx, J)
    return Curve(dx, (V[-1] - V)[:, None] * as_point(u)[None, :])


def delta_norm_w(w: WeightFunction, x: float) -> float:
    """Operator norm of delta_x relative to |.|_w: sqrt(1 + V(x))."""
    return math.sqrt(1.0 + float(w.inv_integral(np.array([x]))[0]))


def delta0_norm_w(w: WeightFunction) -> float:  # pylint: disable=unused-argument
    return 1.0


def delta0_norm_w_infinity(w: WeightFunction) -> float:
    return math.sqrt(1.0 + w.inv_integral_total)


def delta0_norm_h0(w: WeightFunction) -> float:
    """Norm of delta_0 restricted to tail-zero curves, relative to |.|_{w,inf}."""
    return math.sqrt(w.inv_integral_total)


def delta_infinity_norm_w(w: WeightFunction) -> float:
    return math.sqrt(1.0 + w.inv_integral_total)


def norm_equivalence_constant(w: WeightFunction) -> float:
    """Sharp c with |h|_w <= c |h|_{w,inf} and |h|_{w,inf} <= c |h|_w.

    Largest eigenvalue of [[1, sqrt(V)], [sqrt(V), 1 + V]] with V = int 1/w, square
    rooted. It exceeds |delta_inf| = sqrt(1 + V) whenever V > 0.
    """
    total = w.inv_integral_total
    return math.sqrt((2.0 + total + math.sqrt(total * total + 4.0 * total)) / 2.0)


def shift(h: Curve, k: int) -> Curve:
    """S_{k dx} h, exact: node j takes node j + k, the tail beyond the last node."""
    if k < 0:
        raise EvaluationError(f"shift index must be >= 0, got {k}")
    index = np.minimum(np.arange(h.J + 1) + k, h.J)
    return Curve(h.dx, h.values[index])


def shift_fractional(h: Curve, t: float) -> Curve:
    """S_t h for arbitrary t >= 0 by linear interpolation; approximate off the grid."""
    if t < 0.0:
        raise EvaluationError(f"shift time must be >= 0, got {t}")
    steps = t / h.dx
    if steps == round(steps):
        return shift(h, int(round(steps)))
    LOGGER.debug(f"fractional shift by {t} is approximate (not a multiple of dx={h.dx})")
    return Curve(h.dx, evaluate_many(h, h.nodes + t))


def project_const(h: Curve) -> Curve:
    """pi_0: the constant curve at the value at infinity."""
    return Curve.constant(h.tail, h.dx, h.J)


def project_h0(h: Curve) -> Curve:
    """pi_1 = id - pi_0: the tail-zero part."""
    return Curve(h.dx, h.values - h.tail[None, :])


def generator_difference(h: Curve) -> Curve:
    """Forward difference (S_dx h - h) / dx approximating the generator d/dx."""
    return Curve(h.dx, (shift(h, 1).values - h.values) / h.dx)


def sample_curve(
    rng: np.random.Generator,
    dx: float,
    J: int,
    d: int,
    scale: float = 1.0,
    tail_zero: bool = False,
) -> Curve:
    """Random curve: Gaussian start plus a random walk with slopes of order ``scale``."""
    steps = rng.standard_normal((J, d)) * scale * math.sqrt(dx)
    values = np.concatenate([rng.standard_normal((1, d)) * scale, steps]).cumsum(axis=0)
    if tail_zero:
        values = values - values[-1]
    return Curve(dx, values)
