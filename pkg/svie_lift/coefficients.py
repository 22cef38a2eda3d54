"""Volterra kernels mu, sigma, their lifts into curve space and Lipschitz certification.

Kernels follow one calling convention: ``mu(t, s, u)`` and ``sigma(t, s, u)`` broadcast
like numpy ufuncs over ``t``, ``s`` and the leading axes of ``u`` (last axis = d) and
return shape ``S + (d,)`` resp. ``S + (d, m)``.
"""

import math
from collections.abc import Callable
from dataclasses import (
    dataclass,
    field,
    replace,
)
from fractions import Fraction

import numpy as np
from dbt.adapters.events.logging import AdapterLogger

from svie_lift.exceptions import (
    CertificationError,
    GridMismatchError,
    InvalidModelError,
    KernelError,
)
from svie_lift.weighted_space import (
    Curve,
    CurveOperator,
    WeightFunction,
    as_point,
    delta0_norm_h0,
    delta0_norm_w,
    delta0_norm_w_infinity,
    norm_w,
    norm_w_infinity,
    sample_curve,
    seminorm_0,
)

LOGGER = AdapterLogger("svie_lift")

Kernel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
TailKernel = Callable[[np.ndarray], np.ndarray]

DEFAULT_ENVELOPE_DX = 2.0**-12
DEFAULT_ENVELOPE_X_MAX = 40.0
SETTLE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Envelope:
    """Scalar function of x >= 0 with an optional limit at infinity."""

    fn: Callable[[np.ndarray], np.ndarray]
    limit: float | None = None

    def curve(self, dx: float, J: int) -> Curve:
        return Curve.from_function(self.fn, dx, J, tail=self.limit)

    def scaled(self, factor: float) -> "Envelope":
        fn = self.fn
        return Envelope(lambda x: factor * fn(x), None if self.limit is None else factor * self.limit)

    def settles_at(self, tolerance: float = SETTLE_TOLERANCE, search_max: float = 400.0) -> float | None:
        """Smallest x on a coarse scan beyond which the envelope stays within tolerance of its limit."""
        if self.limit is None:
            return None
        xs = np.linspace(0.0, search_max, 16001)
        far = np.abs(self.fn(xs) - self.limit) > tolerance
        if not np.any(far):
            return 0.0
        last = int(np.nonzero(far)[0][-1])
        if last == xs.shape[0] - 1:
            return None
        return float(xs[last + 1])


def constant_envelope(value: float) -> Envelope:
    return Envelope(lambda x: np.full(np.shape(x), float(value)), float(value))


@dataclass(frozen=True)
class EnvelopeSpec:
    """Lipschitz envelopes bound u-increments of the kernels, growth envelopes bound their size.

    |mu(x, u) - mu(x, v)| <= lipschitz_a(x) |u - v| and |mu(x, u)| <= growth_a(x) (1 + |u|),
    and likewise for sigma in operator norm. Growth envelopes default to the Lipschitz ones.
    """

    lipschitz_a: Envelope
    lipschitz_b: Envelope
    growth_a: Envelope | None = None
    growth_b: Envelope | None = None

    def scaled(self, a: float = 1.0, b: float = 1.0) -> "EnvelopeSpec":
        return EnvelopeSpec(
            self.lipschitz_a.scaled(a),
            self.lipschitz_b.scaled(b),
            None if self.growth_a is None else self.growth_a.scaled(a),
            None if self.growth_b is None else self.growth_b.scaled(b),
        )


@dataclass(frozen=True)
class CoefficientSet:
    """Kernels of an SVIE together with optional long-term limits and envelopes."""

    name: str
    d: int
    m: int
    mu: Kernel
    sigma: Kernel
    homogeneous: bool = True
    mu_infinity: TailKernel | None = None
    sigma_infinity: TailKernel | None = None
    envelopes: EnvelopeSpec | None = None
    vanishing_tails: bool = False
    affine_drift: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise InvalidModelError(f"dimensions must be >= 1, got d={self.d}, m={self.m}")
        if self.mu_infinity is None or self.sigma_infinity is None:
            LOGGER.warning(
                f"kernel {self.name} declares no long-term limits; lifted curves use the last node value as tail"
            )

    def mu_at(self, t, s, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return _checked(self.mu(np.asarray(t, dtype=float), np.asarray(s, dtype=float), u), (self.d,), self.name)

    def sigma_at(self, t, s, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        raw = self.sigma(np.asarray(t, dtype=float), np.asarray(s, dtype=float), u)
        return _checked(raw, (self.d, self.m), self.name)


def _checked(values, trailing: tuple[int, ...], name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[values.ndim - len(trailing) :] != trailing:
        raise KernelError(f"kernel {name} returned shape {values.shape}, expected trailing axes {trailing}")
    if not np.all(np.isfinite(values)):
        raise KernelError(f"kernel {name} returned non-finite values")
    return values


def _lag(t, s) -> np.ndarray:
    return np.asarray(t, dtype=float) - np.asarray(s, dtype=float)


def _batch_shape(tau: np.ndarray, u: np.ndarray) -> tuple[int, ...]:
    return np.broadcast_shapes(tau.shape, u.shape[:-1])


def _loading(m: int, loading) -> np.ndarray:
    vector = np.ones(m) if loading is None else np.asarray(loading, dtype=float)
    if vector.shape != (m,):
        raise InvalidModelError(f"loading vector must have length m={m}")
    length = np.linalg.norm(vector)
    if length == 0.0:
        raise InvalidModelError("loading vector must be non-zero")
    return vector / length


def zero_coefficients(d: int = 1, m: int = 1) -> CoefficientSet:
    def mu(t, s, u):
        return np.zeros(_batch_shape(_lag(t, s), u) + (d,))

    def sigma(t, s, u):
        return np.zeros(_batch_shape(_lag(t, s), u) + (d, m))

    zero = constant_envelope(0.0)
    return CoefficientSet(
        name="zero",
        d=d,
        m=m,
        mu=mu,
        sigma=sigma,
        mu_infinity=lambda u: np.zeros(np.shape(u)),
        sigma_infinity=lambda u: np.zeros(np.shape(u) + (m,)),
        envelopes=EnvelopeSpec(zero, zero),
        vanishing_tails=True,
        affine_drift=True,
    )


def ornstein_uhlenbeck(lam: float, theta, sigma, d: int = 1, m: int = 1) -> CoefficientSet:
    """mu = lam (theta - u), sigma constant: the Volterra form of an OU process."""
    if not lam > 0.0:
        raise InvalidModelError(f"mean reversion must be positive, got {lam}")
    theta_vec = as_point(theta, d)
    matrix = np.broadcast_to(np.asarray(sigma, dtype=float), (d, m)).copy()
    if d == m and np.ndim(sigma) == 0:
        matrix = float(sigma) * np.eye(d)

    def drift(t, s, u):
        shape = _batch_shape(_lag(t, s), u)
        return np.broadcast_to(lam * (theta_vec - u), shape + (d,))

    def diffusion(t, s, u):
        return np.broadcast_to(matrix, _batch_shape(_lag(t, s), u) + (d, m))

    sigma_norm = float(np.linalg.norm(matrix, 2))
    return CoefficientSet(
        name="ornstein_uhlenbeck",
        d=d,
        m=m,
        mu=drift,
        sigma=diffusion,
        mu_infinity=lambda u: lam * (theta_vec - np.asarray(u)),
        sigma_infinity=lambda u: np.broadcast_to(matrix, np.shape(u)[:-1] + (d, m)),
        envelopes=EnvelopeSpec(
            lipschitz_a=constant_envelope(lam),
            lipschitz_b=constant_envelope(0.0),
            growth_a=constant_envelope(lam * max(1.0, float(np.linalg.norm(theta_vec)))),
            growth_b=constant_envelope(sigma_norm),
        ),
        affine_drift=True,
        params={"lam": lam, "theta": theta_vec.tolist(), "sigma": matrix.tolist()},
    )


def _decaying_kernel(
    name: str,
    profile: Callable[[np.ndarray], np.ndarray],
    drift_scale: float,
    diffusion_scale: float,
    d: int,
    m: int,
    loading,
    params: dict,
) -> CoefficientSet:
    direction = _loading(m, loading)

    def drift(t, s, u):
        return drift_scale * profile(_lag(t, s))[..., None] * u

    def diffusion(t, s, u):
        weight = diffusion_scale * profile(_lag(t, s))[..., None, None]
        return weight * np.asarray(u)[..., :, None] * direction

    return CoefficientSet(
        name=name,
        d=d,
        m=m,
        mu=drift,
        sigma=diffusion,
        mu_infinity=lambda u: np.zeros(np.shape(u)),
        sigma_infinity=lambda u: np.zeros(np.shape(u) + (m,)),
        envelopes=EnvelopeSpec(
            Envelope(lambda x: abs(drift_scale) * profile(x), 0.0),
            Envelope(lambda x: abs(diffusion_scale) * profile(x), 0.0),
        ),
        vanishing_tails=True,
        affine_drift=True,
        params=params,
    )


def exponential_kernel(
    drift_scale: float,
    diffusion_scale: float,
    decay: float,
    d: int = 1,
    m: int = 1,
    loading=None,
) -> CoefficientSet:
    """mu = c e^{-rho tau} u, sigma = c' e^{-rho tau} u (x) loading."""
    if not decay > 0.0:
        raise InvalidModelError(f"decay must be positive, got {decay}")
    return _decaying_kernel(
        "exponential",
        lambda tau: np.exp(-decay * tau),
        drift_scale,
        diffusion_scale,
        d,
        m,
        loading,
        {"drift_scale": drift_scale, "diffusion_scale": diffusion_scale, "decay": decay},
    )


def gamma_kernel(
    drift_scale: float,
    diffusion_scale: float,
    power: float,
    d: int = 1,
    m: int = 1,
    loading=None,
) -> CoefficientSet:
    """mu = c (1 + tau)^{-p} u; the envelope lies in H_w for polynomial weights of order < 2p + 1."""
    if not power > 0.0:
        raise InvalidModelError(f"power must be positive, got {power}")
    return _decaying_kernel(
        "gamma",
        lambda tau: (1.0 + tau) ** (-power),
        drift_scale,
        diffusion_scale,
        d,
        m,
        loading,
        {"drift_scale": drift_scale, "diffusion_scale": diffusion_scale, "power": power},
    )


def without_diffusion(coeffs: CoefficientSet) -> CoefficientSet:
    """Same drift with sigma = 0, the deterministic Volterra equation."""
    m = coeffs.m

    def sigma(t, s, u):
        return np.zeros(_batch_shape(_lag(t, s), u) + (coeffs.d, m))

    zero = constant_envelope(0.0)
    envelopes = None if coeffs.envelopes is None else replace(coeffs.envelopes, lipschitz_b=zero, growth_b=zero)
    return replace(
        coeffs,
        name=f"{coeffs.name} (drift only)",
        sigma=sigma,
        sigma_infinity=lambda u: np.zeros(np.shape(u) + (m,)),
        envelopes=envelopes,
    )


def lift_a(coeffs: CoefficientSet, t: float, h: Curve) -> Curve:
    """a(t, h) = mu(t + ., t, h(0)) on the grid of ``h``."""
    if h.d != coeffs.d:
        raise GridMismatchError(f"curve dimension {h.d} does not match kernel dimension {coeffs.d}")
    u = h.values[0]
    values = np.array(coeffs.mu_at(t + h.nodes, t, u))
    if coeffs.mu_infinity is not None:
        values[-1] = _checked(coeffs.mu_infinity(u), (coeffs.d,), coeffs.name)
    return Curve(h.dx, values)


def lift_b(coeffs: CoefficientSet, t: float, h: Curve) -> CurveOperator:
    """b(t, h) = sigma(t + ., t, h(0)) as one d x m matrix per node."""
    if h.d != coeffs.d:
        raise GridMismatchError(f"curve dimension {h.d} does not match kernel dimension {coeffs.d}")
    u = h.values[0]
    matrices = np.array(coeffs.sigma_at(t + h.nodes, t, u))
    if coeffs.sigma_infinity is not None:
        matrices[-1] = _checked(coeffs.sigma_infinity(u), (coeffs.d, coeffs.m), coeffs.name)
    return CurveOperator(h.dx, matrices)


def truncation_mass(coeffs: CoefficientSet, t: float, u, x_end: float) -> float:
    """Distance between the kernels at the last node and their declared limits."""
    u = as_point(u, coeffs.d)
    mass = 0.0
    if coeffs.mu_infinity is not None:
        mass += float(np.linalg.norm(coeffs.mu_at(t + x_end, t, u) - coeffs.mu_infinity(u)))
    if coeffs.sigma_infinity is not None:
        mass += float(np.linalg.norm(coeffs.sigma_at(t + x_end, t, u) - coeffs.sigma_infinity(u)))
    return mass


def support_margin(coeffs: CoefficientSet, tolerance: float = SETTLE_TOLERANCE) -> float | None:
    """Lag beyond which both Lipschitz envelopes are within ``tolerance`` of their limits."""
    if coeffs.envelopes is None:
        return None
    margins = [
        coeffs.envelopes.lipschitz_a.settles_at(tolerance),
        coeffs.envelopes.lipschitz_b.settles_at(tolerance),
    ]
    if any(margin is None for margin in margins):
        return None
    return max(margins)


def check_homogeneous(coeffs: CoefficientSet, rng: np.random.Generator, n: int = 64, tol: float = 1e-12) -> bool:
    """Compare mu(t, s, u) with mu(t - s, 0, u) (and sigma) on random triples."""
    s = rng.uniform(0.0, 10.0, n)
    t = s + rng.uniform(0.0, 10.0, n)
    u = rng.standard_normal((n, coeffs.d))
    pairs = [
        (coeffs.mu_at(t, s, u), coeffs.mu_at(t - s, np.zeros(n), u)),
        (coeffs.sigma_at(t, s, u), coeffs.sigma_at(t - s, np.zeros(n), u)),
    ]
    return all(np.allclose(left, right, rtol=tol, atol=tol) for left, right in pairs)


def check_vanishing_tails(coeffs: CoefficientSet, rng: np.random.Generator, x_large: float = 60.0) -> bool:
    """Numerical check of mu(x, u) -> 0 and sigma(x, u) -> 0 at a single large lag."""
    u = rng.standard_normal((16, coeffs.d))
    lag = np.full(16, x_large)
    scale = 1.0 + np.linalg.norm(u, axis=-1)
    drift = np.linalg.norm(coeffs.mu_at(lag, np.zeros(16), u), axis=-1) / scale
    diffusion = np.linalg.norm(coeffs.sigma_at(lag, np.zeros(16), u), axis=(-2, -1)) / scale
    return bool(np.all(drift < 1e-8) and np.all(diffusion < 1e-8))


def estimate_dissipativity(coeffs: CoefficientSet, rng: np.random.Generator, n_pairs: int = 64) -> float | None:
    """beta with <mu_inf(u) - mu_inf(v), u - v> <= -beta |u - v|^2 on sampled constant-curve pairs.

    Exact for affine drifts; returns None when no long-term drift limit is declared.
    """
    if coeffs.mu_infinity is None:
        return None
    first = rng.standard_normal((n_pairs, coeffs.d)) * 3.0
    second = rng.standard_normal((n_pairs, coeffs.d)) * 3.0
    delta = first - second
    change = np.asarray(coeffs.mu_infinity(first)) - np.asarray(coeffs.mu_infinity(second))
    ratios = np.einsum("nd,nd->n", change, delta) / np.einsum("nd,nd->n", delta, delta)
    return float(-np.max(ratios))


def format_constant(value: float) -> str:
    """Render as a small fraction when one matches to 1e-6, e.g. ``9/16``."""
    fraction = Fraction(value).limit_denominator(1000)
    if abs(float(fraction) - value) <= 1e-6 * max(1.0, abs(value)):
        return str(fraction)
    return f"{value:.6g}"


@dataclass(frozen=True)
class CriterionVerdict:
    """One limiting-law criterion ``lhs < rhs`` evaluated with its Lipschitz constants."""

    name: str
    expression: str
    applicable: bool
    L_a: float = 0.0
    L_b: float = 0.0
    lhs: float = 0.0
    rhs: float = 0.0
    passed: bool = False
    conclusion: str = ""
    reason: str = ""

    @property
    def summary(self) -> str:
        if not self.applicable:
            return f"{self.expression}: not applicable ({self.reason})"
        status = "PASS" if self.passed else "FAIL"
        return f"{self.expression}: {format_constant(self.lhs)} < {format_constant(self.rhs)}: {status}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "expression": self.expression,
            "applicable": self.applicable,
            "L_a": self.L_a,
            "L_b": self.L_b,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "passed": self.passed,
            "conclusion": self.conclusion,
            "reason": self.reason,
            "summary": self.summary,
        }


@dataclass(frozen=True)
class LipschitzReport:
    """Norm-level Lipschitz and growth constants, their squared forms and criterion verdicts.

    The squared values ``raw_*`` are the quantities the existence theory bounds; the
    criteria compare the norm-level constants.
    """

    L_a: float
    L_b: float
    K_a: float
    K_b: float
    alpha_w: float
    alpha_w_exact: bool
    beta: float | None
    beta_source: str
    criteria: tuple[CriterionVerdict, ...]

    def __post_init__(self):
        for value in (self.L_a, self.L_b, self.K_a, self.K_b):
            if not (math.isfinite(value) and value >= 0.0):
                raise CertificationError(f"certified constants must be finite and non-negative, got {value}")

    @property
    def raw_L_a(self) -> float:
        return self.L_a**2

    @property
    def raw_L_b(self) -> float:
        return self.L_b**2

    @property
    def raw_K_a(self) -> float:
        return self.K_a**2

    @property
    def raw_K_b(self) -> float:
        return self.K_b**2

    def criterion(self, name: str) -> CriterionVerdict:
        for verdict in self.criteria:
            if verdict.name == name:
                return verdict
        raise KeyError(name)

    @property
    def conclusion(self) -> str:
        for name in ("persistent_impact", "temporary_impact"):
            verdict = self.criterion(name)
            if verdict.applicable and verdict.passed:
                return verdict.conclusion
        return "no limiting-law criterion met"

    def to_dict(self) -> dict:
        return {
            "L_a": self.L_a,
            "L_b": self.L_b,
            "K_a": self.K_a,
            "K_b": self.K_b,
            "raw_L_a": self.raw_L_a,
            "raw_L_b": self.raw_L_b,
            "raw_K_a": self.raw_K_a,
            "raw_K_b": self.raw_K_b,
            "alpha_w": self.alpha_w,
            "alpha_w_exact": self.alpha_w_exact,
            "beta": self.beta,
            "beta_source": self.beta_source,
            "criteria": [verdict.to_dict() for verdict in self.criteria],
            "conclusion": self.conclusion,
        }


def _resolve_beta(coeffs: CoefficientSet, w: WeightFunction, beta: float | None) -> tuple[float | None, str]:
    estimate = None
    if coeffs.affine_drift:
        estimate = estimate_dissipativity(coeffs, np.random.default_rng(0))
    if beta is None:
        if estimate is None or estimate <= 0.0:
            return None, "unavailable"
        chosen, source = estimate, "estimated"
    elif estimate is not None and beta <= estimate * (1.0 + 1e-12):
        chosen, source = beta, "verified"
    else:
        chosen, source = beta, "user-asserted"
    cap = w.alpha_w / 2.0
    if chosen > cap:
        LOGGER.warning(f"beta={chosen:.6g} exceeds alpha_w/2={cap:.6g}; using the cap")
        chosen, source = cap, f"{source}, capped to alpha_w/2"
    return chosen, source


def certify(
    coeffs: CoefficientSet,
    w: WeightFunction,
    beta: float | None = None,
    dx: float = DEFAULT_ENVELOPE_DX,
    x_max: float = DEFAULT_ENVELOPE_X_MAX,
) -> LipschitzReport:
    """Evaluate the Lipschitz/growth constants and the three limiting-law criteria.

    Args:
        coeffs: Kernels with envelopes.
        w: Weight of the curve space.
        beta: Dissipativity constant of the drift at infinity; verified when the drift
            is affine, otherwise taken as asserted.
        dx: Grid step on which the envelopes are sampled.
        x_max: Extent of that grid; envelopes are continued by their limits.

    Returns:
        LipschitzReport with the general constants and one verdict per criterion.

    Raises:
        CertificationError: when envelopes are missing, or vanishing tails are declared
            for a weight with alpha_w <= 0.
    """
    if coeffs.envelopes is None:
        raise CertificationError(f"cannot certify kernel {coeffs.name}: no envelopes supplied")
    J = max(1, int(math.ceil(x_max / dx - 1e-9)))
    envelopes = coeffs.envelopes
    lip_a = envelopes.lipschitz_a.curve(dx, J)
    lip_b = envelopes.lipschitz_b.curve(dx, J)
    growth_a = (envelopes.growth_a or envelopes.lipschitz_a).curve(dx, J)
    growth_b = (envelopes.growth_b or envelopes.lipschitz_b).curve(dx, J)

    delta0 = delta0_norm_w(w)
    L_a, L_b = norm_w(lip_a, w) * delta0, norm_w(lip_b, w) * delta0
    K_a, K_b = norm_w(growth_a, w) * delta0, norm_w(growth_b, w) * delta0
    criteria = [
        CriterionVerdict(
            name="general",
            expression="Lipschitz and linear growth",
            applicable=True,
            L_a=L_a,
            L_b=L_b,
            lhs=0.0,
            rhs=math.inf,
            passed=True,
            conclusion="unique mild solution exists",
        )
    ]

    if coeffs.vanishing_tails:
        if w.alpha_w <= 0.0:
            raise CertificationError(f"vanishing-tail criterion needs alpha_w > 0, weight {w.name} has {w.alpha_w}")
        if not check_vanishing_tails(coeffs, np.random.default_rng(0)):
            LOGGER.warning(f"kernel {coeffs.name} declares vanishing tails but is not small at a large lag")
        factor = delta0_norm_h0(w)
        la, lb = norm_w_infinity(lip_a, w) * factor, norm_w_infinity(lip_b, w) * factor
        lhs = lb**2 + 2.0 * la
        criteria.append(
            CriterionVerdict(
                name="temporary_impact",
                expression="L_b^2 + 2L_a < alpha_w",
                applicable=True,
                L_a=la,
                L_b=lb,
                lhs=lhs,
                rhs=w.alpha_w,
                passed=lhs < w.alpha_w,
                conclusion="limiting law exists, depends on initial value",
            )
        )
    else:
        criteria.append(
            CriterionVerdict(
                name="temporary_impact",
                expression="L_b^2 + 2L_a < alpha_w",
                applicable=False,
                reason="kernels do not vanish at infinity",
            )
        )

    chosen_beta, beta_source = _resolve_beta(coeffs, w, beta)
    if chosen_beta is None:
        criteria.append(
            CriterionVerdict(
                name="persistent_impact",
                expression="2L_a + L_b^2 < 2beta",
                applicable=False,
                reason="no dissipativity constant beta",
            )
        )
    else:
        factor = delta0_norm_w_infinity(w)
        la, lb = seminorm_0(lip_a, w) * factor, norm_w_infinity(lip_b, w) * factor
        lhs = 2.0 * la + lb**2
        criteria.append(
            CriterionVerdict(
                name="persistent_impact",
                expression="2L_a + L_b^2 < 2beta",
                applicable=True,
                L_a=la,
                L_b=lb,
                lhs=lhs,
                rhs=2.0 * chosen_beta,
                passed=lhs < 2.0 * chosen_beta,
                conclusion="limiting law exists, independent of initial value",
            )
        )

    report = LipschitzReport(
        L_a=L_a,
        L_b=L_b,
        K_a=K_a,
        K_b=K_b,
        alpha_w=w.alpha_w,
        alpha_w_exact=w.alpha_w_exact,
        beta=chosen_beta,
        beta_source=beta_source,
        criteria=tuple(criteria),
    )
    LOGGER.info(f"certified kernel {coeffs.name}: {report.conclusion}")
    return report


CurvePairSampler = Callable[[np.random.Generator], tuple[Curve, Curve]]


def empirical_lipschitz(
    coeffs: CoefficientSet,
    w: WeightFunction,
    sampler: CurvePairSampler | None = None,
    dx: float = 2.0**-6,
    J: int = 512,
    t: float = 0.0,
    n_samples: int = 200,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo lower bounds for the Lipschitz constants of the lifts a and b.

    Pairs with h1 = h2 are skipped. The operator difference of b is measured on a random
    unit direction v per pair.
    """
    rng = np.random.default_rng(seed)
    if sampler is None:

        def sampler(generator):
            return (
                sample_curve(generator, dx, J, coeffs.d),
                sample_curve(generator, dx, J, coeffs.d),
            )

    best_a = best_b = 0.0
    for _ in range(n_samples):
        first, second = sampler(rng)
        distance = norm_w(first - second, w)
        if distance == 0.0:
            continue
        drift_gap = lift_a(coeffs, t, first) - lift_a(coeffs, t, second)
        best_a = max(best_a, norm_w(drift_gap, w) / distance)
        direction = rng.standard_normal(coeffs.m)
        direction /= np.linalg.norm(direction)
        diffusion_gap = (lift_b(coeffs, t, first) - lift_b(coeffs, t, second)).apply(direction)
        best_b = max(best_b, norm_w(diffusion_gap, w) / distance)
    return best_a, best_b
