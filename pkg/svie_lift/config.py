# pylint: disable=wrong-import-order  # Necessary due to conditional Python 3.11+ StrEnum import
"""
Scenario configuration: YAML files validated into dbtClassMixin dataclasses and built into runtime objects.
"""

import hashlib
import json
import math
import sys
from dataclasses import (
    dataclass,
    field,
    fields,
    is_dataclass,
    replace,
)
from pathlib import Path
from typing import (
    Any,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import yaml
from dbt.adapters.events.logging import AdapterLogger
from dbt_common.dataclass_schema import (
    ValidationError,
    dbtClassMixin,
)

from svie_lift.coefficients import (
    DEFAULT_ENVELOPE_DX,
    DEFAULT_ENVELOPE_X_MAX,
    CoefficientSet,
    exponential_kernel,
    gamma_kernel,
    ornstein_uhlenbeck,
    support_margin,
    zero_coefficients,
)
from svie_lift.exceptions import (
    ConfigValidationError,
    SvieLiftError,
)
from svie_lift.include import (
    SCENARIO_PATH,
    scenario_file,
)
from svie_lift.invariance import (
    DEFAULT_LEVEL,
    DEFAULT_RESAMPLES,
)
from svie_lift.levy_noise import (
    GaussianJumps,
    LevyModel,
    SymmetricTwoPointJumps,
)
from svie_lift.spde_solver import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHECK_EVERY,
    DEFAULT_DIVERGENCE_CAP,
    InitialCondition,
    SolverConfig,
)
from svie_lift.weighted_space import (
    WeightFunction,
    exponential_weight,
    polynomial_exponential_weight,
)

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from enum import Enum

    class StrEnum(str, Enum):
        """
        Backport of StrEnum for Python < 3.11.
        """


LOGGER = AdapterLogger("svie_lift")

# Fields that do not change results and are left out of the config hash.
UNHASHED_FIELDS = ("workers",)


class WeightFamily(StrEnum):
    EXPONENTIAL = "exponential"
    POLYNOMIAL_EXPONENTIAL = "polynomial_exponential"


class KernelFamily(StrEnum):
    ORNSTEIN_UHLENBECK = "ornstein_uhlenbeck"
    EXPONENTIAL = "exponential"
    GAMMA = "gamma"
    ZERO = "zero"


class JumpLawKind(StrEnum):
    TWO_POINT = "two_point"
    GAUSSIAN = "gaussian"


class InitialKind(StrEnum):
    CONSTANT = "constant"
    SAMPLED = "sampled"


# (required, optional) parameter names per family
WEIGHT_PARAMS = {
    WeightFamily.EXPONENTIAL: ({"rho"}, set()),
    WeightFamily.POLYNOMIAL_EXPONENTIAL: ({"q", "rho"}, set()),
}
KERNEL_PARAMS = {
    KernelFamily.ORNSTEIN_UHLENBECK: ({"lam", "theta", "sigma"}, set()),
    KernelFamily.EXPONENTIAL: ({"drift_scale", "diffusion_scale", "decay"}, {"loading"}),
    KernelFamily.GAMMA: ({"drift_scale", "diffusion_scale", "power"}, {"loading"}),
    KernelFamily.ZERO: (set(), set()),
}
JUMP_PARAMS = {
    JumpLawKind.TWO_POINT: ({"height"}, set()),
    JumpLawKind.GAUSSIAN: ({"location", "scale"}, set()),
}


@dataclass
class DimensionsConfig(dbtClassMixin):
    d: int = 1
    m: int = 1


@dataclass
class WeightConfig(dbtClassMixin):
    family: str = WeightFamily.EXPONENTIAL.value
    params: dict[str, Any] = field(default_factory=lambda: {"rho": 1.0})


@dataclass
class GridConfig(dbtClassMixin):
    dt: float
    x_max: float | None = None


@dataclass
class KernelConfig(dbtClassMixin):
    family: str
    params: dict[str, Any] = field(default_factory=dict)
    # false drops the Lipschitz and growth envelopes; certification then fails
    envelopes: bool = True


@dataclass
class JumpConfig(dbtClassMixin):
    rate: float
    law: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class NoiseConfig(dbtClassMixin):
    gaussian_spectrum: list[float]
    jumps: JumpConfig | None = None
    normalize: bool = True


@dataclass
class InitialConfig(dbtClassMixin):
    kind: str = InitialKind.CONSTANT.value
    value: list[float] = field(default_factory=lambda: [0.0])
    scale: float = 0.0


@dataclass
class CertifyConfig(dbtClassMixin):
    beta: float | None = None
    envelope_dx: float = DEFAULT_ENVELOPE_DX
    envelope_x_max: float = DEFAULT_ENVELOPE_X_MAX


@dataclass
class LawConfig(dbtClassMixin):
    t1: float | None = None
    t2: float | None = None
    paths: int = 10000
    resamples: int = DEFAULT_RESAMPLES
    level: float = DEFAULT_LEVEL
    x0_a: list[float] | None = None
    x0_b: list[float] | None = None


@dataclass
class OracleConfig(dbtClassMixin):
    paths: int = 4
    horizon: float = 1.0
    dts: list[float] = field(default_factory=lambda: [2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9])
    picard_dt: float = 2.0**-12


@dataclass
class OutputConfig(dbtClassMixin):
    dir: str = "svie_output"
    trajectories: bool = False
    record_every: int = 1
    snapshots: list[float] = field(default_factory=list)
    norms: bool = False


@dataclass
class SolverSettings(dbtClassMixin):
    divergence_cap: float = DEFAULT_DIVERGENCE_CAP
    check_every: int = DEFAULT_CHECK_EVERY
    batch_size: int = DEFAULT_BATCH_SIZE


# pylint: disable=too-many-instance-attributes  # One attribute per scenario file section
@dataclass
class ScenarioConfig(dbtClassMixin):
    """Scenario file contents."""

    name: str
    seed: int
    horizon: float
    grid: GridConfig
    kernel: KernelConfig
    noise: NoiseConfig
    paths: int = 1000
    dimensions: DimensionsConfig = field(default_factory=DimensionsConfig)
    weight: WeightConfig = field(default_factory=WeightConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    law: LawConfig = field(default_factory=LawConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    workers: int = 1

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, excluding fields that do not change results."""
        data = {key: value for key, value in self.to_dict().items() if key not in UNHASHED_FIELDS}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _dataclass_type(annotation) -> type | None:
    if is_dataclass(annotation):
        return annotation
    if get_origin(annotation) in (Union, type(int | None)):
        for arg in get_args(annotation):
            if is_dataclass(arg):
                return arg
    return None


def _reject_unknown_fields(cls: type, data: Any, prefix: str = "") -> None:
    if not isinstance(data, dict):
        return
    hints = get_type_hints(cls)
    known = {f.name: hints[f.name] for f in fields(cls)}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigValidationError(path, "unknown field")
        nested = _dataclass_type(known[key])
        if nested is not None:
            _reject_unknown_fields(nested, value, f"{path}.")


def _check_params(path: str, params: dict[str, Any], spec: tuple[set[str], set[str]]) -> None:
    required, optional = spec
    for key in params:
        if key not in required | optional:
            raise ConfigValidationError(f"{path}.{key}", "unknown parameter")
    for key in sorted(required - set(params)):
        raise ConfigValidationError(f"{path}.{key}", "required parameter missing")


def _check_family(path: str, value: str, family: type[StrEnum]) -> StrEnum:
    try:
        return family(value)
    except ValueError:
        known = ", ".join(member.value for member in family)
        raise ConfigValidationError(path, f"unknown family {value!r} (known: {known})") from None


def _check_positive(path: str, value: float | int | None) -> None:
    if value is None or not math.isfinite(value) or value <= 0:
        raise ConfigValidationError(path, f"must be > 0, got {value}")


def _check_length(path: str, values: list | None, expected: int, what: str) -> None:
    if values is not None and len(values) not in (1, expected):
        raise ConfigValidationError(path, f"expected {expected} values ({what}), got {len(values)}")


# pylint: disable=too-many-branches  # One branch per semantic rule keeps the messages field-specific
def validate_semantics(cfg: ScenarioConfig) -> None:
    """Checks beyond the JSON schema; every failure names the dotted field path."""
    _check_positive("grid.dt", cfg.grid.dt)
    _check_positive("horizon", cfg.horizon)
    _check_positive("paths", cfg.paths)
    _check_positive("dimensions.d", cfg.dimensions.d)
    _check_positive("dimensions.m", cfg.dimensions.m)
    _check_positive("workers", cfg.workers)
    if cfg.grid.x_max is not None and cfg.grid.x_max < cfg.horizon + cfg.grid.dt - 1e-12:
        raise ConfigValidationError("grid.x_max", f"must be at least horizon + dt = {cfg.horizon + cfg.grid.dt}")

    weight = _check_family("weight.family", cfg.weight.family, WeightFamily)
    _check_params("weight.params", cfg.weight.params, WEIGHT_PARAMS[weight])
    kernel = _check_family("kernel.family", cfg.kernel.family, KernelFamily)
    _check_params("kernel.params", cfg.kernel.params, KERNEL_PARAMS[kernel])
    d, m = cfg.dimensions.d, cfg.dimensions.m

    if len(cfg.noise.gaussian_spectrum) != m:
        raise ConfigValidationError("noise.gaussian_spectrum", f"expected m={m} eigenvalues")
    if any(value < 0 for value in cfg.noise.gaussian_spectrum):
        raise ConfigValidationError("noise.gaussian_spectrum", "eigenvalues must be non-negative")
    if cfg.noise.jumps is not None:
        law = _check_family("noise.jumps.law", cfg.noise.jumps.law, JumpLawKind)
        _check_params("noise.jumps.params", cfg.noise.jumps.params, JUMP_PARAMS[law])
        if cfg.noise.jumps.rate < 0:
            raise ConfigValidationError("noise.jumps.rate", "must be non-negative")

    _check_family("initial.kind", cfg.initial.kind, InitialKind)
    _check_length("initial.value", cfg.initial.value, d, "one per coordinate of U")
    if cfg.initial.scale < 0:
        raise ConfigValidationError("initial.scale", "must be non-negative")

    if cfg.certify.beta is not None:
        _check_positive("certify.beta", cfg.certify.beta)
    _check_positive("certify.envelope_dx", cfg.certify.envelope_dx)
    _check_positive("certify.envelope_x_max", cfg.certify.envelope_x_max)

    if cfg.law.t1 is not None and cfg.law.t2 is not None and not cfg.law.t1 < cfg.law.t2:
        raise ConfigValidationError("law.t1", "must be smaller than law.t2")
    _check_positive("law.paths", cfg.law.paths)
    _check_positive("law.resamples", cfg.law.resamples)
    if not 0.0 < cfg.law.level < 1.0:
        raise ConfigValidationError("law.level", "must lie in (0, 1)")
    _check_length("law.x0_a", cfg.law.x0_a, d, "one per coordinate of U")
    _check_length("law.x0_b", cfg.law.x0_b, d, "one per coordinate of U")

    _check_positive("oracle.paths", cfg.oracle.paths)
    _check_positive("oracle.horizon", cfg.oracle.horizon)
    _check_positive("oracle.picard_dt", cfg.oracle.picard_dt)
    for index, dt in enumerate(cfg.oracle.dts):
        _check_positive(f"oracle.dts.{index}", dt)

    _check_positive("output.record_every", cfg.output.record_every)
    for index, time in enumerate(cfg.output.snapshots):
        if not 0.0 <= time <= cfg.horizon:
            raise ConfigValidationError(f"output.snapshots.{index}", f"must lie in [0, {cfg.horizon}]")
    _check_positive("solver.divergence_cap", cfg.solver.divergence_cap)
    _check_positive("solver.check_every", cfg.solver.check_every)
    _check_positive("solver.batch_size", cfg.solver.batch_size)


def parse_config(data: Any, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    """Validate a decoded scenario mapping after applying CLI overrides."""
    if not isinstance(data, dict):
        raise ConfigValidationError("<root>", "scenario file must contain a mapping")
    data = json.loads(json.dumps(data))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "out":
            data.setdefault("output", {})["dir"] = str(value)
        elif key == "paths":
            data["paths"] = value
            data.setdefault("law", {})["paths"] = value
        else:
            data[key] = value
    _reject_unknown_fields(ScenarioConfig, data)
    try:
        ScenarioConfig.validate(data)
    except ValidationError as exc:
        path = ".".join(str(part) for part in getattr(exc, "path", [])) or "<root>"
        raise ConfigValidationError(path, getattr(exc, "message", str(exc))) from exc
    cfg = ScenarioConfig.from_dict(data)
    validate_semantics(cfg)
    return cfg


def resolve_config_path(name: str | Path) -> Path:
    """A path to an existing file, or the name of a bundled scenario."""
    path = Path(name)
    if path.is_file():
        return path
    bundled = Path(scenario_file(str(name)))
    if bundled.is_file():
        return bundled
    known = ", ".join(sorted(p.stem for p in Path(SCENARIO_PATH).glob("*.yml")))
    raise ConfigValidationError("--config", f"no such file {name!s} (bundled scenarios: {known})")


def load_config(name: str | Path, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    path = resolve_config_path(name)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigValidationError("<root>", f"invalid YAML in {path}: {exc}") from exc
    cfg = parse_config(data, overrides)
    LOGGER.info(f"loaded scenario {cfg.name} from {path} (hash {cfg.config_hash[:12]})")
    return cfg


# pylint: disable=too-many-instance-attributes  # Runtime bundle mirrors the scenario sections
@dataclass(frozen=True)
class Scenario:
    """Runtime objects built from a validated ScenarioConfig."""

    config: ScenarioConfig
    weight: WeightFunction
    coefficients: CoefficientSet
    noise: LevyModel
    initial: InitialCondition
    solver: SolverConfig

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def paths(self) -> int:
        return self.config.paths

    @property
    def workers(self) -> int:
        return self.config.workers

    @property
    def config_hash(self) -> str:
        return self.config.config_hash


def _vector(values, size: int) -> list[float]:
    values = [float(v) for v in (values if isinstance(values, list) else [values])]
    return values * size if len(values) == 1 else values


def build_weight(cfg: WeightConfig) -> WeightFunction:
    params = cfg.params
    if WeightFamily(cfg.family) is WeightFamily.EXPONENTIAL:
        return exponential_weight(float(params["rho"]))
    return polynomial_exponential_weight(float(params["q"]), float(params["rho"]))


def build_coefficients(cfg: KernelConfig, d: int, m: int) -> CoefficientSet:
    coefficients = _family_coefficients(cfg, d, m)
    return coefficients if cfg.envelopes else replace(coefficients, envelopes=None)


def _family_coefficients(cfg: KernelConfig, d: int, m: int) -> CoefficientSet:
    params = cfg.params
    family = KernelFamily(cfg.family)
    if family is KernelFamily.ORNSTEIN_UHLENBECK:
        return ornstein_uhlenbeck(float(params["lam"]), _vector(params["theta"], d), params["sigma"], d, m)
    if family is KernelFamily.EXPONENTIAL:
        return exponential_kernel(
            float(params["drift_scale"]),
            float(params["diffusion_scale"]),
            float(params["decay"]),
            d,
            m,
            params.get("loading"),
        )
    if family is KernelFamily.GAMMA:
        return gamma_kernel(
            float(params["drift_scale"]),
            float(params["diffusion_scale"]),
            float(params["power"]),
            d,
            m,
            params.get("loading"),
        )
    return zero_coefficients(d, m)


def build_noise(cfg: NoiseConfig, m: int) -> LevyModel:
    jump_law = None
    rate = 0.0
    if cfg.jumps is not None:
        rate = cfg.jumps.rate
        params = cfg.jumps.params
        if JumpLawKind(cfg.jumps.law) is JumpLawKind.TWO_POINT:
            jump_law = SymmetricTwoPointJumps(float(params["height"]), m)
        else:
            jump_law = GaussianJumps(tuple(_vector(params["location"], m)), float(params["scale"]))
    model = LevyModel(m=m, gaussian_spectrum=tuple(cfg.gaussian_spectrum), jump_rate=rate, jump_law=jump_law)
    return model.normalized() if cfg.normalize else model


def build_initial(cfg: InitialConfig, d: int) -> InitialCondition:
    value = _vector(cfg.value, d)
    if InitialKind(cfg.kind) is InitialKind.SAMPLED:
        return InitialCondition.sampled(value, cfg.scale)
    return InitialCondition.constant(value)


def resolve_x_max(cfg: ScenarioConfig, coeffs: CoefficientSet) -> float:
    """Explicit grid.x_max, or the horizon plus the lag at which the kernels reach their limits."""
    dt = cfg.grid.dt
    if cfg.grid.x_max is not None:
        return cfg.grid.x_max
    margin = support_margin(coeffs)
    if margin is None:
        raise ConfigValidationError("grid.x_max", f"required: envelopes of kernel {coeffs.name} do not settle")
    return cfg.horizon + dt + math.ceil(margin / dt) * dt


def _built(section: str, factory):
    try:
        return factory()
    except SvieLiftError as exc:
        raise ConfigValidationError(section, exc.msg) from exc


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    d, m = cfg.dimensions.d, cfg.dimensions.m
    coefficients = _built("kernel", lambda: build_coefficients(cfg.kernel, d, m))
    weight = _built("weight", lambda: build_weight(cfg.weight))
    noise = _built("noise", lambda: build_noise(cfg.noise, m))
    solver = SolverConfig(
        T=cfg.horizon,
        dt=cfg.grid.dt,
        x_max=resolve_x_max(cfg, coefficients),
        divergence_cap=cfg.solver.divergence_cap,
        check_every=cfg.solver.check_every,
        record_every=cfg.output.record_every,
        record_norms=cfg.output.norms,
        snapshot_times=tuple(cfg.output.snapshots),
        batch_size=cfg.solver.batch_size,
    )
    return Scenario(
        config=cfg,
        weight=weight,
        coefficients=coefficients,
        noise=noise,
        initial=build_initial(cfg.initial, d),
        solver=solver,
    )

