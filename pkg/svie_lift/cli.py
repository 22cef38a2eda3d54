"""
Command line entry point ``svie-lift``: simulate, certify, estimate-law, oracle-compare and selftest.

Every workflow reads one scenario file, writes its tables and reports into the output
directory and records them in that directory's ``manifest.json``.
"""

import argparse
import hashlib
import json
import math
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
from dbt.adapters.events.logging import AdapterLogger
from dbt_common.clients.agate_helper import table_from_data_flat
from dbt_common.exceptions import DbtRuntimeError

from svie_lift.__version__ import version
from svie_lift.coefficients import (
    LipschitzReport,
    certify,
    without_diffusion,
)
from svie_lift.config import (
    Scenario,
    ScenarioConfig,
    build_scenario,
    load_config,
)
from svie_lift.exceptions import (
    CertificationError,
    ConfigValidationError,
    DivergenceError,
    ReplayMismatchError,
)
from svie_lift.invariance import (
    LawEstimate,
    initial_value_comparison,
    two_horizon_comparison,
)
from svie_lift.levy_noise import NoiseStream
from svie_lift.spde_solver import (
    InitialCondition,
    SolverConfig,
    picard_oracle,
    run_ensemble,
    simulate_increments,
    simulate_path,
    svie_direct,
)

LOGGER = AdapterLogger("svie_lift")

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_VALIDATION_ERROR = 2
EXIT_DIVERGENCE = 3

MANIFEST_NAME = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


class RunManifest:
    """``manifest.json`` of an output directory, keyed by the config hash of the runs it holds.

    An existing manifest with another config hash is a replay mismatch unless ``force``
    is set, in which case it is replaced.
    """

    def __init__(self, cfg: ScenarioConfig, force: bool = False) -> None:
        self.out_dir = Path(cfg.output.dir)
        self.path = self.out_dir / MANIFEST_NAME
        self.name = cfg.name
        self.config_hash = cfg.config_hash
        self.data: dict[str, Any] = {
            "config_hash": self.config_hash,
            "name": cfg.name,
            "seed": cfg.seed,
            "version": version,
            "runs": {},
        }
        if self.path.is_file():
            existing = json.loads(self.path.read_text(encoding="utf-8"))
            previous = str(existing.get("config_hash", "?"))
            if previous == self.config_hash:
                self.data["runs"] = existing.get("runs", {})
            elif force:
                LOGGER.warning(f"replacing manifest of config {previous[:12]} in {self.out_dir}")
            else:
                raise ReplayMismatchError(
                    f"{self.path} belongs to config {previous[:12]}, "
                    f"this run is {self.config_hash[:12]}; use --force or another --out"
                )
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def file_for(self, kind: str, suffix: str = "csv") -> Path:
        return self.out_dir / f"{self.name}-{self.config_hash[:12]}-{kind}.{suffix}"

    def record(self, kind: str, files: list[Path], **details: Any) -> None:
        self.data["runs"][kind] = {"files": {path.name: _sha256(path) for path in files}, **details}

    def write(self) -> Path:
        self.path.write_text(_dump_json(self.data), encoding="utf-8")
        LOGGER.info(f"wrote manifest {self.path}")
        return self.path


def write_table(rows: list[dict[str, Any]], column_names: list[str], path: Path) -> Path:
    """Write rows as CSV through an agate table; numbers go in as plain Python floats and ints."""
    table = table_from_data_flat(rows, column_names)
    table.to_csv(str(path))
    LOGGER.info(f"wrote {len(rows)} rows to {path}")
    return path


def write_report(data: dict[str, Any], path: Path) -> Path:
    path.write_text(_dump_json(data), encoding="utf-8")
    LOGGER.info(f"wrote report {path}")
    return path


def _coordinates(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{k + 1}" for k in range(d)]


def _point_columns(prefix: str, values: np.ndarray) -> dict[str, float]:
    return {f"{prefix}_{k + 1}": float(value) for k, value in enumerate(values)}


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def run_simulate(cfg: ScenarioConfig, force: bool = False) -> list[Path]:
    """Ensemble summary (and optional trajectories, snapshots, norms) as CSV plus manifest entry."""
    manifest = RunManifest(cfg, force)
    scenario = build_scenario(cfg)
    d = scenario.coefficients.d
    solver = replace(scenario.solver, record_norms=False, snapshot_times=())
    ensemble = run_ensemble(
        solver,
        scenario.coefficients,
        scenario.noise,
        scenario.weight,
        scenario.initial,
        scenario.seed,
        scenario.paths,
        workers=scenario.workers,
        keep_trajectories=cfg.output.trajectories,
    )
    times = ensemble.times[ensemble.record_indices]
    variance = ensemble.moments.variance
    summary_rows = [
        {
            "t": float(t),
            "count": ensemble.moments.count,
            **_point_columns("mean", ensemble.moments.mean[index]),
            **_point_columns("var", variance[index]),
        }
        for index, t in enumerate(times)
    ]
    files = [
        write_table(
            summary_rows,
            ["t", "count"] + _coordinates("mean", d) + _coordinates("var", d),
            manifest.file_for("summary"),
        )
    ]
    if cfg.output.trajectories:
        trajectory_rows = [
            {"path": path, "t": float(t), **_point_columns("x", ensemble.trajectories[path][index])}
            for path in sorted(ensemble.trajectories)
            for index, t in enumerate(times)
        ]
        files.append(
            write_table(trajectory_rows, ["path", "t"] + _coordinates("x", d), manifest.file_for("trajectories"))
        )
    if cfg.output.snapshots or cfg.output.norms:
        files.extend(_write_probe_path(scenario, manifest))

    manifest.record(
        "simulate",
        files,
        seed=scenario.seed,
        paths=scenario.paths,
        diverged=[list(entry) for entry in ensemble.diverged],
        diagnostics={
            "sup_second_moment": _finite_or_none(ensemble.sup_second_moment),
            "truncation_mass": ensemble.truncation_mass,
            "x_max": scenario.solver.J * scenario.solver.dt,
        },
    )
    manifest.write()
    sys.stdout.write(
        f"simulated {ensemble.terminal.shape[0]} of {scenario.paths} paths of {scenario.name} "
        f"(diverged {len(ensemble.diverged)}), E[sup |X|^2] = {ensemble.sup_second_moment:.6g}\n"
    )
    return files


def _write_probe_path(scenario: Scenario, manifest: RunManifest) -> list[Path]:
    """Curve snapshots and H_w norms of path 0."""
    output = simulate_path(
        scenario.solver,
        scenario.coefficients,
        scenario.noise,
        NoiseStream(scenario.seed, 0),
        scenario.weight,
        scenario.initial,
    )
    d = scenario.coefficients.d
    files = []
    if output.snapshots:
        rows = [
            {"t": float(t), "x": float(x), **_point_columns("u", curve.values[j])}
            for t, curve in sorted(output.snapshots.items())
            for j, x in enumerate(curve.nodes)
        ]
        files.append(write_table(rows, ["t", "x"] + _coordinates("u", d), manifest.file_for("snapshots")))
    if output.norms is not None:
        rows = [{"t": float(t), "norm_w": float(value)} for t, value in zip(output.times, output.norms)]
        files.append(write_table(rows, ["t", "norm_w"], manifest.file_for("norms")))
    return files


def _certify_scenario(scenario: Scenario) -> LipschitzReport:
    settings = scenario.config.certify
    return certify(
        scenario.coefficients,
        scenario.weight,
        beta=settings.beta,
        dx=settings.envelope_dx,
        x_max=settings.envelope_x_max,
    )


def run_certify(cfg: ScenarioConfig, force: bool = False) -> list[Path]:
    """Lipschitz constants and limiting-law verdicts, printed and written as JSON."""
    manifest = RunManifest(cfg, force)
    scenario = build_scenario(cfg)
    report = _certify_scenario(scenario)
    for verdict in report.criteria:
        sys.stdout.write(f"{verdict.name}: {verdict.summary}\n")
    sys.stdout.write(f"conclusion: {report.conclusion}\n")
    path = write_report(
        {"scenario": scenario.name, "config_hash": scenario.config_hash, "certificate": report.to_dict()},
        manifest.file_for("certify", "json"),
    )
    manifest.record("certify", [path], conclusion=report.conclusion)
    manifest.write()
    return [path]


def _law_rows(label: str, estimate: LawEstimate) -> list[dict[str, Any]]:
    return [
        {"sample": label, "T": float(estimate.T), "path": int(path), **_point_columns("x", value)}
        for path, value in zip(estimate.paths, estimate.sample)
    ]


def run_estimate_law(cfg: ScenarioConfig, force: bool = False) -> list[Path]:
    """Two-horizon test, optional initial-value probe and the analytic verdicts in one JSON report."""
    manifest = RunManifest(cfg, force)
    scenario = build_scenario(cfg)
    law = cfg.law
    t1 = law.t1 if law.t1 is not None else cfg.horizon
    t2 = law.t2 if law.t2 is not None else 2.0 * t1
    first, second, horizons = two_horizon_comparison(scenario, t1, t2, law.paths, law.level, law.resamples)
    rows = _law_rows("t1", first) + _law_rows("t2", second)
    report: dict[str, Any] = {
        "scenario": scenario.name,
        "config_hash": scenario.config_hash,
        "seed": scenario.seed,
        "parameters": {"t1": t1, "t2": t2, "paths": law.paths, "level": law.level, "resamples": law.resamples},
        "laws": {"t1": first.to_dict(), "t2": second.to_dict()},
        "verdicts": {"two_horizon": horizons.to_dict()},
    }
    sys.stdout.write(f"two-horizon {horizons.label}: p = {horizons.p_value:.4f}: {_status(horizons.passed)}\n")
    if law.x0_a is not None and law.x0_b is not None:
        start_a, start_b, probe = initial_value_comparison(
            scenario, law.x0_a, law.x0_b, t2, law.paths, law.level, law.resamples
        )
        rows += _law_rows("x0_a", start_a) + _law_rows("x0_b", start_b)
        report["laws"].update({"x0_a": start_a.to_dict(), "x0_b": start_b.to_dict()})
        report["verdicts"]["initial_value"] = probe.to_dict()
        sys.stdout.write(f"initial value {probe.label}: p = {probe.p_value:.4f}: {_status(probe.passed)}\n")
    try:
        report["certificate"] = _certify_scenario(scenario).to_dict()
    except CertificationError as exc:
        report["certificate"] = {"error": exc.msg}
    d = scenario.coefficients.d
    files = [
        write_table(rows, ["sample", "T", "path"] + _coordinates("x", d), manifest.file_for("law")),
        write_report(report, manifest.file_for("law", "json")),
    ]
    manifest.record(
        "estimate-law",
        files,
        seed=scenario.seed,
        paths=law.paths,
        diverged={"t1": first.diverged, "t2": second.diverged},
    )
    manifest.write()
    return files


def _status(passed: bool) -> str:
    return "PASS" if passed else "FAIL"


def _oracle_solver(base: SolverConfig, T: float, dt: float, field: str) -> SolverConfig:
    """Solver on step ``dt`` keeping the kernel margin of the scenario grid."""
    margin = max(base.J * base.dt - base.T, dt)
    try:
        return replace(base, T=T, dt=dt, x_max=T + margin, record_every=1, record_norms=False, snapshot_times=())
    except ConfigValidationError as exc:
        raise ConfigValidationError(field, exc.problem) from exc


def fitted_order(dts: list[float], errors: list[float]) -> float | None:
    """Least-squares slope of log2(error) against log2(dt); None unless every error is positive."""
    if len(dts) < 2 or any(not error > 0.0 for error in errors):
        return None
    slope, _ = np.polyfit(np.log2(dts), np.log2(errors), 1)
    return float(slope)


def run_oracle_compare(cfg: ScenarioConfig, force: bool = False) -> list[Path]:
    """Lifted scheme against the direct Volterra sum, and against the Picard oracle for sigma = 0."""
    manifest = RunManifest(cfg, force)
    scenario = build_scenario(cfg)
    oracle = cfg.oracle
    solver = _oracle_solver(scenario.solver, oracle.horizon, scenario.solver.dt, "oracle.horizon")
    boundary_rows = []
    for path in range(oracle.paths):
        stream = NoiseStream(scenario.seed, path)
        lifted = simulate_path(
            solver, scenario.coefficients, scenario.noise, stream, scenario.weight, scenario.initial
        )
        direct = svie_direct(solver, scenario.coefficients, scenario.noise, stream, scenario.initial)
        boundary_rows.append({"path": path, "max_deviation": float(np.max(np.abs(lifted.X - direct.X)))})
    max_deviation = max(row["max_deviation"] for row in boundary_rows)
    sys.stdout.write(f"lifted vs direct over {oracle.paths} paths: max deviation {max_deviation:.3e}\n")

    drift_only = without_diffusion(scenario.coefficients)
    x0 = np.asarray(scenario.initial.value, dtype=float)
    reference = picard_oracle(drift_only, x0, oracle.horizon, oracle.picard_dt)
    start = InitialCondition.constant(x0)
    convergence_rows = []
    for index, dt in enumerate(oracle.dts):
        stride = dt / oracle.picard_dt
        if abs(stride - round(stride)) > 1e-9 * stride:
            raise ConfigValidationError("oracle.picard_dt", f"must divide oracle.dts.{index} = {dt}")
        grid = _oracle_solver(scenario.solver, oracle.horizon, dt, f"oracle.dts.{index}")
        zero_noise = np.zeros((1, grid.n_steps, drift_only.m))
        (output,) = simulate_increments(grid, drift_only, scenario.weight, start, zero_noise, scenario.seed)
        if output.diverged:
            raise DivergenceError(f"drift-only scheme diverged at dt={dt}", path=0, step=output.diverged_step)
        exact = reference.X[:: int(round(stride))]
        error = float(np.max(np.linalg.norm(output.X - exact, axis=1)))
        convergence_rows.append({"dt": float(dt), "steps": grid.n_steps, "sup_error": error})
    order = fitted_order([row["dt"] for row in convergence_rows], [row["sup_error"] for row in convergence_rows])
    for row in convergence_rows:
        sys.stdout.write(f"dt = {row['dt']:g}: sup error {row['sup_error']:.3e}\n")
    sys.stdout.write(f"fitted order: {'n/a' if order is None else f'{order:.3f}'}\n")

    files = [
        write_table(boundary_rows, ["path", "max_deviation"], manifest.file_for("oracle-boundary")),
        write_table(convergence_rows, ["dt", "steps", "sup_error"], manifest.file_for("oracle-convergence")),
    ]
    manifest.record(
        "oracle-compare",
        files,
        seed=scenario.seed,
        max_deviation=max_deviation,
        fitted_order=order,
        picard_dt=oracle.picard_dt,
    )
    manifest.write()
    return files


def run_selftest() -> bool:
    # pylint: disable=import-outside-toplevel  # the battery imports every module; keep CLI start-up light
    from svie_lift.selftest import run_checks

    results = run_checks()
    for result in results:
        sys.stdout.write(f"{_status(result.passed)} {result.name}: {result.detail}\n")
    passed = sum(result.passed for result in results)
    sys.stdout.write(f"{passed}/{len(results)} checks passed\n")
    return passed == len(results)


WORKFLOWS = {
    "simulate": run_simulate,
    "certify": run_certify,
    "estimate-law": run_estimate_law,
    "oracle-compare": run_oracle_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svie-lift",
        description="Simulate and analyse stochastic Volterra equations through their lift to curve space.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario YAML file or bundled scenario name")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--paths", type=int, help="override the number of paths")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--workers", type=int, help="number of worker threads")
    common.add_argument("--force", action="store_true", help="replace a manifest of another configuration")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="simulate an ensemble and write CSV summaries")
    commands.add_parser("certify", parents=[common], help="evaluate the limiting-law criteria")
    commands.add_parser("estimate-law", parents=[common], help="estimate and test the limiting law")
    commands.add_parser("oracle-compare", parents=[common], help="compare against the direct and Picard oracles")
    commands.add_parser("selftest", help="run the built-in acceptance battery")
    return parser


@contextmanager
def exception_handler(command: str) -> Iterator[None]:
    """Pass svie-lift and dbt errors through, wrap anything else in DbtRuntimeError."""
    try:
        yield
    except DbtRuntimeError:
        raise
    except Exception as exc:  # pylint: disable=broad-exception-caught  # CLI boundary
        LOGGER.debug(f"unexpected error in {command}: {exc!r}")
        raise DbtRuntimeError(str(exc)) from exc


def exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigValidationError, ReplayMismatchError, CertificationError)):
        return EXIT_VALIDATION_ERROR
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_RUNTIME_ERROR


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with exception_handler(args.command):
            if args.command == "selftest":
                return EXIT_OK if run_selftest() else EXIT_RUNTIME_ERROR
            overrides = {"seed": args.seed, "paths": args.paths, "out": args.out, "workers": args.workers}
            cfg = load_config(args.config, overrides)
            WORKFLOWS[args.command](cfg, force=args.force)
    except DbtRuntimeError as exc:
        sys.stderr.write(f"svie-lift {args.command}: {exc}\n")
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
