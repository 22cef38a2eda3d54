"""Unit tests for the svie-lift command line: workflows, manifests and exit codes."""

import hashlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import yaml

from svie_lift import cli
from svie_lift.exceptions import (
    CertificationError,
    ConfigValidationError,
    DivergenceError,
    ReplayMismatchError,
)
from svie_lift.selftest import CheckResult

SMALL_OU = {
    "name": "tiny-ou",
    "seed": 5,
    "horizon": 0.5,
    "paths": 20,
    "weight": {"family": "exponential", "params": {"rho": 2.0}},
    "grid": {"dt": 0.125},
    "kernel": {"family": "ornstein_uhlenbeck", "params": {"lam": 1.0, "theta": 0.3, "sigma": 0.5}},
    "noise": {"gaussian_spectrum": [1.0]},
    "initial": {"kind": "constant", "value": [1.0]},
    "certify": {"beta": 1.0},
    "law": {"t1": 0.5, "t2": 1.0, "paths": 100, "resamples": 99, "x0_a": [-5.0], "x0_b": [5.0]},
    "oracle": {"paths": 2, "horizon": 0.5, "dts": [0.125, 0.0625], "picard_dt": 0.0078125},
    "output": {"trajectories": True, "snapshots": [0.0, 0.5], "norms": True},
    "solver": {"batch_size": 4},
}

EXAMPLE_KERNEL = {"family": "exponential", "params": {"drift_scale": 0.25, "diffusion_scale": 0.25, "decay": 1.0}}


class CliTestCase(unittest.TestCase):
    """Temporary working directory with helpers to write scenarios and run the CLI."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()  # pylint: disable=consider-using-with
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def scenario(self, data: dict, name: str = "scenario") -> str:
        path = self.tmp / f"{name}.yml"
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return str(path)

    def run_cli(self, *argv: str) -> tuple[int, str, str]:
        with mock.patch("sys.stdout", new_callable=io.StringIO) as stdout, mock.patch(
            "sys.stderr", new_callable=io.StringIO
        ) as stderr:
            code = cli.main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def out(self, name: str) -> str:
        return str(self.tmp / name)


class TestSimulate(CliTestCase):
    """Test the simulate workflow."""

    def test_writes_tables_and_manifest(self):
        """Test that simulate writes summary, trajectories, snapshots, norms and a manifest."""
        code, stdout, _ = self.run_cli("simulate", "--config", self.scenario(SMALL_OU), "--out", self.out("run"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("simulated 20 of 20 paths of tiny-ou", stdout)
        out_dir = self.tmp / "run"
        manifest = json.loads((out_dir / cli.MANIFEST_NAME).read_text(encoding="utf-8"))
        files = manifest["runs"]["simulate"]["files"]
        kinds = sorted(name.rsplit("-", 1)[1] for name in files)
        self.assertEqual(kinds, ["norms.csv", "snapshots.csv", "summary.csv", "trajectories.csv"])
        for name, digest in files.items():
            self.assertEqual(hashlib.sha256((out_dir / name).read_bytes()).hexdigest(), digest)
        self.assertEqual(manifest["runs"]["simulate"]["diverged"], [])
        summary = next(out_dir.glob("*-summary.csv")).read_text(encoding="utf-8").splitlines()
        self.assertEqual(summary[0], "t,count,mean_1,var_1")
        self.assertEqual(len(summary), 1 + 5)

    def test_worker_count_gives_identical_files(self):
        """Test byte-identical summaries for 1, 4 and 8 workers."""
        config = self.scenario(SMALL_OU)
        contents = []
        for workers in ("1", "4", "8"):
            out = self.out(f"workers-{workers}")
            code, _, _ = self.run_cli("simulate", "--config", config, "--out", out, "--workers", workers)
            self.assertEqual(code, cli.EXIT_OK)
            contents.append(next(Path(out).glob("*-summary.csv")).read_bytes())
        self.assertEqual(contents[0], contents[1])
        self.assertEqual(contents[0], contents[2])

    def test_replay_mismatch(self):
        """Test that another config in the same directory fails unless forced."""
        config, out = self.scenario(SMALL_OU), self.out("shared")
        self.assertEqual(self.run_cli("simulate", "--config", config, "--out", out)[0], cli.EXIT_OK)
        self.assertEqual(self.run_cli("certify", "--config", config, "--out", out)[0], cli.EXIT_OK)
        code, _, stderr = self.run_cli("simulate", "--config", config, "--out", out, "--seed", "6")
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
        self.assertIn("--force", stderr)
        code, _, _ = self.run_cli("simulate", "--config", config, "--out", out, "--seed", "6", "--force")
        self.assertEqual(code, cli.EXIT_OK)
        manifest = json.loads((Path(out) / cli.MANIFEST_NAME).read_text(encoding="utf-8"))
        self.assertEqual(manifest["seed"], 6)
        self.assertEqual(list(manifest["runs"]), ["simulate"])

    def test_same_config_keeps_earlier_runs(self):
        """Test that runs of the same config accumulate in one manifest."""
        config, out = self.scenario(SMALL_OU), self.out("same")
        self.run_cli("simulate", "--config", config, "--out", out)
        self.run_cli("certify", "--config", config, "--out", out)
        manifest = json.loads((Path(out) / cli.MANIFEST_NAME).read_text(encoding="utf-8"))
        self.assertEqual(sorted(manifest["runs"]), ["certify", "simulate"])

    def test_invalid_config(self):
        """Test that a config error exits with code 2 and names the field."""
        data = dict(SMALL_OU, grid={"dt": -0.125})
        code, _, stderr = self.run_cli("simulate", "--config", self.scenario(data), "--out", self.out("bad"))
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
        self.assertIn("grid.dt", stderr)
        self.assertFalse((self.tmp / "bad").exists())

    def test_missing_config(self):
        """Test that an unknown config name exits with code 2."""
        code, _, _ = self.run_cli("simulate", "--config", str(self.tmp / "absent.yml"))
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)


class TestCertify(CliTestCase):
    """Test the certify workflow."""

    def test_temporary_impact_verdict(self):
        """Test the printed verdicts and the JSON report for the exponential kernel."""
        data = dict(SMALL_OU, kernel=EXAMPLE_KERNEL, weight={"family": "exponential", "params": {"rho": 1.0}})
        data["certify"] = {}
        code, stdout, _ = self.run_cli("certify", "--config", self.scenario(data), "--out", self.out("cert"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("temporary_impact: L_b^2 + 2L_a < alpha_w: 9/16 < 1: PASS", stdout)
        self.assertIn("conclusion: limiting law exists, depends on initial value", stdout)
        report = json.loads(next((self.tmp / "cert").glob("*-certify.json")).read_text(encoding="utf-8"))
        self.assertEqual(report["certificate"]["conclusion"], "limiting law exists, depends on initial value")

    def test_persistent_impact_verdict(self):
        """Test the OU verdict with a verified beta."""
        code, stdout, _ = self.run_cli("certify", "--config", self.scenario(SMALL_OU), "--out", self.out("ou"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("persistent_impact: 2L_a + L_b^2 < 2beta: 0 < 2: PASS", stdout)

    def test_zero_alpha_weight_is_an_error(self):
        """Test that the bundled gamma scenario cannot be certified and exits with code 2."""
        code, _, stderr = self.run_cli("certify", "--config", "gamma", "--out", self.out("gamma"))
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
        self.assertIn("alpha_w", stderr)


class TestEstimateLaw(CliTestCase):
    """Test the estimate-law workflow."""

    def test_writes_law_tables_and_verdicts(self):
        """Test the law CSV and the JSON report with both comparisons and the certificate."""
        code, stdout, _ = self.run_cli("estimate-law", "--config", self.scenario(SMALL_OU), "--out", self.out("law"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("two-horizon X(0.5) vs X(1)", stdout)
        self.assertIn("initial value", stdout)
        out_dir = self.tmp / "law"
        report = json.loads(next(out_dir.glob("*-law.json")).read_text(encoding="utf-8"))
        self.assertEqual(sorted(report["verdicts"]), ["initial_value", "two_horizon"])
        self.assertFalse(report["verdicts"]["initial_value"]["passed"])
        self.assertIn("criteria", report["certificate"])
        rows = next(out_dir.glob("*-law.csv")).read_text(encoding="utf-8").splitlines()
        self.assertEqual(rows[0], "sample,T,path,x_1")
        self.assertEqual(len(rows), 1 + 4 * 100)

    def test_too_few_paths(self):
        """Test that fewer than 100 law paths exit with code 2."""
        code, _, stderr = self.run_cli(
            "estimate-law", "--config", self.scenario(SMALL_OU), "--out", self.out("few"), "--paths", "50"
        )
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
        self.assertIn("law.paths", stderr)


class TestOracleCompare(CliTestCase):
    """Test the oracle-compare workflow."""

    def test_boundary_and_convergence_tables(self):
        """Test the lifted-versus-direct deviations and the Picard convergence table."""
        code, stdout, _ = self.run_cli("oracle-compare", "--config", self.scenario(SMALL_OU), "--out", self.out("o"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("lifted vs direct over 2 paths", stdout)
        self.assertIn("fitted order", stdout)
        manifest = json.loads((self.tmp / "o" / cli.MANIFEST_NAME).read_text(encoding="utf-8"))
        self.assertLessEqual(manifest["runs"]["oracle-compare"]["max_deviation"], 1e-12)
        rows = next((self.tmp / "o").glob("*-oracle-convergence.csv")).read_text(encoding="utf-8").splitlines()
        self.assertEqual(rows[0], "dt,steps,sup_error")
        self.assertEqual(len(rows), 3)

    def test_picard_step_must_divide(self):
        """Test that a Picard step not dividing a scheme step is rejected."""
        data = dict(SMALL_OU, oracle={"paths": 1, "horizon": 0.5, "dts": [0.125], "picard_dt": 0.1})
        code, _, stderr = self.run_cli("oracle-compare", "--config", self.scenario(data), "--out", self.out("p"))
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
        self.assertIn("oracle.picard_dt", stderr)

    def test_fitted_order(self):
        """Test the least-squares order and its undefined cases."""
        self.assertAlmostEqual(cli.fitted_order([0.5, 0.25, 0.125], [0.4, 0.2, 0.1]), 1.0)
        self.assertIsNone(cli.fitted_order([0.5, 0.25], [0.1, 0.0]))
        self.assertIsNone(cli.fitted_order([0.5], [0.1]))


class TestEntryPoint(CliTestCase):
    """Test exit codes, error wrapping and the selftest command."""

    def test_exit_codes(self):
        """Test the mapping from errors to exit codes."""
        self.assertEqual(cli.exit_code(ConfigValidationError("grid.dt", "bad")), cli.EXIT_VALIDATION_ERROR)
        self.assertEqual(cli.exit_code(ReplayMismatchError("other config")), cli.EXIT_VALIDATION_ERROR)
        self.assertEqual(cli.exit_code(CertificationError("no envelopes")), cli.EXIT_VALIDATION_ERROR)
        self.assertEqual(cli.exit_code(DivergenceError("blew up")), cli.EXIT_DIVERGENCE)
        self.assertEqual(cli.exit_code(RuntimeError("other")), cli.EXIT_RUNTIME_ERROR)

    def test_divergence_exit_code(self):
        """Test that a diverging workflow exits with code 3."""
        failing = mock.Mock(side_effect=DivergenceError("too many paths diverged"))
        with mock.patch.dict(cli.WORKFLOWS, {"simulate": failing}):
            code, _, stderr = self.run_cli("simulate", "--config", self.scenario(SMALL_OU), "--out", self.out("d"))
        self.assertEqual(code, cli.EXIT_DIVERGENCE)
        self.assertIn("too many paths diverged", stderr)

    def test_unexpected_errors_are_wrapped(self):
        """Test that foreign exceptions become runtime errors with exit code 1."""
        failing = mock.Mock(side_effect=ValueError("boom"))
        with mock.patch.dict(cli.WORKFLOWS, {"certify": failing}):
            code, _, stderr = self.run_cli("certify", "--config", self.scenario(SMALL_OU), "--out", self.out("e"))
        self.assertEqual(code, cli.EXIT_RUNTIME_ERROR)
        self.assertIn("boom", stderr)

    @mock.patch("svie_lift.selftest.run_checks")
    def test_selftest(self, run_checks):
        """Test the selftest report and its exit code."""
        run_checks.return_value = [CheckResult("adjoint", True, "ok"), CheckResult("contraction", True, "ok")]
        code, stdout, _ = self.run_cli("selftest")
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("PASS adjoint: ok", stdout)
        self.assertIn("2/2 checks passed", stdout)
        run_checks.return_value = [CheckResult("adjoint", False, "error 1e-3")]
        code, stdout, _ = self.run_cli("selftest")
        self.assertEqual(code, cli.EXIT_RUNTIME_ERROR)
        self.assertIn("FAIL adjoint", stdout)
