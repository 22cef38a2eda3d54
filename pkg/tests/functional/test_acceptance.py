"""Acceptance battery and end-to-end runs on the bundled scenarios."""

import json

import pytest

from svie_lift import cli
from svie_lift.coefficients import certify
from svie_lift.invariance import initial_dependence_probe
from svie_lift.selftest import CHECKS

pytestmark = pytest.mark.slow


class TestAcceptanceBattery:
    @pytest.mark.parametrize("check", CHECKS, ids=lambda check: check.__name__.removeprefix("check_"))
    def test_check_passes(self, check):
        result = check()
        assert result.passed, result.detail


class TestVanishingTails:
    @pytest.fixture
    def scenario(self, exp_decay_scenario_data, make_scenario):
        return make_scenario(exp_decay_scenario_data, dt=2.0**-3, paths=500)

    def test_temporary_impact_certificate(self, scenario):
        verdict = certify(scenario.coefficients, scenario.weight).criterion("temporary_impact")
        assert verdict.summary == "L_b^2 + 2L_a < alpha_w: 9/16 < 1: PASS"

    def test_law_depends_on_the_initial_value(self, scenario):
        verdict = initial_dependence_probe(scenario, [1.0], [3.0], 5.0, 500)
        assert not verdict.passed
        assert verdict.p_value == pytest.approx(1.0 / 501.0)


class TestOracleCompare:
    def test_gamma_scheme_is_first_order(self, tmp_path):
        code = cli.main(["oracle-compare", "--config", "gamma", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        manifest = json.loads((tmp_path / cli.MANIFEST_NAME).read_text(encoding="utf-8"))
        run = manifest["runs"]["oracle-compare"]
        assert run["max_deviation"] <= 1e-12
        assert run["fitted_order"] >= 0.9
