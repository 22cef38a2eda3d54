"""pytest conftest with shared scenario fixtures"""

import copy

import pytest
import yaml

from svie_lift.include import scenario_file


def bundled_scenario(name: str) -> dict:
    """Decoded contents of a bundled scenario file."""
    with open(scenario_file(name), encoding="utf-8") as handle:
        return yaml.safe_load(handle)


@pytest.fixture
def ou_scenario_data():
    """Mutable copy of the bundled OU scenario."""
    return copy.deepcopy(bundled_scenario("ou"))


@pytest.fixture
def exp_decay_scenario_data():
    """Mutable copy of the bundled exponential-decay scenario."""
    return copy.deepcopy(bundled_scenario("exp_decay"))
