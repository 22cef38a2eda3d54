"""Bundled svie-lift data files (scenario configurations)."""

import os

PACKAGE_PATH = os.path.dirname(__file__)
SCENARIO_PATH = os.path.join(PACKAGE_PATH, "scenarios")


def scenario_file(name: str) -> str:
    """Absolute path of a bundled scenario, e.g. ``scenario_file("ou")``."""
    return os.path.join(SCENARIO_PATH, f"{name}.yml")
