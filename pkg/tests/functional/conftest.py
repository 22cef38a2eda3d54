"""pytest conftest for functional tests - builds reduced-size scenarios from the bundled files"""

import pytest

from svie_lift.config import (
    build_scenario,
    parse_config,
)


@pytest.fixture
def make_scenario():
    """Factory building a runtime scenario from decoded data with a coarser grid and fewer paths.

    The bundled scenarios are sized for full acceptance runs; functional tests shrink dt and
    the path counts so a run stays in the seconds range.
    """

    def _make(data: dict, dt: float | None = None, paths: int | None = None, **sections):
        if dt is not None:
            data.setdefault("grid", {})["dt"] = dt
        if paths is not None:
            data["paths"] = paths
            data.setdefault("law", {})["paths"] = paths
        for key, value in sections.items():
            data[key] = value
        return build_scenario(parse_config(data))

    return _make
