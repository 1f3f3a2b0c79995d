import os

import pytest

from holomorphic_data import FamilySpec, MapFamily
from kazdan_warner import geometric_schedule
from sphere_geometry import build_grid

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


@pytest.fixture(scope="module")
def grid16():
    return build_grid(16)


@pytest.fixture(scope="module")
def grid32():
    return build_grid(32)


@pytest.fixture(scope="module")
def schedule():
    return geometric_schedule(100.0, 2.0, 8)


@pytest.fixture(scope="module")
def single_bubble(schedule):
    """[z − δ : z + δ], one bubble of energy 1 at z = 0."""
    spec = FamilySpec((("delta",), ("-delta",)), 1, "1/s", 1.0 + 0j, ("1 - delta", "1 + delta"))
    return MapFamily.from_spec(spec, schedule)


@pytest.fixture(scope="module")
def two_scale(schedule):
    """Roots ±δ and ±δ², a bubble on a bubble at z = 0."""
    spec = FamilySpec((("delta", "delta**2"), ("-delta", "-delta**2")), 2, "1/s", 1.0 + 0j,
                      ("(1 - delta)*(1 - delta**2)", "(1 + delta)*(1 + delta**2)"))
    return MapFamily.from_spec(spec, schedule)


@pytest.fixture(scope="module")
def two_peak(schedule):
    """[z² − 1 : δ], two bubbles at ±1 over a constant limit."""
    spec = FamilySpec((("1", "-1"), ("inf", "inf")), 2, "1/s", 2.0 + 0j, ("3", "delta"))
    return MapFamily.from_spec(spec, schedule)


@pytest.fixture
def scenario_path():
    return lambda name: os.path.join(SCENARIO_DIR, f"{name}.toml")
