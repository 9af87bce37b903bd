from __future__ import annotations

import pytest

from gridmae.cases import builtin_case, parse_case, reduce_case
from gridmae.network import Branch, Bus, BusType, Grid


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion after the run."""
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

# Hand-written 2-bus fixture: slack at 1.0 p.u. feeding a 50 MW load over
# a lossless branch x = 0.1 p.u.
TWO_BUS_TEXT = """\
function mpc = case2_lossless
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1.0\t0\t0\t1\t1.1\t0.9;
\t2\t1\t50\t0\t0\t0\t1\t1.0\t0\t0\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t0\t0\t1.0\t100\t1\t0\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
"""


@pytest.fixture(scope="session")
def two_bus_case():
    return parse_case(TWO_BUS_TEXT)


@pytest.fixture(scope="session")
def two_bus_grid(two_bus_case):
    return reduce_case(two_bus_case)


@pytest.fixture(scope="session")
def case14_raw():
    return builtin_case("case14")


@pytest.fixture(scope="session")
def case14_grid(case14_raw):
    return reduce_case(case14_raw)


@pytest.fixture(scope="session")
def triangle_grid():
    """3-bus ring: slack, generator, load."""
    return Grid(
        name="triangle",
        buses=(
            Bus(type=BusType.SLACK, v_set=1.0),
            Bus(type=BusType.GENERATOR, p_set=0.3, v_set=1.02),
            Bus(type=BusType.LOAD, p_set=-0.5, q_set=-0.1),
        ),
        branches=(
            Branch(0, 1, complex(0.01, 0.05)),
            Branch(1, 2, complex(0.02, 0.06)),
            Branch(0, 2, complex(0.015, 0.05)),
        ),
    )


@pytest.fixture(scope="session")
def ring_spur_grid():
    """3-bus ring plus a single-branch spur to bus 3."""
    return Grid(
        name="ring_spur",
        buses=(
            Bus(type=BusType.SLACK, v_set=1.0),
            Bus(type=BusType.GENERATOR, p_set=0.2, v_set=1.01),
            Bus(type=BusType.LOAD, p_set=-0.3, q_set=-0.05),
            Bus(type=BusType.LOAD, p_set=-0.1, q_set=-0.02),
        ),
        branches=(
            Branch(0, 1, complex(0.01, 0.05)),
            Branch(1, 2, complex(0.02, 0.06)),
            Branch(0, 2, complex(0.015, 0.05)),
            Branch(2, 3, complex(0.03, 0.08)),
        ),
    )
