import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roundabout_cav import VehicleParams  # noqa: E402


@pytest.fixture
def lab_params():
    return VehicleParams(u_min=-0.45, u_max=0.45, v_min=0.05, v_max=0.15,
                         gamma=0.1, phi=1.0, length=0.2, t_h=1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
