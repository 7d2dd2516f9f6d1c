import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# printed model-based matrices of the two-subsystem example
PRINTED = {
    "P1": [[1.7779, -0.0290], [-0.0290, 1.9546]],
    "X11_1": [[0.3372, -0.1620], [-0.1620, 0.5128]],
    "X12_1": [[-0.0250, -0.0486], [-0.0486, 0.0923]],
    "X22_1": [[-1.0748, 0.0579], [0.0579, -1.1826]],
    "P2": [[1.1742, -1.4717], [-1.4717, 5.8613]],
    "X11_2": [[0.5509, -0.0283], [-0.0283, 0.6199]],
    "X12_2": [[-0.0147, -0.0256], [-0.0256, 0.1947]],
    "X22_2": [[-0.6036, 0.3231], [0.3231, -0.9405]],
    "composed": [
        [-0.5238, 0.0297, 0.0103, 0.0230],
        [0.0297, -0.5627, 0.0230, 0.1024],
        [0.0103, 0.0230, -0.2664, 0.1611],
        [0.0230, 0.1024, 0.1611, -0.4277],
    ],
}


@pytest.fixture
def printed():
    return {k: np.array(v) for k, v in PRINTED.items()}


@pytest.fixture
def printed_supplies(printed):
    from dissipacert.scp import SupplyRate

    return [
        SupplyRate(printed["X11_1"], printed["X12_1"], printed["X22_1"]),
        SupplyRate(printed["X11_2"], printed["X12_2"], printed["X22_2"]),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
