import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qgi.pulses import calibrate_levitation  # noqa: E402


@pytest.fixture(scope="session")
def calibration():
    return calibrate_levitation()


@pytest.fixture(scope="session")
def i_hold(calibration):
    return calibration.I_hold
