import numpy as np
import pytest

from cohslam.channel import RfParams
from cohslam.geometry import PaConfig, rotation_zyx, template_layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def rf():
    return RfParams(3.5e9, 100e6, 5)


def make_pa(rf, position=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, roll=0.0, ny=2, nz=2):
    lam = rf.wavelength
    return PaConfig(np.asarray(position, float), rotation_zyx(yaw, pitch, roll),
                    template_layout(ny, nz, lam / 2, lam / 2))


def random_rotation(rng):
    return rotation_zyx(*rng.uniform(-np.pi, np.pi, 3))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
