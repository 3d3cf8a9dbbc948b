import numpy as np
import pytest

from seisdiag import simulator
from seisdiag.signals import EtaSet
from seisdiag.simulator import BuildingSpec, GroundMotionSpec, HazardScenario

SHORT_GM = GroundMotionSpec(duration=8.0, dt=0.01, ramp=1.0, strong=4.0)


@pytest.fixture(scope="session")
def separable_dataset():
    """Two-story events at gentle and violent scales: elastic vs clearly yielded.

    Gentle scales keep every story elastic; violent ones push both stories
    far past yield, so intensity ratios separate the two groups grossly.
    """
    hazard = HazardScenario.exponential([0.1, 0.15, 0.2, 3.0, 3.5, 4.0], 8)
    data = simulator.build_dataset(BuildingSpec.uniform(2), SHORT_GM, hazard, seed=17,
                                   etas=EtaSet((0.5, 1.0, 2.0)))
    return data


@pytest.fixture(scope="session")
def pattern_dataset():
    """Three-story events over a spread of scales, giving several damage patterns."""
    building = BuildingSpec((2e5,) * 3, (1.8e8, 1.6e8, 1.3e8), (0.004,) * 3, (3.2,) * 3)
    hazard = HazardScenario.exponential(list(np.linspace(0.2, 2.6, 8)), 8)
    return simulator.build_dataset(building, SHORT_GM, hazard, seed=5, etas=EtaSet((0.5, 1.5, 2.5)))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(test_acceptance.VERDICTS[n])
