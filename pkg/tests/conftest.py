import pytest

from mmv2x import SystemConfig, validate
from mmv2x import montecarlo


@pytest.fixture(scope="session")
def cfg():
    """Default evaluation parameters."""
    return validate(SystemConfig())


@pytest.fixture(scope="session")
def batch20k(cfg):
    """One shared 20k-drop batch at the defaults."""
    return montecarlo.run_drops(cfg, drops=20000, seed=11)
