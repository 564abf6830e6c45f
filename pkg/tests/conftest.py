import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

from kirchloc import DisorderModel, EdgeProfile, LatticeSpec  # noqa: E402


@pytest.fixture
def unit_chain():
    return LatticeSpec.isotropic(1, EdgeProfile.zero(1.0))


@pytest.fixture
def unit_square():
    return LatticeSpec.isotropic(2, EdgeProfile.zero(1.0))


@pytest.fixture
def uniform_sym():
    return DisorderModel(-1.0, 1.0, master_seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
