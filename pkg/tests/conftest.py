import numpy as np
import pytest

from tcwunet.model import ModelConfig, init_random

SMALL = ModelConfig(
    input_channels=3,
    num_levels=3,
    encoder_kernel=5,
    decoder_kernel=3,
    channel_ladder=(3, 4, 6, 8),
    bottleneck_channels=10,
    dilations=(1, 2, 4),
)


@pytest.fixture(scope="session")
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def small_model():
    return init_random(SMALL, 3)


@pytest.fixture(scope="session")
def default_model():
    return init_random(ModelConfig(), 42)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


def record_acceptance(number, name, passed, detail=""):
    _ACCEPTANCE.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {name}  {detail}")
