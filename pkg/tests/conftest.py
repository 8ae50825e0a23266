import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crseg import RandomSource, SynthDatasetSpec, gen_synthetic_dataset, train
from crseg.toymodel import default_model

settings.register_profile("crseg", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("crseg")


@pytest.fixture(scope="session")
def tiny_data():
    return gen_synthetic_dataset(SynthDatasetSpec(count=12, height=16, width=16, seed=3))


@pytest.fixture(scope="session")
def tiny_model(tiny_data):
    """A quickly trained 16x16 model; accurate enough to be attacked meaningfully."""
    model = default_model(1, height=16, width=16, hidden=8, k=1)
    return train(model, tiny_data, 8, 0.05, RandomSource(1, 7))


@pytest.fixture
def image_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
