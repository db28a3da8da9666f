import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

from survexplain.core import SurvivalDataset
from survexplain.dataio import SyntheticSpec, generate_synthetic
from survexplain.models import fit_cox

ACCEPTANCE_LINES = []

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def make_data(time, event, **features):
    if not features:
        features = {"x": np.zeros(len(time))}
    return SurvivalDataset(pd.DataFrame(features), np.asarray(time, float), np.asarray(event, int))


@pytest.fixture(scope="session")
def cox_data():
    spec = SyntheticSpec(n=400, p=5, coefficients=(1.0, -0.5, 0.25, 0.0, 0.5), n_categorical=1, seed=11)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def cox_model(cox_data):
    return fit_cox(cox_data)


@pytest.fixture(scope="session")
def numeric_data():
    spec = SyntheticSpec(n=300, p=3, coefficients=(0.8, -0.6, 0.0), seed=5)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def numeric_cox(numeric_data):
    return fit_cox(numeric_data)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
