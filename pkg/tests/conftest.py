import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_fit():
    """Small fitted pipeline on a 4-population synthetic cohort, shared across test modules."""
    from lifespan_tree.pipeline import fit_pipeline
    from lifespan_tree.simulate import desk_spec, generate_cohort

    spec = desk_spec(("A", "B", "C"), separation=3.0, n_subjects=80, seed=3)
    train = generate_cohort(spec)
    fitted = fit_pipeline(train, ("A", "B", "C", "CN"), seed=3, samples_per_year=8)
    return spec, train, fitted


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
