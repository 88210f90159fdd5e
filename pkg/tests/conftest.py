"""Shared fixtures and the acceptance report printed at the end of the run."""

import numpy as np
import pytest

from rmstpv.survival import SurvivalSample

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def record(label, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_sample(seed, n=120, censor_scale=2.0, ties=False, covariates=0):
    rng = np.random.default_rng(seed)
    arm = rng.integers(0, 2, n)
    t = rng.exponential(1.0 / np.where(arm == 1, 0.7, 1.0))
    c = rng.exponential(censor_scale, n)
    time = np.minimum(t, c)
    if ties:
        time = np.ceil(time * 4) / 4
    cov = rng.normal(size=(n, covariates)) if covariates else None
    return SurvivalSample(time, t <= c, arm, cov)


@pytest.fixture
def sample():
    return random_sample(7)
