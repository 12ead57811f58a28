from dataclasses import dataclass

import numpy as np
import pytest

from factorsens.confounder import conditional_moments
from factorsens.estimation import fit_g_check, fit_outcome_model, fit_treatment_model
from factorsens.simulation import default_config, generate_dataset


@dataclass
class Fitted:
    cfg: object
    data: object
    tm: object
    om: object
    cond: object


def fit_all(cfg, m=None):
    data = generate_dataset(cfg)
    m = m or cfg.m
    tm = fit_treatment_model(data, m)
    g = fit_g_check(data)
    om = fit_outcome_model(data, m, g_check=g)
    return Fitted(cfg, data, tm, om, conditional_moments(tm))


@pytest.fixture(scope="session")
def large_fit():
    """Default design at n = 1e5, fitted with the true m."""
    return fit_all(default_config(n=100_000, seed=2024))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_CRITERIA = 9
_acceptance_lines: dict = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _acceptance_lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in range(1, ACCEPTANCE_CRITERIA + 1):
        line = _acceptance_lines.get(number, f"FAIL criterion {number}: not run to completion")
        terminalreporter.write_line(line)
