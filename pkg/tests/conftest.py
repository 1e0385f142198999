import math

import numpy as np
import pytest

from longevity_mutual.hjb import SolverConfig, solve_finite, solve_infinite
from longevity_mutual.market import DEFAULT_MARKET, ZERO_MARKET
from longevity_mutual.mortality import CbdParams, StylizedParams, cbd_model, stylized_model
from longevity_mutual.preferences import Preferences

COARSE = SolverConfig(nL=201, nT=1500)


@pytest.fixture(scope="session")
def cbd():
    return cbd_model(CbdParams())


@pytest.fixture(scope="session")
def stylized():
    return stylized_model(StylizedParams(4.0, 1.0))


@pytest.fixture(scope="session")
def cbd_pair(cbd):
    """Coarse CBD solves: finite alpha=rho=-3 against infinite alpha=rho=-1."""
    p1, p2 = Preferences.vnm(-3.0), Preferences.vnm(-1.0)
    g2 = solve_infinite(cbd, DEFAULT_MARKET, p2, COARSE)
    alone = solve_infinite(cbd, DEFAULT_MARKET, p1, COARSE)
    g1 = solve_finite(cbd, DEFAULT_MARKET, p1, g2, COARSE, alone=alone)
    return {"p1": p1, "p2": p2, "g1": g1, "g2": g2, "alone": alone, "model": cbd, "mkt": DEFAULT_MARKET}


@pytest.fixture(scope="session")
def stylized_pair(stylized):
    """Long-horizon stylized solves at moderate resolution."""
    cfg = SolverConfig(nL=401, nT=10000, T_final=1000.0)
    p1, p2 = Preferences.vnm(-2.0), Preferences.vnm(-1.0)
    g2 = solve_infinite(stylized, ZERO_MARKET, p2, cfg)
    alone = solve_infinite(stylized, ZERO_MARKET, p1, cfg)
    g1 = solve_finite(stylized, ZERO_MARKET, p1, g2, cfg, alone=alone)
    return {"p1": p1, "p2": p2, "g1": g1, "g2": g2, "alone": alone, "model": stylized, "cfg": cfg}


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


@pytest.fixture
def close():
    return rel_err


def log_lattice(lo=0.01, hi=10.0, n=50):
    return np.exp(np.linspace(math.log(lo), math.log(hi), n))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
