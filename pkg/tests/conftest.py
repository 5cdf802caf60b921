import math

import pytest

from tailforge import ConstantB, GaussianLogSigned, TwoPointSigned, WeightModel, compute_profile

# closed-form Cramer roots of the two reference models
LATTICE_GAMMA = math.log2((0.5 - math.sqrt(0.06)) / 0.1)
LATTICE_ALPHA = math.log2((0.5 + math.sqrt(0.06)) / 0.1)
GAUSS_GAMMA = 2.0 - math.sqrt(4.0 - 2.0 * math.log(2.0))
GAUSS_ALPHA = 2.0 + math.sqrt(4.0 - 2.0 * math.log(2.0))


def lattice_model(**kw):
    return WeightModel(TwoPointSigned(2.0, 0.5, 0.05, **kw), ConstantB(1.0), 2)


def gauss_model(**kw):
    return WeightModel(GaussianLogSigned(-2.0, 1.0, **kw), ConstantB(1.0), 2)


@pytest.fixture(scope="session")
def lat():
    return lattice_model()


@pytest.fixture(scope="session")
def gau():
    return gauss_model()


@pytest.fixture(scope="session")
def lat_profile(lat):
    return compute_profile(lat)


@pytest.fixture(scope="session")
def gau_profile(gau):
    return compute_profile(gau)


@pytest.fixture(scope="session")
def lat_pool(lat):
    from tailforge.fixedpoint import simulate

    pool, _ = simulate(lat, 200_000, 2024)
    return pool


# one summary line per acceptance criterion, filled in by test_acceptance.py
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
