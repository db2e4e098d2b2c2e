from __future__ import annotations

import numpy as np
import pytest

from drift_homog.limit import LimitProcess
from drift_homog.resolvent import ResolventLab
from drift_homog.scenarios import cellular2d, example3, irrational, zero_field
from drift_homog.spectral import ModeLattice


@pytest.fixture(scope="session")
def lab3():
    return ResolventLab(example3(), ModeLattice(3, 4))


@pytest.fixture(scope="session")
def lab3_small():
    return ResolventLab(example3(), ModeLattice(3, 2))


@pytest.fixture(scope="session")
def labc():
    return ResolventLab(cellular2d(), ModeLattice(2, 8))


@pytest.fixture(scope="session")
def lab_irr():
    return ResolventLab(irrational(), ModeLattice(2, 4))


@pytest.fixture(scope="session")
def lab_zero():
    return ResolventLab(zero_field(2), ModeLattice(2, 3))


@pytest.fixture(scope="session")
def proc3(lab3):
    return LimitProcess(lab3)


@pytest.fixture(scope="session")
def procc(labc):
    return LimitProcess(labc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
