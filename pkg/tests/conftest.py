import numpy as np
import pytest

from specsim.circuit import parse_netlist

DIVIDER = """
param xi1 uniform
V1 1 0 1
R1 1 2 1k
R2 2 0 1k*(1+0.1*xi1)
"""

# diode with two uncertain resistors (Gaussian and uniform)
DIODE_D2 = """
param xi1 gaussian
param xi2 uniform
V1 1 0 1
R1 1 2 1k*(1+0.03*xi1)
D1 2 3
R2 3 0 1k*(1+0.05*xi2)
"""

CURRENT_SOURCE = """
param xi1 uniform
I1 0 1 1m*(1+0.2*xi1)
R1 1 0 1k
"""

RC_DECAY = """
param xi1 uniform
C1 1 0 1u
R1 1 0 1k*(1+0.1*xi1)
.ic v(1)=1
.tran 5m
"""

RC_DRIVEN = """
param xi1 uniform
V1 1 0 sin(0 1 1k)
R1 1 2 1k*(1+0.1*xi1)
C1 2 0 159n
.pss 1m
"""

OSCILLATOR = """
param xi1 uniform
L1 1 0 1u*(1+0.1*xi1)
C1 1 0 1n
N1 1 0 3.16m 4.2m
.pss auto 198.7n 1 0
"""


@pytest.fixture
def divider():
    return parse_netlist(DIVIDER)


@pytest.fixture
def diode_d2():
    return parse_netlist(DIODE_D2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
