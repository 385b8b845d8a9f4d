import sys

import numpy as np
import pytest

from excitonsim.bath import SpectralDensity, expand_correlation, set_eta
from excitonsim.experiments import System
from excitonsim.model import ExcitonNetwork, build_hamiltonian, diagonalize, effective_hamiltonian


def make_system(eta, temperature=298.0, shape="thin", n_matsubara=None):
    net = ExcitonNetwork.canonical()
    bath = set_eta(SpectralDensity.named(shape), eta, net, temperature, n_matsubara)
    h = effective_hamiltonian(build_hamiltonian(net), bath.lam, net.noise_site)
    es = diagonalize(h, net.coupling_operator())
    return System(net, bath, h, net.coupling_operator(), es, expand_correlation(bath))


@pytest.fixture(scope="session")
def net():
    return ExcitonNetwork.canonical()


@pytest.fixture(scope="session")
def sys_weak():
    return make_system(1e-4)


@pytest.fixture(scope="session")
def sys_001():
    return make_system(0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
