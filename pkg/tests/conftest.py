import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_coupled_hamiltonian(rng, dim_s, dim_e, coupling=1.0, local=1.0):
    """hS (x) 1 + 1 (x) hE + coupling * random S (x) B, each piece normalized."""
    from opendyn.linalg import random_hermitian

    hs = random_hermitian(dim_s, rng)
    he = random_hermitian(dim_e, rng)
    s = random_hermitian(dim_s, rng)
    b = random_hermitian(dim_e, rng)
    hs, he = local * hs / np.linalg.norm(hs, 2), local * he / np.linalg.norm(he, 2)
    s, b = s / np.linalg.norm(s, 2), b / np.linalg.norm(b, 2)
    return hs, he, [(s, coupling * b)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
