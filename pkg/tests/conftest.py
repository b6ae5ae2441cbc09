import numpy as np
import pytest

from microchannel.fock import assemble_hamiltonian, enumerate_basis, scale_coupling_blocks
from microchannel.lattice import PotentialSpec, SpatialGrid, TwoBodyKernel, solve_modes, \
    two_body_elements

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def box5():
    """Five square-well modes with a gaussian pair kernel."""
    modes = solve_modes(SpatialGrid(1.0, 200), PotentialSpec(), 5)
    V = two_body_elements(modes, TwoBodyKernel("gaussian", g=1.0, range=0.1))
    return modes, V


@pytest.fixture(scope="session")
def coupled_system(box5):
    """2 channel + 3 remaining Bose modes, N_max = 2; returns a Hamiltonian factory."""
    modes, V = box5
    basis = enumerate_basis(5, "bose", 2, 2)
    channel = [3, 4]

    def hamiltonian(g_mb, g_int=1.0, g_mm=1.0):
        return assemble_hamiltonian(basis, modes.energies,
                                    scale_coupling_blocks(V, channel, g_mb, g_mm), g_int)

    return basis, channel, modes.energies, hamiltonian


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
