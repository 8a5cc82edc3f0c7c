"""Shared fixtures; the expensive soliton/spectrum objects are built once per session."""
from __future__ import annotations

import numpy as np
import pytest

from vnls.fields import Grid3, RadialGrid
from vnls.groundstate import ProfileFamily, solve_ground_state
from vnls.linearization import discrete_ground_state, grid_modes, internal_modes
from vnls.modulation import LiftedFamily
from vnls.symmetry import cubic_quintic

OMEGA0 = 1.0
GAMMA = 0.12
CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.stash.get(CRITERIA, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion_log(request):
    """``log(n, ok, detail)`` records one PASS/FAIL line per acceptance criterion."""
    store = request.config.stash[CRITERIA]

    def log(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        store.append((n, line))

    return log


@pytest.fixture(scope="session")
def nl():
    return cubic_quintic(GAMMA)


@pytest.fixture(scope="session")
def radial_grid():
    return RadialGrid(25.0, 1000)


@pytest.fixture(scope="session")
def profile(nl, radial_grid):
    return solve_ground_state(OMEGA0, nl, grid=radial_grid)


@pytest.fixture(scope="session")
def dprofile(nl, profile):
    return discrete_ground_state(profile, OMEGA0, nl)


@pytest.fixture(scope="session")
def spectrum(nl, dprofile):
    return internal_modes(dprofile, OMEGA0, nl)


@pytest.fixture(scope="session")
def grid48():
    return Grid3(48, 8 * np.pi)


@pytest.fixture(scope="session")
def lifted(nl, grid48):
    fam = ProfileFamily(0.95 * OMEGA0, 1.05 * OMEGA0, nl, n_cheb=8)
    return LiftedFamily(fam, grid48)


@pytest.fixture(scope="session")
def p0(lifted):
    return lifted.params(OMEGA0)


@pytest.fixture(scope="session")
def modes(nl, spectrum, lifted, grid48):
    return grid_modes(spectrum, lifted.phi(OMEGA0), OMEGA0, nl, grid48)


@pytest.fixture(scope="session")
def first_block(modes):
    return [m for m in modes if m.block == "first"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def first_sets(first_block):
    from vnls.fgr import resonant_sets
    return resonant_sets([m.e for m in first_block], OMEGA0)


@pytest.fixture(scope="session")
def fgr_sources(lifted, p0, first_block, nl, first_sets):
    from vnls.fgr import leading_source_coefficients
    from vnls.modulation import TangentBasis
    return leading_source_coefficients(lifted.soliton(p0), first_block, nl, first_sets,
                                       basis=TangentBasis(p0, lifted))


@pytest.fixture(scope="session")
def fgr_report(fgr_sources, grid48):
    from vnls.fgr import check_h9
    return check_h9(fgr_sources, OMEGA0, grid48)
