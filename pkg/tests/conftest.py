import math

import numpy as np
import pytest

from stochns.forcing import ForcedMode, NoiseSpec
from stochns.spectral_field import GridSpec, random_divfree_field

ACCEPTANCE_KEY = pytest.StashKey[list]()

UNIT_SHELL = [(s * np.eye(3, dtype=int)[a]).tolist() for a in range(3) for s in (1, -1)]


def unit_shell_noise(grid, G2=2.0):
    """The six |k| = 1 wavevectors, both polarizations, equal amplitudes giving G^2."""
    g = math.sqrt(G2 * grid.volume / 12.0)
    return NoiseSpec(tuple(ForcedMode(tuple(k), p, g) for k in UNIT_SHELL for p in (0, 1)))


def rand_field(grid, seed=0, spectrum=None):
    spectrum = {1: 1.0, 2: 0.5, 3: 0.25} if spectrum is None else spectrum
    return random_divfree_field(grid, spectrum, np.random.default_rng(seed))


@pytest.fixture
def grid8():
    return GridSpec(8, 2 * math.pi)


@pytest.fixture
def grid16():
    return GridSpec(16, 2 * math.pi)


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


# Short stochastic run: unit-shell noise scaled to G^2 = 2 on an 8^3 grid.
SMALL_CONFIG = "\n".join(
    ["grid.n = 8", "physics.nu = 0.5", "time.dt = 0.01", "time.t_end = 2", "time.burn_in = 0.4"]
    + [f"noise.mode = ({k[0]},{k[1]},{k[2]}) {p} 1" for k in UNIT_SHELL for p in (0, 1)]
    + ["noise.normalize_G2 = 2", "init.shell = 1 0.5", "ensemble.size = 3",
       "ensemble.master_seed = 7", "output.series_stride = 20"]
) + "\n"
