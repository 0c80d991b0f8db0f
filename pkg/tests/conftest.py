"""Shared fixtures: certified ground state, desk-grid fixed point, random
localized fields.  The certification run costs ~30 s and is session-scoped;
everything cheap hangs off small grids."""

import numpy as np
import pytest

from nlslab.ground_state import certified_ground_state, petviashvili
from nlslab.spectral import Field, Grid, make_grid


@pytest.fixture(scope="session")
def certification():
    """Certified ground state on the internal fine grid (one ~30 s solve)."""
    return certified_ground_state()


@pytest.fixture(scope="session")
def cert_q(certification):
    return certification.report.q_field


@pytest.fixture(scope="session")
def cert_report(certification):
    return certification.report


@pytest.fixture(scope="session")
def radial_profile(certification):
    return certification.profile


@pytest.fixture(scope="session")
def desk_grid():
    return make_grid(64, 32.0)


@pytest.fixture(scope="session")
def desk_q(certification, desk_grid):
    """Discrete fixed point on the coarse working grid, profile-seeded."""
    return petviashvili(desk_grid, seed=certification.profile)


def random_bumps(
    grid: Grid,
    rng: np.random.Generator,
    n_bumps: int = 3,
    center_max: float = 2.5,
    width_min: float = 1.2,
    width_max: float = 1.8,
    velocity_max: float = 1.0,
) -> Field:
    """Smooth localized random field: a few complex Gaussian bumps.

    Widths and centers keep the field deep inside the box so periodic
    wrap-around is below rounding; the phase factors give it nonzero
    momentum.  Velocities snap to the torus wavenumber lattice 2*pi/L so
    each phase ramp is exactly periodic: an off-lattice ramp has a seam
    at the boundary whose spectral tail, although damped by the envelope,
    is far above rounding and would pollute conservation checks.  This is
    the stock data class for identity-checking tests.
    """
    X, Y, Z = grid.coordinates()
    dk = 2.0 * np.pi / grid.box_length
    v = np.zeros((grid.n,) * 3, dtype=complex)
    for _ in range(n_bumps):
        amp = rng.uniform(0.3, 1.0) * np.exp(2j * np.pi * rng.uniform())
        c = rng.uniform(-center_max, center_max, size=3)
        s = rng.uniform(width_min, width_max)
        xi = dk * np.round(rng.uniform(-velocity_max, velocity_max, size=3) / dk)
        r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
        v = v + amp * np.exp(-r2 / (2 * s * s)) * np.exp(
            1j * (xi[0] * X + xi[1] * Y + xi[2] * Z)
        )
    return Field(grid, v)


@pytest.fixture
def bump_factory():
    return random_bumps
