import numpy as np
import pytest

from tada.hamiltonian import DriveSchedule, HamiltonianSpec


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def fast_drive_spec(L: int, **overrides) -> HamiltonianSpec:
    """Strongly time-dependent benchmark couplings (short decay, fast drive)."""
    params = dict(
        L=L,
        J_z=1.0,
        h_x=1.0,
        h_z=0.5,
        g_schedule=DriveSchedule.damped_cosine(omega=4.0, tau=1.0, offset=1.0),
        f_schedule=DriveSchedule.constant(1.0),
    )
    params.update(overrides)
    return HamiltonianSpec(**params)


def slow_drive_spec(L: int, **overrides) -> HamiltonianSpec:
    """Slowly decaying drive with a strong transverse field."""
    params = dict(
        L=L,
        J_z=1.0,
        h_x=3.0,
        h_z=0.5,
        g_schedule=DriveSchedule.damped_cosine(omega=0.8, tau=30.0, offset=1.0),
        f_schedule=DriveSchedule.constant(1.0),
    )
    params.update(overrides)
    return HamiltonianSpec(**params)


def constant_drive_spec(L: int, g: float = 1.0, f: float = 1.0, **overrides) -> HamiltonianSpec:
    params = dict(
        L=L,
        J_z=1.0,
        h_x=1.0,
        h_z=0.5,
        g_schedule=DriveSchedule.constant(g),
        f_schedule=DriveSchedule.constant(f),
    )
    params.update(overrides)
    return HamiltonianSpec(**params)
