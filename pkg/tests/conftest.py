"""Shared fixtures: small simulation setups reused across test modules.

Full desk-scale physics runs live in test_acceptance.py; everything here is
sized to keep the unit suite fast.
"""

import numpy as np
import pytest

from soundspeed.medium import (
    MediumMap,
    Probe,
    SimGrid,
    centered_probe,
    homogeneous_medium,
)


@pytest.fixture(scope="session")
def small_grid():
    """A reduced grid (~1.4 cm square) for cheap solver tests."""
    return SimGrid(nx=192, nz=192, dx=7.3e-5, dt=1.8e-8, n_steps=900,
                   pml_thickness=20)


@pytest.fixture(scope="session")
def small_probe(small_grid):
    return centered_probe(small_grid, n_elements=24, element_width_points=4,
                          kerf_points=1, center_frequency=2.5e6)


@pytest.fixture(scope="session")
def small_medium(small_grid):
    return homogeneous_medium(small_grid, speed=1540.0, density=900.0)


def envelope(trace):
    """Magnitude of the analytic signal (FFT-based Hilbert transform)."""
    x = np.asarray(trace, dtype=np.float64)
    n = x.size
    spec = np.fft.fft(x)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    return np.abs(np.fft.ifft(spec * h))


def peak_time(trace, fs, start=0):
    """Envelope-peak arrival time with parabolic sub-sample refinement."""
    env = envelope(trace)
    env[:start] = 0.0
    i = int(np.argmax(env))
    if 0 < i < env.size - 1:
        a, b, c = env[i - 1], env[i], env[i + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0.0 else 0.0
    else:
        shift = 0.0
    return (i + shift) / fs
