import numpy as np
import pytest

from lssclt.mp_core import EntryCase, ModelParams, PopulationSpectrum


@pytest.fixture
def identity_half():
    """T = I, y = 1/2, real Gaussian-like entries."""
    return ModelParams(64, 128, EntryCase.REAL, 0.0), PopulationSpectrum.identity(64)


@pytest.fixture
def two_point():
    t = np.where(np.arange(100) < 50, 0.5, 2.0)
    return ModelParams(100, 400, EntryCase.REAL, 0.0), PopulationSpectrum(t)


def mp_companion(z, y):
    """Closed-form companion transform for T = I: the root of
    z s^2 + (z + 1 - y) s + 1 = 0 with Im s * Im z > 0."""
    z = np.asarray(z, dtype=np.complex128)
    b = z + 1.0 - y
    disc = np.sqrt(b * b - 4.0 * z)
    r1 = (-b + disc) / (2.0 * z)
    r2 = (-b - disc) / (2.0 * z)
    return np.where(r1.imag * z.imag > 0, r1, r2)


def mp_density(x, y):
    a, b = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2
    x = np.asarray(x, dtype=np.float64)
    inside = (x > a) & (x < b)
    out = np.zeros_like(x)
    out[inside] = np.sqrt((b - x[inside]) * (x[inside] - a)) / (2 * np.pi * y * x[inside])
    return out
