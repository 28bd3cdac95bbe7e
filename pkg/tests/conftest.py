import numpy as np
import pytest

from memsim.boundary import build_permittivity, capacitor_family, constant_sigma
from memsim.geometry import DeviceParams
from memsim.transmission import ModelContext, SolverOptions


class Setup:
    """Device + data bundle used across the suite."""

    def __init__(self, V=1.0, beta=1.0, tau=0.0, a=0.0, sigma1=2.0,
                 nx=64, tol=1e-10, sigma_x=None):
        self.params = DeviceParams(H=1.0, L=1.0, d=1.0, sigma2=1.0,
                                   V=V, beta=beta, tau=tau, a=a)
        self.sigma_x = sigma_x if sigma_x is not None else constant_sigma(sigma1)
        self.perm = build_permittivity(self.sigma_x, self.params)
        self.family = capacitor_family(self.params, self.sigma_x)
        self.ctx = ModelContext(self.params, self.family, self.perm,
                                SolverOptions(tol=tol).with_resolution(nx))

    @property
    def nx(self):
        return self.ctx.options.nx


@pytest.fixture(scope="session")
def std():
    """Unit device, sigma1 = 2, V = 1, nx = 64."""
    return Setup()


def random_clamped_profiles(params, n, count, seed, max_depth=0.9):
    """Seeded smooth admissible clamped profiles for property checks."""
    rng = np.random.default_rng(seed)
    xi = np.linspace(-1.0, 1.0, n + 1)
    env = (1.0 - xi**2) ** 2
    out = []
    for _ in range(count):
        coeffs = 0.25 * rng.standard_normal(5)
        wave = sum(c * np.cos(k * np.pi * xi) for k, c in enumerate(coeffs))
        u = params.H * env * wave
        low = u.min()
        if low < -max_depth * params.H:
            u *= max_depth * params.H / abs(low)
        out.append(u)
    return out
