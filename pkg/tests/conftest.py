import math

import numpy as np
import pytest

from parapair import fem, fields, stepper


def smooth_values(rng, mesh, times, base, amp):
    """Random smooth-in-space, gently-varying-in-time nodal samples."""
    x = mesh.nodes[:, 0]
    if mesh.dim == 2:
        x = mesh.nodes[:, 0] + 0.5 * mesh.nodes[:, 1]
    k = int(rng.integers(1, 4))
    phase = float(rng.uniform(0, 2 * math.pi))
    c = float(rng.uniform(-1, 1))
    return np.array([base + amp * np.sin(math.pi * k * x + phase)
                     * math.cos(c * t) for t in times])


def random_admissible_sextet(rng, mesh, T, n_times=4):
    """Admissible random coefficient data with O(1) norms."""
    times = np.linspace(0, T, n_times + 1)
    d = mesh.dim
    a = fields.SpaceTimeField("scalar",
                              smooth_values(rng, mesh, times, 1.2, 0.2),
                              times)
    b = fields.SpaceTimeField("scalar",
                              smooth_values(rng, mesh, times, 0.0, 0.2),
                              times)
    mu = fields.SpaceTimeField(
        "scalar", np.abs(smooth_values(rng, mesh, times, 0.0, 0.3)), times)
    lam = fields.SpaceTimeField("scalar",
                                smooth_values(rng, mesh, times, 0.0, 0.2),
                                times)
    om = np.stack([smooth_values(rng, mesh, times, 0.0, 0.3)
                   for _ in range(d)], axis=-1)
    omega = fields.SpaceTimeField("vector", om, times)
    diag = np.abs(smooth_values(rng, mesh, times, 0.8, 0.2)) + 0.2
    A = np.zeros(diag.shape + (d, d))
    for i in range(d):
        A[..., i, i] = diag
    Amat = fields.SpaceTimeField("matrix", A, times)
    return fields.CoefficientSextet(mesh, a, b, mu, lam, omega, Amat)


def random_forcing(rng, mesh, T, n_times=4):
    times = np.linspace(0, T, n_times + 1)
    h = fields.SpaceTimeField("scalar",
                              smooth_values(rng, mesh, times, 0.2, 0.3),
                              times)
    k = fields.SpaceTimeField("scalar",
                              smooth_values(rng, mesh, times, -0.1, 0.3),
                              times)
    return h, k


def random_initial(rng, mesh):
    x = mesh.nodes[:, 0]
    p0 = np.sin(math.pi * x * int(rng.integers(1, 3)))
    z0 = x * (1 - x) * float(rng.uniform(0.5, 1.5))
    if mesh.dim == 2:
        y = mesh.nodes[:, 1]
        z0 = z0 * y * (1 - y)
    return p0, z0


@pytest.fixture(scope="session")
def interval_mesh_32():
    return fem.build_mesh(("interval", 0, 1), 32)


@pytest.fixture(scope="session")
def spaces_32(interval_mesh_32):
    V = fem.FeSpace(interval_mesh_32, "neumann")
    V0 = fem.FeSpace(interval_mesh_32, "dirichlet0")
    return V, V0


@pytest.fixture(scope="session")
def embeddings_32(spaces_32):
    return fields.space_embeddings(*spaces_32)


def solve_problem(spaces, sextet, h, k, p0, z0, tau, nu, T, tol=1e-10,
                  tau_star=None, override=False):
    coeff_slices = stepper.slice_sextet(sextet, tau)
    forcing = stepper.slice_forcing(h, k, tau)
    initial = stepper.project_initial(spaces, p0, z0)
    return stepper.run_scheme(spaces, coeff_slices, forcing, initial, tau,
                              nu, T, tol=tol, tau_star=tau_star,
                              override=override)
