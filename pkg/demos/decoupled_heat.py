"""Decoupled sanity run.

With omega = 0 the two equations ignore each other, and with unit a and a
zero A the z-equation is a plain backward-Euler heat march.  This script
solves the coupled block system anyway and compares every step against a
ten-line dense heat solver, which is the cheapest way to convince yourself
the block assembly is wired correctly.
"""

import math

import numpy as np

from parapair import catalog, fem, fields, stepper


def main():
    cells, tau, steps, nu = 64, 0.02, 100, 1.0
    T = tau * steps
    mesh = fem.build_mesh(("interval", 0, 1), cells)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    spaces = (V, V0)
    x = mesh.nodes[:, 0]

    sextet = catalog.constant_sextet(mesh, a=1.0, A=[[0.0]], T=T)
    print("tau = %g, threshold tau_star = %g"
          % (tau, fields.tau_star(sextet, nu)))

    mk = fields.SpaceTimeField
    h = mk("scalar", np.tile(0.5 * np.cos(math.pi * x), (2, 1)), [0.0, T])
    k = mk("scalar", np.tile(x * (1 - x), (2, 1)), [0.0, T])
    initial = stepper.project_initial(spaces, np.cos(math.pi * x),
                                      np.sin(math.pi * x))
    traj = stepper.run_scheme(spaces, stepper.slice_sextet(sextet, tau),
                              stepper.slice_forcing(h, k, tau), initial,
                              tau, nu, T, tol=1e-13)

    # independent dense heat march on the same grid
    hm = 1.0 / cells
    n = cells + 1
    main_d = np.full(n, 4 * hm / 6)
    main_d[0] = main_d[-1] = 2 * hm / 6
    M = (np.diag(main_d) + np.diag(np.full(n - 1, hm / 6), 1)
         + np.diag(np.full(n - 1, hm / 6), -1))
    kd = np.full(n, 2.0 / hm)
    kd[0] = kd[-1] = 1.0 / hm
    K = (np.diag(kd) + np.diag(np.full(n - 1, -1.0 / hm), 1)
         + np.diag(np.full(n - 1, -1.0 / hm), -1))
    inner = slice(1, n - 1)
    p = np.cos(math.pi * x)
    z = np.sin(math.pi * x)[inner]
    hp = M @ h.values[0]
    kz = (M @ k.values[0])[inner]
    worst = 0.0
    for i in range(1, steps + 1):
        p = np.linalg.solve(M / tau + K, M @ p / tau + hp)
        z = np.linalg.solve((M / tau + nu * K)[inner, inner],
                            M[inner, inner] @ z / tau + kz)
        worst = max(worst, np.abs(traj.p[i] - p).max(),
                    np.abs(traj.z[i] - z).max())
    print("ran %d steps; worst per-step deviation from the heat oracle: %.3e"
          % (steps, worst))
    print("final |p|_H = %.6f, |z|_H = %.6f"
          % (V.h_norm(traj.p[-1]), V0.h_norm(traj.z[-1])))


if __name__ == "__main__":
    main()
