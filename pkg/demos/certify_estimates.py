"""Certify the explicit estimates on a random admissible problem.

The point of carrying every constant explicitly (tau_star, C*, M0, M1, the
discrete embedding constants) is that the stability bound, the continuous
dependence inequality and the two-sided solution-operator bound become
checkable statements about a finished run.  This script generates a random
admissible data set, solves it, perturbs one coefficient, and evaluates
both sides of each inequality.
"""

import math

import numpy as np

from parapair import analysis, fem, fields, stepper


def smooth(rng, mesh, times, base, amp):
    x = mesh.nodes[:, 0]
    k = int(rng.integers(1, 4))
    phase = float(rng.uniform(0, 2 * math.pi))
    c = float(rng.uniform(-1, 1))
    return np.array([base + amp * np.sin(math.pi * k * x + phase)
                     * math.cos(c * t) for t in times])


def random_problem(rng, mesh, T):
    times = np.linspace(0, T, 5)
    mk = fields.SpaceTimeField
    sextet = fields.CoefficientSextet(
        mesh,
        a=mk("scalar", smooth(rng, mesh, times, 1.2, 0.2), times),
        b=mk("scalar", smooth(rng, mesh, times, 0.0, 0.2), times),
        mu=mk("scalar", np.abs(smooth(rng, mesh, times, 0.0, 0.3)), times),
        lam=mk("scalar", smooth(rng, mesh, times, 0.0, 0.2), times),
        omega=mk("vector", smooth(rng, mesh, times, 0.0, 0.3)[..., None],
                 times),
        A=mk("matrix",
             (np.abs(smooth(rng, mesh, times, 0.8, 0.2)) + 0.2)[..., None,
                                                                None],
             times))
    h = mk("scalar", smooth(rng, mesh, times, 0.2, 0.3), times)
    k = mk("scalar", smooth(rng, mesh, times, -0.1, 0.3), times)
    x = mesh.nodes[:, 0]
    return sextet, h, k, np.sin(math.pi * x), x * (1 - x)


def main():
    rng = np.random.default_rng(7)
    T, nu = 0.01, 1.0
    mesh = fem.build_mesh(("interval", 0, 1), 32)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    spaces = (V, V0)

    sextet, h, k, p0, z0 = random_problem(rng, mesh, T)
    report = fields.validate_sextet(sextet)
    print("-- admissibility --")
    print(report.to_text())

    consts = fields.compute_scheme_constants(sextet, nu, T, V, V0)
    print("tau_star = %.6g, delta0 = %.6g, C* = %.6g, M0 = %.6g, M1 = %.6g"
          % (consts.tau_star, consts.delta0, consts.c_star, consts.m0,
             consts.m1))

    tau = consts.delta0 / 2.0
    initial = stepper.project_initial(spaces, p0, z0)

    def solve(sx, hh, kk):
        return stepper.run_scheme(
            spaces, stepper.slice_sextet(sx, tau),
            stepper.slice_forcing(hh, kk, tau), initial, tau, nu, T,
            tau_star=consts.tau_star)

    traj = solve(sextet, h, k)
    print("\n-- stability bound --")
    print(analysis.check_apriori(traj, sextet, nu, consts).to_text())

    print("-- solution-operator sandwich --")
    lower, upper, combined = analysis.check_isomorphism_sandwich(traj,
                                                                 consts)
    print(combined.to_text())

    # perturb lambda and certify the dependence of the solution on it
    sextet2 = fields.CoefficientSextet(
        mesh, sextet.a, sextet.b, sextet.mu,
        fields.SpaceTimeField("scalar", sextet.lam.values + 0.02,
                              sextet.lam.times),
        sextet.omega, sextet.A)
    traj2 = solve(sextet2, h, k)
    print("-- continuous dependence (perturbed lambda) --")
    dep = analysis.check_continuous_dependence(
        analysis.RunData(traj, sextet, nu),
        analysis.RunData(traj2, sextet2, nu), consts)
    print(dep.to_text())


if __name__ == "__main__":
    main()
