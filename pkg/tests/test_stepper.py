import math

import numpy as np
import pytest
import scipy.sparse as sp

from parapair import catalog, fem, fields, stepper
from conftest import (random_admissible_sextet, random_forcing,
                      random_initial, solve_problem)


T = 0.01


@pytest.fixture(scope="module")
def problem(spaces_32):
    V, V0 = spaces_32
    rng = np.random.default_rng(42)
    sextet = random_admissible_sextet(rng, V.mesh, T)
    h, k = random_forcing(rng, V.mesh, T)
    p0, z0 = random_initial(rng, V.mesh)
    return sextet, h, k, p0, z0


def _one_step_system(spaces, sextet, h, k, p0, z0, tau, nu=1.0):
    coeff = stepper.slice_sextet(sextet, tau)
    forcing = stepper.slice_forcing(h, k, tau)
    prev = stepper.project_initial(spaces, p0, z0)
    h_load, k_load = stepper.forcing_loads(spaces, forcing, 1)
    return stepper.assemble_step_system(spaces, coeff, 1, prev, tau, nu,
                                        h_load=h_load, k_load=k_load)


def test_tau_guard(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    ts = fields.tau_star(sextet, 1.0)
    coeff = stepper.slice_sextet(sextet, 2.0 * ts)
    prev = stepper.project_initial(spaces_32, p0, z0)
    with pytest.raises(stepper.TauGuardError) as exc:
        stepper.assemble_step_system(spaces_32, coeff, 1, prev, 2.0 * ts,
                                     1.0, tau_star=ts)
    assert "%.6g" % (2.0 * ts) in str(exc.value)
    assert "%.6g" % ts in str(exc.value)
    # override lets the assembly proceed
    sys = stepper.assemble_step_system(spaces_32, coeff, 1, prev, 2.0 * ts,
                                       1.0, tau_star=ts, override=True)
    assert sys.tau == 2.0 * ts


def test_step_matrix_is_symmetric(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    D = (sys.matrix - sys.matrix.T).toarray()
    assert np.abs(D).max() <= 1e-12 * max(1.0, np.abs(sys.matrix.data).max())


def test_pcg_zero_rhs(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    x, iters, res = stepper.pcg(sys.matrix, np.zeros(sys.matrix.shape[0]))
    assert np.all(x == 0.0) and iters == 0 and res == 0.0


def test_pcg_detects_indefinite_matrix():
    A = sp.csr_matrix(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(stepper.IndefiniteStepError):
        stepper.pcg(A, np.ones(3))
    B = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))   # indefinite
    with pytest.raises(stepper.IndefiniteStepError):
        stepper.pcg(B, np.array([1.0, -1.0]))


def test_solve_step_residual_contract(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    tol = 1e-12
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    p, z, info = stepper.solve_step(sys, tol=tol)
    g = stepper.energy_gradient(p, z, sys)
    assert np.linalg.norm(g) <= 10 * tol * np.linalg.norm(sys.rhs)
    assert info["residual"] <= tol


def test_energy_zero_state_and_quadratic_identity(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k,
                           np.zeros_like(p0), np.zeros_like(z0), 0.002)
    assert stepper.energy(np.zeros(sys.n_p), np.zeros(sys.n_z), sys) == 0.0
    # E = 1/2 x^T A x - rhs^T x + const for random states, recomputed from
    # the assembled blocks
    rng = np.random.default_rng(8)
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    App, Azz, B = sys.blocks["App"], sys.blocks["Azz"], sys.blocks["B"]
    for _ in range(10):
        p = rng.standard_normal(sys.n_p)
        z = rng.standard_normal(sys.n_z)
        quad = (0.5 * float(p @ (App @ p)) + float(p @ (B @ z))
                + 0.5 * float(z @ (Azz @ z)))
        lin = float(sys.rhs @ sys.join(p, z))
        manual = quad - lin + sys.const_term
        assert stepper.energy(p, z, sys) == pytest.approx(
            manual, rel=1e-10, abs=1e-10)


def test_solution_minimizes_energy(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    p, z, _ = stepper.solve_step(sys, tol=1e-13)
    e0 = stepper.energy(p, z, sys)
    rng = np.random.default_rng(12)
    for _ in range(100):
        dp = rng.standard_normal(sys.n_p) * 10.0 ** rng.uniform(-6, 0)
        dz = rng.standard_normal(sys.n_z) * 10.0 ** rng.uniform(-6, 0)
        assert stepper.energy(p + dp, z + dz, sys) >= e0 - 1e-12 * abs(e0)


def test_energy_gradient_matches_finite_differences(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    rng = np.random.default_rng(13)
    n = sys.n_p + sys.n_z
    for _ in range(20):
        x = rng.standard_normal(n)
        p, z = sys.split(x)
        g = stepper.energy_gradient(p, z, sys)
        for idx in rng.integers(0, n, size=3):
            eps = 1e-6
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            fd = (stepper.energy(*sys.split(xp), sys)
                  - stepper.energy(*sys.split(xm), sys)) / (2 * eps)
            assert fd == pytest.approx(g[idx], rel=1e-6, abs=1e-6)


def test_energy_gradient_shape_check(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    sys = _one_step_system(spaces_32, sextet, h, k, p0, z0, 0.002)
    with pytest.raises(ValueError):
        stepper.energy_gradient(np.zeros(sys.n_p + 1), np.zeros(sys.n_z),
                                sys)


def test_zero_data_gives_zero_trajectory(spaces_32):
    V, V0 = spaces_32
    mesh = V.mesh
    sextet = catalog.constant_sextet(mesh, T=T)
    zero = fields.SpaceTimeField.constant(0.0, mesh.n_nodes, T)
    traj = solve_problem(spaces_32, sextet, zero, zero,
                         np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                         0.002, 1.0, T)
    assert np.abs(traj.p).max() <= 1e-12
    assert np.abs(traj.z).max() <= 1e-12
    assert traj.n_steps == 5


def test_run_scheme_diagnostics_and_partial_tail(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, 0.003, 1.0, T)
    # 0.003 does not divide 0.01: ceil gives 4 steps
    assert traj.n_steps == 4
    assert len(traj.diagnostics) == 4
    assert all(d["iterations"] > 0 for d in traj.diagnostics)
    assert traj.times[-1] == pytest.approx(0.012)


def test_trajectory_interpolants(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, 0.002, 1.0, T,
                         tol=1e-12)
    for i in range(traj.n_steps + 1):
        p_lin, z_lin = stepper.trajectory_interpolants(traj, "linear",
                                                       i * traj.tau)
        assert np.array_equal(p_lin, traj.p[i])
        assert np.array_equal(z_lin, traj.z[i])
    p_f, _ = stepper.trajectory_interpolants(traj, "forward", 0.0011)
    assert np.array_equal(p_f, traj.p[1])


def test_forward_linear_gap_shrinks_with_tau(spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    V, V0 = spaces_32

    def gap(tau):
        traj = solve_problem(spaces_32, sextet, h, k, p0, z0, tau, 1.0, T,
                             tol=1e-12)
        ts = np.linspace(1e-8, T - 1e-8, 200)
        acc = 0.0
        for t in ts:
            pf, zf = stepper.trajectory_interpolants(traj, "forward", t)
            pl, zl = stepper.trajectory_interpolants(traj, "linear", t)
            acc += V.h_norm(pf - pl) ** 2 + V0.h_norm(zf - zl) ** 2
        return math.sqrt(acc / len(ts))

    gaps = [gap(tau) for tau in (0.002, 0.001, 0.0005)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_export_trajectory_csv(tmp_path, spaces_32, problem):
    sextet, h, k, p0, z0 = problem
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, 0.002, 1.0, T)
    path = tmp_path / "traj.csv"
    stepper.export_trajectory_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("step,t,")
    assert len(lines) == traj.n_steps + 2
