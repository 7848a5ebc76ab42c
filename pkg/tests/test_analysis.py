import math

import numpy as np
import pytest

from parapair import analysis, catalog, fem, fields, stepper
from conftest import (random_admissible_sextet, random_forcing,
                      random_initial, solve_problem)


T = 0.01
NU = 1.0


@pytest.fixture(scope="module")
def base_run(spaces_32):
    rng = np.random.default_rng(21)
    mesh = spaces_32[0].mesh
    sextet = random_admissible_sextet(rng, mesh, T)
    h, k = random_forcing(rng, mesh, T)
    p0, z0 = random_initial(rng, mesh)
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, 0.002, NU, T,
                         tol=1e-12)
    return analysis.RunData(traj, sextet, NU), (h, k, p0, z0)


@pytest.fixture(scope="module")
def heat_problem(spaces_32):
    """Decoupled constant-coefficient problem with a valid sextet."""
    mesh = spaces_32[0].mesh
    sextet = catalog.constant_sextet(mesh, a=1.0, T=T)
    mk = fields.SpaceTimeField
    x = mesh.nodes[:, 0]
    h = mk("scalar", np.tile(np.cos(math.pi * x), (2, 1)), [0.0, T])
    k = mk("scalar", np.tile(np.sin(math.pi * x), (2, 1)), [0.0, T])
    p0 = np.cos(math.pi * x)
    z0 = np.sin(math.pi * x)
    return sextet, h, k, p0, z0


@pytest.fixture(scope="module")
def heat_consts(spaces_32, embeddings_32, heat_problem):
    sextet = heat_problem[0]
    return fields.compute_scheme_constants(sextet, NU, T, *spaces_32,
                                           embeddings=embeddings_32)


def test_step_weights_partial_tail():
    w = analysis.step_weights(0.25, 0.7, 3)
    assert np.allclose(w, [0.25, 0.25, 0.2])
    assert np.allclose(analysis.step_weights(0.25, 1.0, 4), 0.25)


def test_w12_dual_seminorms_against_quadrature(spaces_32):
    V0 = spaces_32[1]
    rng = np.random.default_rng(6)
    tau, Tloc = 0.25, 0.7
    states = rng.standard_normal((4, V0.n_dofs))
    val, dval = analysis.w12_dual_seminorms(V0, states, tau, Tloc)

    G = V0.gram().toarray()
    M = V0.mass().toarray()
    Ginv = np.linalg.inv(G)

    def dual_sq(u):
        f = M @ u
        return float(f @ (Ginv @ f))

    # composite Simpson per interval: exact for the quadratic integrand
    w = analysis.step_weights(tau, Tloc, 3)
    ref_val = 0.0
    ref_dval = 0.0
    for i in range(1, 4):
        lo, hi = (i - 1) * tau, (i - 1) * tau + w[i - 1]
        mid = 0.5 * (lo + hi)

        def u_at(t):
            frac = (t - (i - 1) * tau) / tau
            return (1 - frac) * states[i - 1] + frac * states[i]

        ref_val += (hi - lo) / 6.0 * (dual_sq(u_at(lo))
                                      + 4 * dual_sq(u_at(mid))
                                      + dual_sq(u_at(hi)))
        ref_dval += (hi - lo) * dual_sq((states[i] - states[i - 1]) / tau)
    assert val == pytest.approx(ref_val, rel=1e-10)
    assert dval == pytest.approx(ref_dval, rel=1e-10)


def test_scheme_residual_matches_forcing(base_run):
    run, _ = base_run
    report = analysis.residual_report(run.traj)
    report.check()
    # the discrete identity: residual == sliced forcing, up to solver tol
    assert report.first_dual_norms.max() <= 1e-8
    assert report.second_dual_norms.max() <= 1e-8
    assert report.y_norm <= 1e-8


def test_apply_t_rejects_initial_time(base_run):
    run, _ = base_run
    with pytest.raises(ValueError):
        analysis.apply_T(run.traj, 0.0)


def test_zero_trajectory_has_zero_residual(spaces_32):
    mesh = spaces_32[0].mesh
    sextet = catalog.constant_sextet(mesh, T=T)
    zero = fields.SpaceTimeField.constant(0.0, mesh.n_nodes, T)
    traj = solve_problem(spaces_32, sextet, zero, zero,
                         np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                         0.002, NU, T)
    report = analysis.residual_report(traj)
    assert report.y_norm == 0.0


def test_operator_bound_on_random_quadruples(spaces_32, embeddings_32):
    V, V0 = spaces_32
    rng = np.random.default_rng(30)
    sextet = random_admissible_sextet(rng, V.mesh, T)
    consts = fields.compute_scheme_constants(sextet, NU, T, V, V0,
                                             embeddings=embeddings_32)
    tau = 0.002
    coeff = stepper.slice_sextet(sextet, tau)
    n = 5
    for _ in range(5):
        fwd_p = rng.standard_normal((n + 1, V.n_dofs))
        lin_p = rng.standard_normal((n + 1, V.n_dofs))
        fwd_z = rng.standard_normal((n + 1, V0.n_dofs))
        lin_z = rng.standard_normal((n + 1, V0.n_dofs))
        y, x = analysis.quadruple_norms(spaces_32, coeff, NU, fwd_p, lin_p,
                                        fwd_z, lin_z, tau, T)
        assert y <= consts.m0 * x


def test_check_apriori_passes_on_heat_run(spaces_32, heat_problem,
                                          heat_consts):
    sextet, h, k, p0, z0 = heat_problem
    tau = heat_consts.delta0 / 2.0
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, tau, NU, T,
                         tau_star=heat_consts.tau_star)
    report = analysis.check_apriori(traj, sextet, NU, heat_consts)
    assert report.applicable and report.passed
    assert report.margin > 0


def test_check_apriori_zero_data(spaces_32, heat_problem, heat_consts):
    mesh = spaces_32[0].mesh
    sextet = heat_problem[0]
    zero = fields.SpaceTimeField.constant(0.0, mesh.n_nodes, T)
    traj = solve_problem(spaces_32, sextet, zero, zero,
                         np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                         heat_consts.delta0 / 2.0, NU, T)
    report = analysis.check_apriori(traj, sextet, NU, heat_consts)
    assert report.passed and report.lhs == 0.0


def test_check_apriori_guard_on_large_tau(spaces_32, heat_problem,
                                          heat_consts):
    sextet, h, k, p0, z0 = heat_problem
    tau = 2.0 * heat_consts.delta0
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0, tau, NU, T)
    report = analysis.check_apriori(traj, sextet, NU, heat_consts)
    assert not report.applicable
    assert not report.passed
    assert "delta0" in report.notes


# --------------------------------------------------------------------------
# data-difference residual profile
# --------------------------------------------------------------------------

def _gauss_cell_integral(mesh, values_at):
    """Independent 1D quadrature: 10-point Gauss-Legendre per cell of a
    callable of physical points (n_pts,) -> integrand values."""
    xg, wg = np.polynomial.legendre.leggauss(10)
    total = 0.0
    for c in range(mesh.n_cells):
        x0 = mesh.nodes[mesh.cells[c, 0], 0]
        x1 = mesh.nodes[mesh.cells[c, 1], 0]
        pts = 0.5 * (x1 - x0) * xg + 0.5 * (x0 + x1)
        total += 0.5 * (x1 - x0) * float(wg @ values_at(pts, c))
    return total


def _p1_eval(mesh, nodal, pts, c):
    x0 = mesh.nodes[mesh.cells[c, 0], 0]
    x1 = mesh.nodes[mesh.cells[c, 1], 0]
    w = (pts - x0) / (x1 - x0)
    return (1 - w) * nodal[mesh.cells[c, 0]] + w * nodal[mesh.cells[c, 1]]


def test_r_star_identical_data_is_zero(base_run):
    run, _ = base_run
    assert analysis.r_star(run.traj, run.sextet, run.sextet, 0.004) == 0.0


def test_r_star_lambda_only_activation(spaces_32, base_run):
    run, _ = base_run
    V = spaces_32[0]
    mesh = V.mesh
    rng = np.random.default_rng(31)
    sx2 = random_admissible_sextet(rng, mesh, T)
    # make sextet 2 equal to sextet 1 except in lambda
    sx1 = fields.CoefficientSextet(
        mesh, sx2.a, sx2.b, sx2.mu,
        fields.SpaceTimeField("scalar", sx2.lam.values + 0.05,
                              sx2.lam.times),
        sx2.omega, sx2.A)
    t = 0.004
    val = analysis.r_star(run.traj, sx1, sx2, t)
    i = max(fields._forward_index(t, run.traj.tau, run.traj.n_steps), 1)
    p2 = V.prolong(run.traj.p[i])
    dlam = sx1.lam.at_time(t, mesh.nodes) - sx2.lam.at_time(t, mesh.nodes)
    ref = _gauss_cell_integral(
        mesh, lambda pts, c: (_p1_eval(mesh, p2, pts, c)
                              * _p1_eval(mesh, dlam, pts, c)) ** 2)
    assert val == pytest.approx(ref, rel=1e-10)


def test_r_star_matches_per_term_quadrature(spaces_32, base_run):
    run, _ = base_run
    V, V0 = spaces_32
    mesh = V.mesh
    rng = np.random.default_rng(32)
    sx1 = run.sextet
    sx2 = random_admissible_sextet(rng, mesh, T)
    t = 0.006
    val = analysis.r_star(run.traj, sx1, sx2, t)

    traj = run.traj
    i = max(fields._forward_index(t, traj.tau, traj.n_steps), 1)
    p2 = V.prolong(traj.p[i])
    z2 = V0.prolong(traj.z[i])
    dz2 = (traj.z[i] - traj.z[i - 1]) / traj.tau
    nodes = mesh.nodes

    def diff(name):
        return (sx1.fields()[name].at_time(t, nodes)
                - sx2.fields()[name].at_time(t, nodes))

    G = V0.gram().toarray()
    f = V0.mass() @ dz2
    dtz_dual_sq = float(f @ np.linalg.solve(G, f))
    da_all = float(np.abs(sx1.a.values - sx2.a.values).max())
    da = diff("a")
    grad_da_l4 = _gauss_cell_integral(
        mesh, lambda pts, c: np.full_like(
            pts, float(mesh.cell_gradients(da)[c, 0]) ** 4)) ** 0.5
    term1 = dtz_dual_sq * (da_all ** 2 + grad_da_l4)

    dmu = diff("mu")
    dmu_h_sq = _gauss_cell_integral(
        mesh, lambda pts, c: _p1_eval(mesh, dmu, pts, c) ** 2)
    dom = diff("omega")[:, 0]
    dom_l4_sq = math.sqrt(_gauss_cell_integral(
        mesh, lambda pts, c: _p1_eval(mesh, dom, pts, c) ** 4))
    term2 = V.space_norm(traj.p[i]) ** 2 * (dmu_h_sq + dom_l4_sq)

    db = diff("b")
    db_l4_sq = math.sqrt(_gauss_cell_integral(
        mesh, lambda pts, c: _p1_eval(mesh, db, pts, c) ** 4))
    term3 = V0.space_norm(traj.z[i]) ** 2 * db_l4_sq

    dlam = diff("lam")
    term4 = _gauss_cell_integral(
        mesh, lambda pts, c: (_p1_eval(mesh, p2, pts, c)
                              * _p1_eval(mesh, dlam, pts, c)) ** 2)

    gz = mesh.cell_gradients(z2)
    term5 = _gauss_cell_integral(
        mesh, lambda pts, c: (gz[c, 0] * _p1_eval(mesh, dom, pts, c)) ** 2)

    dA = diff("A")[:, 0, 0]
    term6 = _gauss_cell_integral(
        mesh, lambda pts, c: (_p1_eval(mesh, dA, pts, c) * gz[c, 0]) ** 2)

    ref = term1 + term2 + term3 + term4 + term5 + term6
    assert val == pytest.approx(ref, rel=1e-10)


# --------------------------------------------------------------------------
# continuous dependence
# --------------------------------------------------------------------------

def test_continuous_dependence_identical_runs(spaces_32, base_run,
                                              embeddings_32):
    run, _ = base_run
    consts = fields.compute_scheme_constants(run.sextet, NU, T, *spaces_32,
                                             embeddings=embeddings_32)
    report = analysis.check_continuous_dependence(run, run, consts)
    assert report.lhs == 0.0
    assert report.passed
    assert report.constants["rstar_integral"] == 0.0


def test_continuous_dependence_forcing_perturbation(spaces_32, base_run,
                                                    embeddings_32):
    run, (h, k, p0, z0) = base_run
    mesh = spaces_32[0].mesh
    h2 = fields.SpaceTimeField("scalar", h.values + 0.01, h.times)
    traj2 = solve_problem(spaces_32, run.sextet, h2, k, p0, z0,
                          run.traj.tau, NU, T, tol=1e-12)
    run2 = analysis.RunData(traj2, run.sextet, NU)
    consts = fields.compute_scheme_constants(run.sextet, NU, T, *spaces_32,
                                             embeddings=embeddings_32)
    report = analysis.check_continuous_dependence(run, run2, consts)
    # same sextet: the data-difference residual profile vanishes
    assert report.constants["rstar_integral"] == 0.0
    assert report.constants["forcing_term"] > 0.0
    assert report.passed


def test_continuous_dependence_requires_shared_grid(base_run, spaces_32):
    run, (h, k, p0, z0) = base_run
    traj2 = solve_problem(spaces_32, run.sextet, h, k, p0, z0, 0.001, NU, T)
    with pytest.raises(ValueError):
        analysis.check_continuous_dependence(
            run, analysis.RunData(traj2, run.sextet, NU),
            fields.SchemeConstants(nu=NU, c_star=1.0))


# --------------------------------------------------------------------------
# norm sandwich
# --------------------------------------------------------------------------

def test_sandwich_zero_data(spaces_32, heat_problem, heat_consts):
    mesh = spaces_32[0].mesh
    sextet = heat_problem[0]
    zero = fields.SpaceTimeField.constant(0.0, mesh.n_nodes, T)
    traj = solve_problem(spaces_32, sextet, zero, zero,
                         np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                         0.002, NU, T)
    lower, upper, combined = analysis.check_isomorphism_sandwich(
        traj, heat_consts)
    assert lower.passed and upper.passed and combined.passed


def test_sandwich_heat_run(spaces_32, heat_problem, heat_consts):
    sextet, h, k, p0, z0 = heat_problem
    traj = solve_problem(spaces_32, sextet, h, k, p0, z0,
                         heat_consts.delta0 / 2.0, NU, T)
    lower, upper, combined = analysis.check_isomorphism_sandwich(
        traj, heat_consts)
    assert lower.passed and upper.passed and combined.passed
    assert "lower pass True" in combined.notes


# --------------------------------------------------------------------------
# oracle solvers
# --------------------------------------------------------------------------

def _small_step_system(rng, tau=0.002):
    mesh = fem.build_mesh(("interval", 0, 1), 12)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    sextet = random_admissible_sextet(rng, mesh, T)
    coeff = stepper.slice_sextet(sextet, tau)
    h, k = random_forcing(rng, mesh, T)
    forcing = stepper.slice_forcing(h, k, tau)
    p0, z0 = random_initial(rng, mesh)
    prev = stepper.project_initial((V, V0), p0, z0)
    h_load, k_load = stepper.forcing_loads((V, V0), forcing, 1)
    return stepper.assemble_step_system((V, V0), coeff, 1, prev, tau, 1.0,
                                        h_load=h_load, k_load=k_load)


def test_dense_oracle_agrees_with_cg():
    rng = np.random.default_rng(40)
    for _ in range(30):
        sys = _small_step_system(rng)
        p1, z1, _ = stepper.solve_step(sys, tol=1e-13)
        p2, z2 = analysis.dense_oracle_step(sys)
        scale = max(np.abs(np.concatenate([p2, z2])).max(), 1e-30)
        assert np.abs(p1 - p2).max() / scale <= 1e-10
        assert np.abs(z1 - z2).max() / scale <= 1e-10


def test_dense_oracle_dof_cap(spaces_32):
    mesh = fem.build_mesh(("interval", 0, 1), 128)
    rng = np.random.default_rng(41)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    sextet = random_admissible_sextet(rng, mesh, T)
    coeff = stepper.slice_sextet(sextet, 0.002)
    prev = (np.zeros(V.n_dofs), np.zeros(V0.n_dofs))
    sys = stepper.assemble_step_system((V, V0), coeff, 1, prev, 0.002, 1.0)
    with pytest.raises(ValueError):
        analysis.dense_oracle_step(sys)


def test_energy_descent_oracle_agreement_and_uniqueness():
    rng = np.random.default_rng(42)
    sys = _small_step_system(rng)
    p_cg, z_cg, _ = stepper.solve_step(sys, tol=1e-13)
    p0, z0, iters = analysis.minimize_energy_oracle(sys)
    assert np.abs(p0 - p_cg).max() <= 1e-6
    assert np.abs(z0 - z_cg).max() <= 1e-6
    e_start = stepper.energy(*sys.split(np.zeros(sys.n_p + sys.n_z)), sys)
    assert stepper.energy(p0, z0, sys) <= e_start
    # two random starts reach the same minimizer (uniqueness below the
    # step-size threshold)
    s1 = rng.standard_normal(sys.n_p + sys.n_z)
    s2 = rng.standard_normal(sys.n_p + sys.n_z)
    pa, za, _ = analysis.minimize_energy_oracle(sys, start=s1)
    pb, zb, _ = analysis.minimize_energy_oracle(sys, start=s2)
    assert np.abs(pa - pb).max() <= 1e-6
    assert np.abs(za - zb).max() <= 1e-6


# --------------------------------------------------------------------------
# tau-refinement study
# --------------------------------------------------------------------------

def test_tau_refinement_rejects_bad_tau_lists(spaces_32):
    with pytest.raises(ValueError):
        analysis.tau_refinement_study(lambda tau: None, [0.1, 0.05])
    with pytest.raises(ValueError):
        analysis.tau_refinement_study(lambda tau: None, [0.1, 0.2, 0.05])


def test_mms_errors_strictly_decrease():
    mesh = fem.build_mesh(("interval", 0, 1), 32)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    spaces = (V, V0)
    entry = catalog.MMS_ENTRIES["sin_1d"]
    Tm = 0.5
    sextet = catalog.constant_sextet(mesh, T=Tm)
    h, k = catalog.mms_forcing(entry, mesh, 1.0, Tm, 64)
    p0n, z0n = catalog.mms_initial(entry, mesh)
    initial = stepper.project_initial(spaces, p0n, z0n)

    def make_run(tau):
        return stepper.run_scheme(
            spaces, stepper.slice_sextet(sextet, tau),
            stepper.slice_forcing(h, k, tau), initial, tau, 1.0, Tm,
            tol=1e-12)

    table = analysis.tau_refinement_study(
        make_run, [1.0 / 16, 1.0 / 32, 1.0 / 64],
        exact=catalog.mms_exact_dofs(entry, spaces))
    assert len(table.rows) == 3
    for col in ("err_CH", "err_H", "err_V"):
        vals = [r[col] for r in table.rows]
        assert vals[0] > vals[1] > vals[2]
    csv = table.to_csv()
    assert csv.splitlines()[0].startswith("tau,")


def test_cauchy_column_decreases_without_exact_solution(spaces_32, base_run):
    run, (h, k, p0, z0) = base_run

    def make_run(tau):
        return solve_problem(spaces_32, run.sextet, h, k, p0, z0, tau, NU,
                             T, tol=1e-12)

    table = analysis.tau_refinement_study(
        make_run, [T / 4, T / 8, T / 16, T / 32])
    cauchy = [r["cauchy_CH"] for r in table.rows[1:]]
    assert cauchy[0] > cauchy[1] > cauchy[2]
    # self-referenced errors also shrink toward the finest run
    errs = [r["err_CH"] for r in table.rows]
    assert errs[0] > errs[1] > errs[2]


def test_zero_data_refinement_all_zero_errors(spaces_32, heat_problem):
    mesh = spaces_32[0].mesh
    sextet = heat_problem[0]
    zero = fields.SpaceTimeField.constant(0.0, mesh.n_nodes, T)

    def make_run(tau):
        return solve_problem(spaces_32, sextet, zero, zero,
                             np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes),
                             tau, NU, T)

    table = analysis.tau_refinement_study(make_run, [T / 2, T / 4, T / 8])
    assert all(r["err_CH"] == 0.0 for r in table.rows)
