###############################################################################
#      RESIDUAL OPERATOR, ORACLE SOLVERS, AND INEQUALITY CERTIFICATION        #
###############################################################################
#
# This module evaluates both sides of the explicit estimates satisfied by the
# scheme -- the a-priori energy bound, the continuous-dependence inequality,
# the residual-operator bound and the norm sandwich of the solution operator
# -- and provides independent oracles (dense elimination, energy descent)
# against which the step solver is cross-checked.
#
# All time integrals are step-wise: piecewise-constant integrands are summed
# with weight tau (the final partial interval weighted by its actual length),
# piecewise-quadratic ones (dual norms of linear interpolants) exactly.

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import fem, fields, stepper
from .fields import safe_exp


@dataclass
class ResidualReport:
    first_dual_norms: np.ndarray       # per step, V*-norm of residual 1
    second_dual_norms: np.ndarray      # per step, V0*-norm of residual 2
    y_norm: float

    def check(self):
        assert np.all(self.first_dual_norms >= 0)
        assert np.all(self.second_dual_norms >= 0)


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    constants: dict = dc_field(default_factory=dict)
    applicable: bool = True
    notes: str = ""

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        if not self.applicable:
            return False
        return self.lhs <= self.rhs + 1e-10 * max(1.0, abs(self.rhs)
                                                  if math.isfinite(self.rhs)
                                                  else 1.0)

    def to_text(self):
        lines = ["check %s" % self.name,
                 "applicable %s" % self.applicable,
                 "lhs %.12e" % self.lhs,
                 "rhs %.12e" % self.rhs,
                 "margin %.12e" % self.margin,
                 "pass %s" % self.passed]
        for k, v in sorted(self.constants.items()):
            lines.append("constant %s %.12e" % (k, v))
        if self.notes:
            lines.append("notes %s" % self.notes)
        return "\n".join(lines) + "\n"


@dataclass
class ConvergenceTable:
    columns: list
    rows: list                        # list of dicts keyed by columns

    def to_csv(self, path=None):
        lines = [",".join(self.columns)]
        for r in self.rows:
            lines.append(",".join(
                "%.12e" % r[c] if isinstance(r[c], float) else str(r[c])
                for c in self.columns))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# --------------------------------------------------------------------------
# step weights and trajectory norms
# --------------------------------------------------------------------------

def step_weights(tau, T, n):
    """Length of each step interval intersected with (0, T)."""
    w = np.full(n, tau)
    w[-1] = max(T - (n - 1) * tau, 0.0)
    return w


def _interval_quadratic_integral(e00, e01, e11, frac):
    """Integral over [0, frac] (in unit-interval coordinates) of the
    quadratic (1-w)^2 e00 + 2w(1-w) e01 + w^2 e11."""
    s = frac
    return (e00 * (s - s ** 2 + s ** 3 / 3.0)
            + 2.0 * e01 * (s ** 2 / 2.0 - s ** 3 / 3.0)
            + e11 * s ** 3 / 3.0)


def w12_dual_seminorms(space, states, tau, T):
    """(int |u(t)|_{V*}^2 dt, int |u'(t)|_{V*}^2 dt) for the linear
    interpolant of a dof-vector sequence, measured through H -> V*.

    Both integrals are exact: the first integrand is piecewise quadratic in
    t, the second piecewise constant.
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[0] - 1
    M = space.mass()
    funcs = (M @ states.T).T                          # (n+1, dofs)
    riesz = np.array([space.gram_solve(f) for f in funcs])
    E = funcs @ riesz.T                               # e[i,j] = f_i G^{-1} f_j
    w = step_weights(tau, T, n)
    val = 0.0
    dval = 0.0
    for i in range(1, n + 1):
        frac = w[i - 1] / tau
        val += tau * _interval_quadratic_integral(
            E[i - 1, i - 1], E[i - 1, i], E[i, i], frac)
        df = (E[i, i] - 2 * E[i - 1, i] + E[i - 1, i - 1]) / tau ** 2
        dval += w[i - 1] * df
    return val, dval


def forward_norm_sq_sum(space, states, tau, T, norm="space"):
    """Sum of w_i |u_i|^2 over the forward interpolant (i = 1..n)."""
    states = np.asarray(states, dtype=float)
    n = states.shape[0] - 1
    w = step_weights(tau, T, n)
    f = {"space": space.space_norm, "H": space.h_norm,
         "grad": space.grad_norm}[norm]
    return float(sum(w[i - 1] * f(states[i]) ** 2 for i in range(1, n + 1)))


def forcing_y_norm_sq(traj):
    """Squared L^2(0,T) norm of the dual norms of the sliced forcing."""
    V, V0 = traj.spaces
    n = traj.n_steps
    w = step_weights(traj.tau, traj.T, n)
    total = 0.0
    for i in range(1, n + 1):
        h_load, k_load = stepper.forcing_loads(traj.spaces, traj.forcing, i)
        total += w[i - 1] * (fem.dual_norm(h_load, V) ** 2
                             + fem.dual_norm(k_load, V0) ** 2)
    return total


# --------------------------------------------------------------------------
# residual operator
# --------------------------------------------------------------------------

def residual_pair(spaces, coeff_slices, nu, fwd_p, fwd_z, slope_p, slope_z, i):
    """Dof-vector functionals of the two residual components on step i.

    First component:  d/dt p-tilde + (Fp - p) + mu p + lam p + omega . grad z
    Second component: a d/dt z-tilde + b z - div(A grad z + nu grad z + p omega)
    with the time derivative taken from the linear interpolant's slope and
    the remaining values from the forward interpolant.
    """
    V, V0 = spaces
    mesh = V.mesh
    sl = {name: coeff_slices[name].slices[i]
          for name in ("a", "b", "mu", "lam", "omega", "A")}
    M = V.mass()
    K = V.stiffness()
    M_mu = V.restrict(fem.mass_matrix(mesh, sl["mu"]))
    M_lam = V.restrict(fem.mass_matrix(mesh, sl["lam"]))
    M_a = V0.restrict(fem.mass_matrix(mesh, sl["a"]))
    M_b = V0.restrict(fem.mass_matrix(mesh, sl["b"]))
    K_A = V0.restrict(fem.stiffness_matrix(mesh, sl["A"]))
    K0 = V0.stiffness()
    B = fem.convection_matrix(mesh, sl["omega"])[V.dofs][:, V0.dofs].tocsr()
    f1 = M @ slope_p + (K + M_mu + M_lam) @ fwd_p + B @ fwd_z
    f2 = M_a @ slope_z + (M_b + K_A + nu * K0) @ fwd_z + B.T @ fwd_p
    return f1, f2


def apply_T(traj, t, nu=None):
    """Residual pair of a trajectory at time t (dof-vector functionals)."""
    if nu is None:
        nu = traj.nu
    n = traj.n_steps
    i = fields._forward_index(t, traj.tau, n)
    if i < 1:
        raise ValueError("t = %g is not in a step interior" % t)
    slope_p = (traj.p[i] - traj.p[i - 1]) / traj.tau
    slope_z = (traj.z[i] - traj.z[i - 1]) / traj.tau
    return residual_pair(traj.spaces, traj.coeff_slices, nu,
                         traj.p[i], traj.z[i], slope_p, slope_z, i)


def residual_report(traj, nu=None):
    """Per-step dual norms of (residual - forcing) plus the aggregate norm.

    For a scheme trajectory this reproduces the discrete identity
    'residual equals sliced forcing' up to the linear-solver tolerance.
    """
    if nu is None:
        nu = traj.nu
    V, V0 = traj.spaces
    n = traj.n_steps
    w = step_weights(traj.tau, traj.T, n)
    first, second = [], []
    for i in range(1, n + 1):
        f1, f2 = apply_T(traj, (i - 0.5) * traj.tau
                         if (i - 0.5) * traj.tau <= traj.T else traj.T, nu)
        h_load, k_load = stepper.forcing_loads(traj.spaces, traj.forcing, i)
        first.append(fem.dual_norm(f1 - h_load, V))
        second.append(fem.dual_norm(f2 - k_load, V0))
    first = np.asarray(first)
    second = np.asarray(second)
    y = math.sqrt(float(np.sum(w * (first ** 2 + second ** 2))))
    return ResidualReport(first, second, y)


def quadruple_norms(spaces, coeff_slices, nu, fwd_p, lin_p, fwd_z, lin_z,
                    tau, T):
    """(|T x|_Y, |x|_X) for a discrete quadruple
    x = (forward p, linear p, forward z, linear z).

    |x|_X^2 sums the squared L^2(0,T;V) norm of the forward p part, the
    squared W^{1,2}(0,T;V*) norm of the linear p part, and the analogous z
    parts.
    """
    V, V0 = spaces
    n = fwd_p.shape[0] - 1
    w = step_weights(tau, T, n)
    y_sq = 0.0
    for i in range(1, n + 1):
        f1, f2 = residual_pair(spaces, coeff_slices, nu, fwd_p[i], fwd_z[i],
                               (lin_p[i] - lin_p[i - 1]) / tau,
                               (lin_z[i] - lin_z[i - 1]) / tau, i)
        y_sq += w[i - 1] * (fem.dual_norm(f1, V) ** 2
                            + fem.dual_norm(f2, V0) ** 2)
    vp, dvp = w12_dual_seminorms(V, lin_p, tau, T)
    vz, dvz = w12_dual_seminorms(V0, lin_z, tau, T)
    x_sq = (forward_norm_sq_sum(V, fwd_p, tau, T, "space")
            + forward_norm_sq_sum(V0, fwd_z, tau, T, "space")
            + vp + dvp + vz + dvz)
    return math.sqrt(y_sq), math.sqrt(x_sq)


# --------------------------------------------------------------------------
# a-priori bound
# --------------------------------------------------------------------------

def check_apriori(traj, sextet, nu, consts):
    """Stability estimate: the scheme's energy norm against the explicit
    Gronwall bound from the initial data and the forcing."""
    V, V0 = traj.spaces
    norms = sextet.norms()
    delta = norms["delta_star"]
    if traj.tau >= consts.delta0:
        return EstimateReport(
            "apriori", math.nan, math.nan, {"delta0": consts.delta0},
            applicable=False,
            notes="tau = %g is not below delta0 = %g" % (traj.tau,
                                                         consts.delta0))
    n = traj.n_steps
    w = step_weights(traj.tau, traj.T, n)
    lhs = V.h_norm(traj.p[0]) ** 2 + delta * V0.h_norm(traj.z[0]) ** 2
    acc = 0.0
    for i in range(1, n + 1):
        acc += w[i - 1] * (V.space_norm(traj.p[i]) ** 2
                           + nu * V0.space_norm(traj.z[i]) ** 2)
        lhs = max(lhs, V.h_norm(traj.p[i]) ** 2
                  + delta * V0.h_norm(traj.z[i]) ** 2 + acc)
    c0 = consts.c0_star
    bracket = (V.h_norm(traj.p[0]) ** 2 + V0.h_norm(traj.z[0]) ** 2
               + forcing_y_norm_sq(traj))
    pref = 2.0 * (1.0 + c0 + norms["a_inf"])
    rhs = pref * safe_exp(6.0 * c0 * traj.T + 1.0) * bracket
    notes = ("final interval is partial (tau does not divide T)"
             if abs(n * traj.tau - traj.T) > 1e-12 * max(1.0, traj.T) else "")
    return EstimateReport("apriori", lhs, rhs,
                          {"c0_star": c0, "delta_star": delta,
                           "a_inf": norms["a_inf"], "T": traj.T,
                           "tau": traj.tau, "delta0": consts.delta0},
                          notes=notes)


# --------------------------------------------------------------------------
# continuous dependence
# --------------------------------------------------------------------------

def _l4_norm_vector(mesh, nodal_vec):
    """L^4 norm of the Euclidean magnitude of a P1 vector field."""
    pts, wq = fem._quad_rule(mesh.dim)
    vv = np.asarray(nodal_vec, dtype=float)[mesh.cells]   # (m, nd, d)
    vals = np.einsum("qk,ckd->cqd", pts, vv)              # (m, q, d)
    mag4 = np.sum(vals ** 2, axis=2) ** 2
    return float(np.einsum("c,q,cq->", mesh.measures, wq, mag4)) ** 0.25


def _l4_norm_cellwise(mesh, cell_vec):
    """L^4 norm of a cellwise-constant vector field (e.g. a P1 gradient)."""
    mag4 = np.sum(np.asarray(cell_vec, dtype=float) ** 2, axis=1) ** 2
    return float(np.sum(mesh.measures * mag4)) ** 0.25


def _h_norm_product(mesh, u_nodal, v_nodal):
    """|u_h v_h|_{L^2} by quadrature exact for the degree-4 integrand."""
    pts, wq = fem._quad_rule(mesh.dim)
    uu = np.asarray(u_nodal, dtype=float)[mesh.cells] @ pts.T
    vv = np.asarray(v_nodal, dtype=float)[mesh.cells] @ pts.T
    return math.sqrt(max(float(np.einsum(
        "c,q,cq->", mesh.measures, wq, (uu * vv) ** 2)), 0.0))


def _h_norm_grad_dot(mesh, z_nodal, omega_nodal):
    """|grad z_h . omega_h|_{L^2} (gradient cellwise constant)."""
    g = mesh.cell_gradients(z_nodal)                      # (m, d)
    pts, wq = fem._quad_rule(mesh.dim)
    ov = np.asarray(omega_nodal, dtype=float)[mesh.cells]
    vals = np.einsum("qk,ckd->cqd", pts, ov)
    dots = np.einsum("cd,cqd->cq", g, vals)
    return math.sqrt(max(float(np.einsum(
        "c,q,cq->", mesh.measures, wq, dots ** 2)), 0.0))


def _h_norm_mat_grad(mesh, z_nodal, mat_nodal):
    """|A_h grad z_h|_{L^2} for a P1 matrix field and P1 z."""
    g = mesh.cell_gradients(z_nodal)
    pts, wq = fem._quad_rule(mesh.dim)
    av = np.asarray(mat_nodal, dtype=float)[mesh.cells]   # (m, nd, d, e)
    amat = np.einsum("qk,ckde->cqde", pts, av)
    vec = np.einsum("cqde,ce->cqd", amat, g)
    mag = np.sum(vec ** 2, axis=2)
    return math.sqrt(max(float(np.einsum(
        "c,q,cq->", mesh.measures, wq, mag)), 0.0))


def r_star(traj2, sextet1, sextet2, t):
    """Residual profile of the data difference, weighted by the reference
    solution: the six-term sum entering the continuous-dependence bound."""
    if traj2.n_steps < 2:
        raise ValueError("reference trajectory needs at least 2 steps for "
                         "a time derivative")
    V, V0 = traj2.spaces
    mesh = V.mesh
    i = max(fields._forward_index(t, traj2.tau, traj2.n_steps), 1)
    p2 = traj2.p[i]
    z2 = traj2.z[i]
    dz2 = (traj2.z[i] - traj2.z[i - 1]) / traj2.tau
    z2_nodal = V0.prolong(z2)
    p2_nodal = V.prolong(p2)

    f1, f2 = sextet1.fields(), sextet2.fields()
    nodes = mesh.nodes

    def diff(name):
        return (f1[name].at_time(t, nodes) - f2[name].at_time(t, nodes))

    # sup over the whole space-time lattice of |a1 - a2|
    if f1["a"].values.shape == f2["a"].values.shape:
        da_all = float(np.abs(f1["a"].values - f2["a"].values).max())
    else:
        da_all = max(
            float(np.abs(f1["a"].at_time(s, nodes)
                         - f2["a"].at_time(s, nodes)).max())
            for s in np.linspace(0.0, traj2.T, 65))
    grad_da = mesh.cell_gradients(diff("a"))

    dtz_dual = fem.dual_norm(V0.mass() @ dz2, V0)
    term1 = dtz_dual ** 2 * (da_all ** 2
                             + _l4_norm_cellwise(mesh, grad_da) ** 2)
    dmu = diff("mu")
    term2 = V.space_norm(p2) ** 2 * (
        max(float(dmu @ (fem.mass_matrix(mesh) @ dmu)), 0.0)
        + _l4_norm_vector(mesh, diff("omega")) ** 2)
    term3 = V0.space_norm(z2) ** 2 * fem.l4_norm(mesh, diff("b")) ** 2
    term4 = _h_norm_product(mesh, p2_nodal, diff("lam")) ** 2
    term5 = _h_norm_grad_dot(mesh, z2_nodal, diff("omega")) ** 2
    term6 = _h_norm_mat_grad(mesh, z2_nodal, diff("A")) ** 2
    return term1 + term2 + term3 + term4 + term5 + term6


@dataclass
class RunData:
    """One solved problem: trajectory plus the data that produced it."""
    traj: stepper.DiscreteTrajectory
    sextet: object
    nu: float


def check_continuous_dependence(run1, run2, consts1):
    """Continuous dependence on data: the distance between two trajectories
    against the explicit Gronwall bound from their data differences.

    Caveat (attached to the report): the discrete trajectories stand in for
    the exact solutions; run at tau values where self-convergence has
    plateaued below the margin.
    """
    t1, t2 = run1.traj, run2.traj
    V, V0 = t1.spaces
    if t2.spaces[0].mesh is not V.mesh:
        raise ValueError("runs must share one mesh")
    if abs(t1.tau - t2.tau) > 1e-14:
        raise ValueError("runs must share tau")
    nu = run1.nu
    n = t1.n_steps
    w = step_weights(t1.tau, t1.T, n)
    mesh = V.mesh

    a1_slices = t1.coeff_slices["a"]
    Ma0 = V0.restrict(fem.mass_matrix(mesh, a1_slices.slices[0]))

    dz0 = t1.z[0] - t2.z[0]
    dp0 = t1.p[0] - t2.p[0]
    init = (V.h_norm(dp0) ** 2 + max(float(dz0 @ (Ma0 @ dz0)), 0.0))

    lhs = init
    acc = 0.0
    for i in range(1, n + 1):
        dp = t1.p[i] - t2.p[i]
        dz = t1.z[i] - t2.z[i]
        Mai = V0.restrict(fem.mass_matrix(mesh, a1_slices.slices[i]))
        acc += w[i - 1] * (V.space_norm(dp) ** 2
                           + nu * V0.space_norm(dz) ** 2)
        lhs = max(lhs, V.h_norm(dp) ** 2
                  + max(float(dz @ (Mai @ dz)), 0.0) + acc)

    # forcing difference in the dual norms
    forc = 0.0
    rstar_int = 0.0
    for i in range(1, n + 1):
        h1, k1 = stepper.forcing_loads(t1.spaces, t1.forcing, i)
        h2, k2 = stepper.forcing_loads(t2.spaces, t2.forcing, i)
        forc += w[i - 1] * (fem.dual_norm(h1 - h2, V) ** 2
                            + fem.dual_norm(k1 - k2, V0) ** 2)
        rstar_int += w[i - 1] * r_star(t2, run1.sextet, run2.sextet,
                                       min(i * t1.tau, t1.T))

    cs = consts1.c_star
    expo = 3.0 * cs * t1.T
    base = init + 2.0 * cs * (forc + rstar_int)
    rhs = safe_exp(expo) * base if base > 0 else 0.0
    # overflow-safe verdict in log space when the plain product overflows
    if not math.isfinite(rhs) and base > 0:
        log_rhs = expo + math.log(base)
        if lhs <= 0 or math.log(lhs) <= log_rhs:
            rhs = math.inf
    return EstimateReport(
        "continuous_dependence", lhs, rhs,
        {"c_star": cs, "T": t1.T, "tau": t1.tau, "init_term": init,
         "forcing_term": forc, "rstar_integral": rstar_int},
        notes="discrete trajectories stand in for the exact solutions")


# --------------------------------------------------------------------------
# norm sandwich of the solution operator
# --------------------------------------------------------------------------

def check_isomorphism_sandwich(traj, consts):
    """Two-sided bound: data norm and solution norm control each other with
    the explicit constants 1/M0 and M1*."""
    V, V0 = traj.spaces
    p0, z0 = traj.initial
    data_sq = (V.h_norm(p0) ** 2 + V0.h_norm(z0) ** 2
               + forcing_y_norm_sq(traj))
    data = math.sqrt(data_sq)

    vp, dvp = w12_dual_seminorms(V, traj.p, traj.tau, traj.T)
    vz, dvz = w12_dual_seminorms(V0, traj.z, traj.tau, traj.T)
    z_part = math.sqrt(vp + dvp + vz + dvz
                       + forward_norm_sq_sum(V, traj.p, traj.tau, traj.T)
                       + forward_norm_sq_sum(V0, traj.z, traj.tau, traj.T))
    c_part = max(math.sqrt(V.h_norm(traj.p[i]) ** 2
                           + V0.h_norm(traj.z[i]) ** 2)
                 for i in range(traj.n_steps + 1))
    sol = z_part + c_part

    m0_star = 1.0 / consts.m0
    grow = safe_exp(1.5 * consts.c0_star * traj.T)
    m1_star = (4.0 * consts.m1 * (1.0 + traj.T)
               * (1.0 + consts.cHVstar + consts.cHV0star)
               * (1.0 + consts.c0_star * grow))
    lower = EstimateReport("sandwich_lower", m0_star * data, sol,
                           {"m0_star": m0_star, "m0": consts.m0})
    upper = EstimateReport("sandwich_upper", sol, m1_star * data,
                           {"m1_star": m1_star, "m1": consts.m1})
    combined = EstimateReport(
        "isomorphism_sandwich",
        max(m0_star * data - sol, sol - m1_star * data, 0.0)
        if math.isfinite(m1_star) else max(m0_star * data - sol, 0.0),
        0.0,
        {"m0_star": m0_star, "m1_star": m1_star, "data_norm": data,
         "solution_norm": sol})
    combined.notes = "lower pass %s, upper pass %s" % (lower.passed,
                                                       upper.passed)
    return lower, upper, combined


# --------------------------------------------------------------------------
# oracle solvers
# --------------------------------------------------------------------------

def dense_oracle_step(sys):
    """Independent step solve: densify and use pivoted elimination."""
    n = sys.matrix.shape[0]
    if n > 200:
        raise ValueError("dense oracle is capped at 200 dofs (got %d)" % n)
    x = np.linalg.solve(sys.matrix.toarray(), sys.rhs)
    return sys.split(x)


def minimize_energy_oracle(sys, start=None, iterations=500000, gtol=1e-8):
    """Gradient descent with backtracking on the step energy.

    Independent of the linear solver; converges to the unique minimizer for
    steps below the threshold.  Returns (p, z, accepted iterate count).
    """
    n = sys.matrix.shape[0]
    x = np.zeros(n) if start is None else np.array(start, dtype=float)
    step = 1.0
    for it in range(iterations):
        g = sys.matrix @ x - sys.rhs
        gn2 = float(g @ g)
        if math.sqrt(gn2) <= gtol:
            p, z = sys.split(x)
            return p, z, it
        Ag = sys.matrix @ g
        gAg = float(g @ Ag)
        accepted = False
        while step > 1e-18:
            # energy change along -g, evaluated in closed form to avoid
            # cancellation:  E(x - s g) - E(x) = -s |g|^2 + s^2/2 g^T A g
            delta = -step * gn2 + 0.5 * step ** 2 * gAg
            if delta < -1e-4 * step * gn2:          # Armijo decrease
                x = x - step * g
                step *= 2.0
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    g = sys.matrix @ x - sys.rhs
    if float(np.linalg.norm(g)) <= gtol:
        p, z = sys.split(x)
        return p, z, iterations
    raise RuntimeError("energy descent hit the iteration cap before reaching "
                       "gradient norm %.1e" % gtol)


# --------------------------------------------------------------------------
# tau-refinement study
# --------------------------------------------------------------------------

def _errors_vs_reference(traj, ref_p_at, ref_z_at):
    """(C([0,T];H), L^2(0,T;H), V-type) errors of a trajectory against
    reference dof-vector callables of t."""
    V, V0 = traj.spaces
    n = traj.n_steps
    w = step_weights(traj.tau, traj.T, n)
    e_ch = 0.0
    e_h_sq = 0.0
    e_v_sq = 0.0
    prev_sq = None
    for i in range(n + 1):
        t = min(i * traj.tau, traj.T)
        dp = traj.p[i] - ref_p_at(t)
        dz = traj.z[i] - ref_z_at(t)
        sq = V.h_norm(dp) ** 2 + V0.h_norm(dz) ** 2
        e_ch = max(e_ch, math.sqrt(sq))
        if i >= 1:
            e_h_sq += w[i - 1] * 0.5 * (sq + prev_sq)
            e_v_sq += w[i - 1] * (V.space_norm(dp) ** 2
                                  + V0.space_norm(dz) ** 2)
        prev_sq = sq
    return e_ch, math.sqrt(e_h_sq), math.sqrt(e_v_sq)


def tau_refinement_study(make_run, taus, exact=None):
    """Errors of the scheme under tau refinement.

    make_run : callable tau -> DiscreteTrajectory (one shared mesh).
    taus : strictly decreasing step sizes (at least 3, halving preferred).
    exact : optional pair of callables t -> dof vectors (p, z); without it
        errors are measured against the finest run and Cauchy differences
        between consecutive runs are reported.
    """
    taus = list(taus)
    if len(taus) < 3:
        raise ValueError("need at least 3 tau values")
    if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])):
        raise ValueError("taus must be strictly decreasing")
    runs = [make_run(tau) for tau in taus]

    if exact is not None:
        ref_p, ref_z = exact
    else:
        finest = runs[-1]

        def ref_p(t):
            return fields.interpolate_sequence(finest.p, finest.tau,
                                               finest.T, "linear", t)

        def ref_z(t):
            return fields.interpolate_sequence(finest.z, finest.tau,
                                               finest.T, "linear", t)

    rows = []
    prev_run = None
    for tau, run in zip(taus, runs):
        e_ch, e_h, e_v = _errors_vs_reference(run, ref_p, ref_z)
        cauchy = math.nan
        if prev_run is not None:
            def pp(t, r=prev_run):
                return fields.interpolate_sequence(r.p, r.tau, r.T,
                                                   "linear", t)

            def pz(t, r=prev_run):
                return fields.interpolate_sequence(r.z, r.tau, r.T,
                                                   "linear", t)
            c_ch, _, _ = _errors_vs_reference(run, pp, pz)
            cauchy = c_ch
        rows.append({"tau": tau, "err_CH": e_ch, "err_H": e_h,
                     "err_V": e_v, "cauchy_CH": cauchy})
        prev_run = run
    for prev, cur in zip(rows, rows[1:]):
        cur["ratio_CH"] = (prev["err_CH"] / cur["err_CH"]
                           if cur["err_CH"] > 0 else math.inf)
    rows[0]["ratio_CH"] = math.nan
    cols = ["tau", "err_CH", "err_H", "err_V", "cauchy_CH", "ratio_CH"]
    return ConvergenceTable(cols, rows)
