###############################################################################
#              ONE IMPLICIT STEP AND THE FULL TIME-MARCHING SCHEME            #
###############################################################################
#
# Each step of the semi-implicit scheme solves the symmetric block system
#
#   [ M/tau + K + M_mu + M_lam        B_omega        ] [p_i]   [M/tau p_{i-1} + h_i]
#   [ B_omega^T          M_a/tau + M_b + K_A + nu K0 ] [z_i] = [M_a/tau z_{i-1} + k_i]
#
# which is exactly the stationarity system of the quadratic step energy
# E(p, z); below the step threshold the matrix is positive definite and the
# solution is the unique minimizer of E.

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import fem, fields


class TauGuardError(RuntimeError):
    """Raised when a step is requested at tau >= tau_star without override."""

    def __init__(self, tau, tau_star):
        super().__init__(
            "time step tau = %.6g is not below the stability threshold "
            "tau_star = %.6g; the step system is only guaranteed coercive "
            "for tau < tau_star (override to proceed anyway)" % (tau, tau_star))
        self.tau = tau
        self.tau_star = tau_star


class IndefiniteStepError(RuntimeError):
    """Negative curvature detected: tau is at or above the effective
    stability bound of this step system."""


class SolverConvergenceError(RuntimeError):
    pass


@dataclass
class StepSystem:
    matrix: sp.csr_matrix          # full symmetric block matrix
    rhs: np.ndarray
    tau: float
    nu: float
    slice_index: int
    n_p: int
    n_z: int
    const_term: float              # (1/2tau)(|p_prev|_H^2 + |sqrt(a) z_prev|_H^2)
    blocks: dict = dc_field(default_factory=dict)

    def split(self, x):
        return x[:self.n_p], x[self.n_p:]

    def join(self, p, z):
        return np.concatenate([np.asarray(p, float), np.asarray(z, float)])


def slice_sextet(sextet, tau, mode="point"):
    """Per-step slices of all six coefficients (same tau and mode)."""
    return {name: fields.discretize_time(f, tau, mode)
            for name, f in sextet.fields().items()}


@dataclass
class ForcingSlices:
    """Sliced forcing pair: L^2 densities h, k plus optional divergence-form
    parts (vector fields g with functional v -> int g . grad v)."""
    h: fields.TimeSlices
    k: fields.TimeSlices
    gh: fields.TimeSlices = None
    gk: fields.TimeSlices = None

    @property
    def tau(self):
        return self.h.tau


def slice_forcing(h_field, k_field, tau, mode="average", gh_field=None,
                  gk_field=None):
    return ForcingSlices(
        h=fields.discretize_time(h_field, tau, mode),
        k=fields.discretize_time(k_field, tau, mode),
        gh=None if gh_field is None else
        fields.discretize_time(gh_field, tau, mode),
        gk=None if gk_field is None else
        fields.discretize_time(gk_field, tau, mode))


def forcing_loads(spaces, forcing, i):
    """FE load vectors of the forcing slices at step index i."""
    V, V0 = spaces
    mesh = V.mesh
    h_load = fem.load_density(mesh, forcing.h.slices[i])
    if forcing.gh is not None:
        h_load = h_load + fem.load_divergence(mesh, forcing.gh.slices[i])
    k_load = fem.load_density(mesh, forcing.k.slices[i])
    if forcing.gk is not None:
        k_load = k_load + fem.load_divergence(mesh, forcing.gk.slices[i])
    return h_load[V.dofs], k_load[V0.dofs]


def assemble_step_system(spaces, coeff_slices, i, prev, tau, nu,
                         h_load=None, k_load=None, tau_star=None,
                         override=False):
    """Assemble the block system of step i from the sliced coefficients.

    prev is the previous state (p_{i-1}, z_{i-1}) as dof vectors; h_load and
    k_load are already-restricted load vectors (defaults: zero forcing).
    When tau_star is supplied the guard tau < tau_star is enforced unless
    override is set.
    """
    if tau_star is not None and tau >= tau_star and not override:
        raise TauGuardError(tau, tau_star)
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

    App = (M / tau + K + M_mu + M_lam).tocsr()
    Azz = (M_a / tau + M_b + K_A + nu * K0).tocsr()
    full = sp.bmat([[App, B], [B.T, Azz]], format="csr")

    p_prev, z_prev = prev
    p_prev = np.asarray(p_prev, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    if h_load is None:
        h_load = np.zeros(V.n_dofs)
    if k_load is None:
        k_load = np.zeros(V0.n_dofs)
    rhs = np.concatenate([M @ p_prev / tau + h_load,
                          M_a @ z_prev / tau + k_load])
    const = 0.5 / tau * (float(p_prev @ (M @ p_prev))
                         + float(z_prev @ (M_a @ z_prev)))
    return StepSystem(matrix=full, rhs=rhs, tau=tau, nu=nu, slice_index=i,
                      n_p=V.n_dofs, n_z=V0.n_dofs, const_term=const,
                      blocks={"App": App, "Azz": Azz, "B": B, "M": M,
                              "M_a": M_a})


def pcg(A, b, tol=1e-10, maxiter=None, x0=None):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Monitors curvature: non-positive p^T A p aborts with
    IndefiniteStepError.  Returns (x, iterations, relative residual).
    """
    n = A.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    d = A.diagonal()
    if np.any(d <= 0):
        raise IndefiniteStepError(
            "non-positive diagonal entry: step matrix is not positive "
            "definite (tau is at or above the effective stability bound)")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    k = 0
    while np.linalg.norm(r) > tol * bnorm and k < maxiter:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteStepError(
                "negative curvature in CG: tau is at or above the effective "
                "stability bound of this step")
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        k += 1
    relres = float(np.linalg.norm(r)) / bnorm
    if relres > tol:
        raise SolverConvergenceError(
            "CG did not reach tolerance %.3g in %d iterations (residual %.3g)"
            % (tol, maxiter, relres))
    return x, k, relres


def solve_step(sys, tol=1e-10, x0=None):
    """Solve one step system; returns (p, z, info)."""
    x, iters, relres = pcg(sys.matrix, sys.rhs, tol=tol, x0=x0)
    p, z = sys.split(x)
    info = {"iterations": iters, "residual": relres}
    return p, z, info


def energy(p, z, sys):
    """The quadratic step energy whose stationarity system is the step."""
    x = sys.join(p, z)
    if x.shape != sys.rhs.shape:
        raise ValueError("dof vector shape mismatch")
    return (0.5 * float(x @ (sys.matrix @ x)) - float(sys.rhs @ x)
            + sys.const_term)


def energy_gradient(p, z, sys):
    """Gradient of the step energy: (block matrix) x - rhs."""
    x = sys.join(p, z)
    if x.shape != sys.rhs.shape:
        raise ValueError("dof vector shape mismatch")
    return sys.matrix @ x - sys.rhs


@dataclass
class DiscreteTrajectory:
    tau: float
    T: float
    nu: float
    p: np.ndarray                  # (n_steps+1, n_p_dofs)
    z: np.ndarray                  # (n_steps+1, n_z_dofs)
    diagnostics: list
    spaces: tuple                  # (V, V0)
    coeff_slices: dict
    forcing: ForcingSlices
    initial: tuple                 # projected (p0, z0) dof vectors

    @property
    def n_steps(self):
        return self.p.shape[0] - 1

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.tau


def project_initial(spaces, p0_nodal, z0_nodal):
    """Nodal injection of the initial data (z0 zeroed on the boundary)."""
    V, V0 = spaces
    p0 = np.asarray(p0_nodal, dtype=float)[V.dofs]
    z0 = np.asarray(z0_nodal, dtype=float)[V0.dofs]
    return p0, z0


def run_scheme(spaces, coeff_slices, forcing, initial, tau, nu, T,
               tol=1e-10, tau_star=None, override=False):
    """March the scheme over [0, T]; returns a DiscreteTrajectory.

    initial is the projected dof pair (p0, z0).  Any step failure aborts
    with the failing index attached.
    """
    n = fields.n_steps(T, tau)
    p0, z0 = initial
    p_states = [np.array(p0, dtype=float)]
    z_states = [np.array(z0, dtype=float)]
    diagnostics = []
    for i in range(1, n + 1):
        h_load, k_load = forcing_loads(spaces, forcing, i)
        sys = assemble_step_system(spaces, coeff_slices, i,
                                   (p_states[-1], z_states[-1]), tau, nu,
                                   h_load=h_load, k_load=k_load,
                                   tau_star=tau_star, override=override)
        try:
            p, z, info = solve_step(sys, tol=tol)
        except (IndefiniteStepError, SolverConvergenceError) as exc:
            raise type(exc)("step %d failed: %s" % (i, exc)) from exc
        diagnostics.append({"step": i, "t": i * tau,
                            "energy": energy(p, z, sys), **info})
        p_states.append(p)
        z_states.append(z)
    return DiscreteTrajectory(tau=tau, T=T, nu=nu,
                              p=np.asarray(p_states), z=np.asarray(z_states),
                              diagnostics=diagnostics, spaces=spaces,
                              coeff_slices=coeff_slices, forcing=forcing,
                              initial=(np.array(p0), np.array(z0)))


def trajectory_interpolants(traj, kind, t):
    """Forward/backward/linear reconstruction of the state pair at time t."""
    p = fields.interpolate_sequence(traj.p, traj.tau, traj.T, kind, t)
    z = fields.interpolate_sequence(traj.z, traj.tau, traj.T, kind, t)
    return p, z


def export_trajectory_csv(traj, path):
    """Per-step records (i, t_i, |p_i|_H, |z_i|_H, E_i, iterations)."""
    V, V0 = traj.spaces
    with open(path, "w") as fh:
        fh.write("step,t,p_H_norm,z_H_norm,energy,iterations\n")
        for i in range(traj.n_steps + 1):
            if i == 0:
                e, it = math.nan, 0
            else:
                d = traj.diagnostics[i - 1]
                e, it = d["energy"], d["iterations"]
            fh.write("%d,%.12e,%.12e,%.12e,%.12e,%d\n"
                     % (i, i * traj.tau, V.h_norm(traj.p[i]),
                        V0.h_norm(traj.z[i]), e, it))
