###############################################################################
#     MANUFACTURED SOLUTIONS AND NAMED ANALYTIC FIELDS FOR CONFIG FILES      #
###############################################################################
#
# The manufactured-solution entries carry closed-form value / gradient /
# Laplacian / time derivative, so forcing terms can be derived pointwise and
# solver error measured against a known solution.  Coefficients are constant
# for these entries; the general solver accepts arbitrary fields.

import math
from dataclasses import dataclass

import numpy as np

from . import fields


@dataclass
class MmsEntry:
    """Closed-form solution pair (p, z) with z vanishing on the boundary and
    p with vanishing normal derivative."""
    name: str
    dim: int
    p: callable            # (t, x) -> scalar
    p_t: callable
    p_grad: callable        # (t, x) -> (dim,) array
    p_lap: callable
    z: callable
    z_t: callable
    z_grad: callable
    z_hess: callable        # (t, x) -> (dim, dim) array


def _sin_1d():
    pi = math.pi

    def p(t, x):
        return math.cos(pi * x[0]) * math.exp(-t)

    def p_t(t, x):
        return -p(t, x)

    def p_grad(t, x):
        return np.array([-pi * math.sin(pi * x[0]) * math.exp(-t)])

    def p_lap(t, x):
        return -pi ** 2 * p(t, x)

    def z(t, x):
        return math.sin(pi * x[0]) * math.exp(-t)

    def z_t(t, x):
        return -z(t, x)

    def z_grad(t, x):
        return np.array([pi * math.cos(pi * x[0]) * math.exp(-t)])

    def z_hess(t, x):
        return np.array([[-pi ** 2 * z(t, x)]])

    return MmsEntry("sin_1d", 1, p, p_t, p_grad, p_lap, z, z_t, z_grad,
                    z_hess)


def _poly_1d():
    def p(t, x):
        s = x[0]
        return s * s * (1 - s) ** 2 * math.exp(-t)

    def p_t(t, x):
        return -p(t, x)

    def p_grad(t, x):
        s = x[0]
        return np.array([(2 * s - 6 * s ** 2 + 4 * s ** 3) * math.exp(-t)])

    def p_lap(t, x):
        s = x[0]
        return (2 - 12 * s + 12 * s ** 2) * math.exp(-t)

    def z(t, x):
        return x[0] * (1 - x[0]) * math.exp(-t)

    def z_t(t, x):
        return -z(t, x)

    def z_grad(t, x):
        return np.array([(1 - 2 * x[0]) * math.exp(-t)])

    def z_hess(t, x):
        return np.array([[-2.0 * math.exp(-t)]])

    return MmsEntry("poly_1d", 1, p, p_t, p_grad, p_lap, z, z_t, z_grad,
                    z_hess)


def _sin_2d():
    pi = math.pi

    def p(t, x):
        return math.cos(pi * x[0]) * math.cos(pi * x[1]) * math.exp(-t)

    def p_t(t, x):
        return -p(t, x)

    def p_grad(t, x):
        e = math.exp(-t)
        return np.array([
            -pi * math.sin(pi * x[0]) * math.cos(pi * x[1]) * e,
            -pi * math.cos(pi * x[0]) * math.sin(pi * x[1]) * e])

    def p_lap(t, x):
        return -2 * pi ** 2 * p(t, x)

    def z(t, x):
        return math.sin(pi * x[0]) * math.sin(pi * x[1]) * math.exp(-t)

    def z_t(t, x):
        return -z(t, x)

    def z_grad(t, x):
        e = math.exp(-t)
        return np.array([
            pi * math.cos(pi * x[0]) * math.sin(pi * x[1]) * e,
            pi * math.sin(pi * x[0]) * math.cos(pi * x[1]) * e])

    def z_hess(t, x):
        e = math.exp(-t)
        s = math.sin(pi * x[0]) * math.sin(pi * x[1]) * e
        c = math.cos(pi * x[0]) * math.cos(pi * x[1]) * e
        return np.array([[-pi ** 2 * s, pi ** 2 * c],
                         [pi ** 2 * c, -pi ** 2 * s]])

    return MmsEntry("sin_2d", 2, p, p_t, p_grad, p_lap, z, z_t, z_grad,
                    z_hess)


MMS_ENTRIES = {e.name: e for e in (_sin_1d(), _poly_1d(), _sin_2d())}


def constant_sextet(mesh, a=1.0, b=0.0, mu=0.0, lam=0.0, omega=None, A=None,
                    T=0.0):
    """Sextet of space-time-constant coefficients on a mesh."""
    d = mesh.dim
    n = mesh.n_nodes
    omega = np.zeros(d) if omega is None else np.asarray(omega, dtype=float)
    A = np.eye(d) if A is None else np.asarray(A, dtype=float)
    mk = fields.SpaceTimeField.constant
    return fields.CoefficientSextet(
        mesh,
        a=mk(float(a), n, T), b=mk(float(b), n, T), mu=mk(float(mu), n, T),
        lam=mk(float(lam), n, T), omega=mk(omega, n, T), A=mk(A, n, T))


def mms_forcing(entry, mesh, nu, T, n_times, a=1.0, b=0.0, mu=0.0, lam=0.0,
                omega=None, A=None):
    """Forcing pair [h, k] that makes (entry.p, entry.z) the exact solution
    for the given constant coefficients.

    h = p_t - lap p + mu p + lam p + omega . grad z
    k = a z_t + b z - A : hess z - nu lap z - omega . grad p
    """
    d = entry.dim
    if mesh.dim != d:
        raise ValueError("entry dimension %d does not match mesh" % d)
    omega = np.zeros(d) if omega is None else np.asarray(omega, dtype=float)
    A = np.eye(d) if A is None else np.asarray(A, dtype=float)
    bnd = mesh.nodes[mesh.boundary_nodes]
    worst = max(abs(entry.z(t, x)) for t in np.linspace(0, max(T, 1e-9), 5)
                for x in bnd)
    if worst > 1e-10:
        raise ValueError("catalog z does not satisfy the Dirichlet "
                         "condition (boundary magnitude %.3g)" % worst)

    def h(t, x):
        return (entry.p_t(t, x) - entry.p_lap(t, x)
                + (mu + lam) * entry.p(t, x)
                + float(omega @ entry.z_grad(t, x)))

    def k(t, x):
        H = entry.z_hess(t, x)
        return (a * entry.z_t(t, x) + b * entry.z(t, x)
                - float(np.tensordot(A, H)) - nu * float(np.trace(H))
                - float(omega @ entry.p_grad(t, x)))

    h_field = fields.SpaceTimeField.from_analytic("scalar", h, mesh.nodes,
                                                  T, n_times)
    k_field = fields.SpaceTimeField.from_analytic("scalar", k, mesh.nodes,
                                                  T, n_times)
    return h_field, k_field


def mms_initial(entry, mesh):
    """Nodal samples of the exact solution at t = 0."""
    p0 = np.array([entry.p(0.0, x) for x in mesh.nodes])
    z0 = np.array([entry.z(0.0, x) for x in mesh.nodes])
    return p0, z0


def mms_exact_dofs(entry, spaces):
    """Callables t -> dof vectors of the exact solution (nodal samples)."""
    V, V0 = spaces
    nodes = V.mesh.nodes

    def p_at(t):
        return np.array([entry.p(t, x) for x in nodes])[V.dofs]

    def z_at(t):
        return np.array([entry.z(t, x) for x in nodes])[V0.dofs]

    return p_at, z_at


# --------------------------------------------------------------------------
# named analytic expressions usable from config files
# --------------------------------------------------------------------------

def _expr_scalar(fn):
    return ("scalar", fn)


EXPRESSIONS = {
    "zero": _expr_scalar(lambda t, x: 0.0),
    "one": _expr_scalar(lambda t, x: 1.0),
    "ramp_t": _expr_scalar(lambda t, x: 1.0 + 0.5 * t),
    "bump": _expr_scalar(
        lambda t, x: 1.0 + 0.5 * math.exp(-8.0 * float(np.sum((np.asarray(x)
                                                               - 0.5) ** 2)))),
    "sin_x": _expr_scalar(lambda t, x: math.sin(math.pi * x[0])),
    "cos_x": _expr_scalar(lambda t, x: math.cos(math.pi * x[0])),
    "sin_xt": _expr_scalar(
        lambda t, x: math.sin(math.pi * x[0]) * math.exp(-t)),
    "poly_x": _expr_scalar(lambda t, x: x[0] * (1.0 - x[0])),
}


def expression(name):
    try:
        return EXPRESSIONS[name]
    except KeyError:
        raise KeyError("unknown catalog expression %r (available: %s)"
                       % (name, ", ".join(sorted(EXPRESSIONS))))
