###############################################################################
#   COEFFICIENT CONSTRUCTION FROM GRAIN-BOUNDARY PHASE FIELDS (eta, theta)    #
###############################################################################
#
# The linearized and adjoint systems of the regularized grain-boundary model
# reduce to the coupled parabolic pair with coefficients built pointwise from
# a phase-field pair (eta, theta) through the mobilities alpha, alpha0, the
# perturbation g, and the regularized Euclidean norm
#
#       f_eps(xi) = sqrt(eps^2 + |xi|^2),
#
# whose gradient and Hessian are closed-form and whose Hessian is symmetric
# positive definite (smallest eigenvalue eps^2 / f_eps^3).

from dataclasses import dataclass

import numpy as np

from . import fields


class BuilderError(ValueError):
    pass


def f_eps(xi, eps):
    """Value, gradient and Hessian of the regularized norm at one point or
    at a batch of points (last axis is the vector dimension)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = xi[None, :] if single else xi
    val = np.sqrt(eps ** 2 + np.sum(pts ** 2, axis=-1))
    grad = pts / val[..., None]
    d = pts.shape[-1]
    eye = np.eye(d)
    hess = (val[..., None, None] ** 2 * eye
            - pts[..., :, None] * pts[..., None, :]) / val[..., None, None] ** 3
    if single:
        return float(val[0]), grad[0], hess[0]
    return val, grad, hess


@dataclass
class ModelFunctions:
    """Model ingredients: perturbation g, mobility alpha (with derivatives),
    time mobility alpha0 (with its time derivative when time-dependent), and
    the regularization parameter of f_eps."""
    g: callable = staticmethod(lambda r: r)
    gp: callable = staticmethod(lambda r: 1.0)
    alpha: callable = staticmethod(lambda r: 0.01 + r ** 2)
    alphap: callable = staticmethod(lambda r: 2.0 * r)
    alphapp: callable = staticmethod(lambda r: 2.0)
    alpha0: fields.SpaceTimeField = None      # None means alpha0 == 1
    alpha0_dt: fields.SpaceTimeField = None
    eps: float = 0.05


@dataclass
class PhaseFieldPair:
    eta: fields.SpaceTimeField
    theta: fields.SpaceTimeField
    dirichlet_theta: bool = True

    def __post_init__(self):
        if self.eta.kind != "scalar" or self.theta.kind != "scalar":
            raise BuilderError("eta and theta must be scalar fields")
        if self.eta.values.shape != self.theta.values.shape:
            raise BuilderError("eta and theta must share one lattice")

    def check_dirichlet(self, mesh, tol=1e-10):
        worst = float(np.abs(
            self.theta.values[:, mesh.boundary_nodes]).max())
        if worst > tol:
            raise BuilderError("theta magnitude %.3g on the boundary" % worst)


def _alpha0_samples(funcs, times, n_nodes, nodes):
    if funcs.alpha0 is None:
        return np.ones((len(times), n_nodes))
    return np.array([funcs.alpha0.at_time(t, nodes) for t in times])


def _build_fields(pair, funcs, mesh, reverse):
    """Shared core of both builders: pointwise coefficient construction,
    optionally on the time-reversed lattice."""
    eta_vals = pair.eta.values
    theta_vals = pair.theta.values
    times = pair.eta.times
    T = pair.eta.T
    n_t, n_n = eta_vals.shape
    d = mesh.dim
    if n_n != mesh.n_nodes:
        raise BuilderError("phase fields not sampled on the mesh nodes")

    idx = np.arange(n_t)[::-1] if reverse else np.arange(n_t)

    vec = np.vectorize
    app = vec(funcs.alphapp)(eta_vals[idx])
    if np.min(app) < 0:
        j = np.unravel_index(np.argmin(app), app.shape)
        raise BuilderError(
            "alpha'' < 0 at time index %d, node %d (value %.6g): the "
            "reaction coefficient mu would be negative" % (j[0], j[1],
                                                           app[j]))
    al = vec(funcs.alpha)(eta_vals[idx])
    alp = vec(funcs.alphap)(eta_vals[idx])
    gp = vec(funcs.gp)(eta_vals[idx])

    mu = np.empty((n_t, n_n))
    omega = np.empty((n_t, n_n, d))
    A = np.empty((n_t, n_n, d, d))
    for row, j in enumerate(idx):
        grads = mesh.nodal_gradients(theta_vals[j])        # (n, d)
        val, grad, hess = f_eps(grads, funcs.eps)
        mu[row] = app[row] * val
        omega[row] = alp[row][:, None] * grad
        A[row] = al[row][:, None, None] * hess

    a0 = _alpha0_samples(funcs, times, n_n, mesh.nodes)
    a_vals = a0[idx] if reverse else a0

    if reverse:
        if funcs.alpha0 is None:
            b_vals = np.zeros((n_t, n_n))
        elif funcs.alpha0_dt is not None:
            b_vals = np.array([funcs.alpha0_dt.at_time(T - t, mesh.nodes)
                               for t in times])
        elif len(funcs.alpha0.times) == 1:
            b_vals = np.zeros((n_t, n_n))
        else:
            raise BuilderError("time-dependent alpha0 needs alpha0_dt for "
                               "the adjoint construction")
    else:
        b_vals = np.zeros((n_t, n_n))

    mk = fields.SpaceTimeField
    sextet = fields.CoefficientSextet(
        mesh,
        a=mk("scalar", a_vals, times),
        b=mk("scalar", b_vals, times),
        mu=mk("scalar", mu, times),
        lam=mk("scalar", gp, times),
        omega=mk("vector", omega, times),
        A=mk("matrix", A, times))
    initial = (np.zeros(n_n), np.zeros(n_n))
    return sextet, initial


def build_linearized(pair, funcs, mesh):
    """Coefficients of the linearized system at the phase-field pair:
    a = alpha0, b = 0, mu = alpha''(eta) f_eps(grad theta),
    lam = g'(eta), omega = alpha'(eta) grad f_eps(grad theta),
    A = alpha(eta) hess f_eps(grad theta); zero initial data."""
    return _build_fields(pair, funcs, mesh, reverse=False)


def build_adjoint(pair, funcs, mesh):
    """Adjoint-system coefficients: every field of the linearized system
    time-reversed (t -> T - t), plus b(t) = d/dt alpha0 at time T - t;
    zero initial data."""
    return _build_fields(pair, funcs, mesh, reverse=True)
