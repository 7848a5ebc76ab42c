###############################################################################
#        SPACE-TIME COEFFICIENT FIELDS, ADMISSIBILITY, SCHEME CONSTANTS       #
###############################################################################
#
# The coupled system carries six coefficients [a, b, mu, lam, omega, A],
# a forcing pair [h, k] and initial data [p0, z0].  Everything is represented
# as a SpaceTimeField: nodal samples on a mesh x a uniform time grid, with an
# optional closed-form evaluator.  This module validates the admissibility
# class (a bounded away from zero, mu >= 0, A symmetric positive, the rest
# bounded), slices fields in time for the marching scheme, reconstructs the
# forward/backward/linear interpolants, and evaluates every explicit constant
# of the stability and continuous-dependence estimates.

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import fem


class FieldShapeError(ValueError):
    pass


class AdmissibilityError(ValueError):
    pass


_KINDS = ("scalar", "vector", "matrix")


class SpaceTimeField:
    """Nodal samples of a scalar/vector/matrix field on mesh-nodes x times.

    Parameters
    ----------
    kind : {'scalar', 'vector', 'matrix'}
    values : array
        shape (n_times, n_nodes) for scalars, (n_times, n_nodes, N) for
        vectors, (n_times, n_nodes, N, N) for matrices.
    times : array
        uniform grid 0 = t_0 < ... < t_M = T (a single instant means
        time-constant data).
    analytic : callable, optional
        (t, x) -> value, evaluated on the node coordinates when provided.
    """

    def __init__(self, kind, values, times, analytic=None):
        if kind not in _KINDS:
            raise FieldShapeError("unknown field kind %r" % (kind,))
        self.kind = kind
        self.values = np.asarray(values, dtype=float)
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        self.analytic = analytic
        ndim = {"scalar": 2, "vector": 3, "matrix": 4}[kind]
        if self.values.ndim != ndim:
            raise FieldShapeError("values for kind %r must have %d axes"
                                  % (kind, ndim))
        if kind == "matrix" and self.values.shape[-1] != self.values.shape[-2]:
            raise FieldShapeError("matrix samples must be square")
        if kind != "scalar" and self.values.shape[2] not in (1, 2, 3):
            raise FieldShapeError("spatial dimension must be 1, 2 or 3")
        if self.values.shape[0] != len(self.times):
            raise FieldShapeError("time axis does not match the time grid")
        if not np.all(np.isfinite(self.values)):
            raise FieldShapeError("non-finite sample")
        if len(self.times) > 1:
            dts = np.diff(self.times)
            if not (np.all(dts > 0) and np.allclose(dts, dts[0], rtol=1e-9)):
                raise FieldShapeError("time grid must be uniform increasing")

    @classmethod
    def from_analytic(cls, kind, fn, nodes, T, n_times):
        """Sample (t, x) -> value on nodes x a uniform grid of n_times+1."""
        times = np.linspace(0.0, T, n_times + 1) if n_times > 0 \
            else np.array([0.0])
        samples = np.array([np.asarray([fn(t, x) for x in nodes], dtype=float)
                            for t in times])
        return cls(kind, samples, times, analytic=fn)

    @classmethod
    def constant(cls, value, n_nodes, T=0.0):
        """Time-constant field from a scalar/vector/matrix value."""
        v = np.asarray(value, dtype=float)
        kind = {0: "scalar", 1: "vector", 2: "matrix"}[v.ndim]
        times = [0.0] if T == 0.0 else [0.0, T]
        samples = np.broadcast_to(v, (len(times), n_nodes) + v.shape).copy()
        return cls(kind, samples, times)

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def n_nodes(self):
        return self.values.shape[1]

    def at_time(self, t, nodes=None):
        """Field values at time t: analytic when available, otherwise the
        linear time-interpolation of the stored samples."""
        if self.analytic is not None and nodes is not None:
            return np.asarray([self.analytic(t, x) for x in nodes],
                              dtype=float)
        if len(self.times) == 1:
            return self.values[0]
        t = min(max(t, self.times[0]), self.times[-1])
        dt = self.times[1] - self.times[0]
        i = min(int(t / dt), len(self.times) - 2)
        w = (t - self.times[i]) / dt
        return (1 - w) * self.values[i] + w * self.values[i + 1]


def delta_star(field):
    """Minimum of a scalar field over all samples (lattice essential inf)."""
    if field.kind != "scalar":
        raise FieldShapeError("delta_star expects a scalar field")
    if field.values.size == 0:
        raise FieldShapeError("empty sample set")
    return float(field.values.min())


# --------------------------------------------------------------------------
# coefficient sextet and admissibility
# --------------------------------------------------------------------------

@dataclass
class ValidationReport:
    conditions: list
    norms: dict
    delta_star: float

    @property
    def ok(self):
        return all(c["passed"] for c in self.conditions)

    def to_text(self):
        lines = []
        for c in self.conditions:
            mark = "PASS" if c["passed"] else "FAIL"
            lines.append("%-36s %s  %s" % (c["name"], mark, c.get("detail", "")))
        lines.append("delta_star = %.12g" % self.delta_star)
        for k, v in sorted(self.norms.items()):
            lines.append("%-12s = %.12g" % (k, v))
        return "\n".join(lines) + "\n"


class CoefficientSextet:
    """The data [a, b, mu, lam, omega, A] on a common mesh/time grid."""

    def __init__(self, mesh, a, b, mu, lam, omega, A):
        self.mesh = mesh
        self.a, self.b, self.mu, self.lam = a, b, mu, lam
        self.omega, self.A = omega, A
        n = mesh.n_nodes
        d = mesh.dim
        for name, f, kind in (("a", a, "scalar"), ("b", b, "scalar"),
                              ("mu", mu, "scalar"), ("lam", lam, "scalar"),
                              ("omega", omega, "vector"), ("A", A, "matrix")):
            if f.kind != kind:
                raise FieldShapeError("%s must be a %s field" % (name, kind))
            if f.n_nodes != n:
                raise FieldShapeError("%s sampled on %d nodes, mesh has %d"
                                      % (name, f.n_nodes, n))
        if omega.values.shape[2] != d or A.values.shape[2] != d:
            raise FieldShapeError("vector/matrix dimension does not match mesh")
        self._norms = None

    def fields(self):
        return {"a": self.a, "b": self.b, "mu": self.mu, "lam": self.lam,
                "omega": self.omega, "A": self.A}

    # -- lattice norms -------------------------------------------------------
    def norms(self):
        if self._norms is not None:
            return self._norms
        mesh = self.mesh
        a = self.a
        a_inf = float(np.abs(a.values).max())
        grad_a_inf = 0.0
        for av in a.values:
            g = mesh.cell_gradients(av)
            grad_a_inf = max(grad_a_inf,
                             float(np.linalg.norm(g, axis=1).max()))
        if len(a.times) > 1:
            dt = a.times[1] - a.times[0]
            da_dt = float(np.abs(np.diff(a.values, axis=0)).max()) / dt
        else:
            da_dt = 0.0
        mass = fem.mass_matrix(mesh)
        mu_linfh = max(
            math.sqrt(max(float(v @ (mass @ v)), 0.0)) for v in self.mu.values)
        omega_inf = float(np.linalg.norm(self.omega.values, axis=2).max())
        As = self.A.values
        sym = 0.5 * (As + np.swapaxes(As, -1, -2))
        eigs = np.linalg.eigvalsh(sym.reshape(-1, As.shape[-1], As.shape[-1]))
        self._norms = {
            "a_inf": a_inf,
            "grad_a_inf": grad_a_inf,
            "da_dt_inf": da_dt,
            "a_w1inf": max(a_inf, grad_a_inf, da_dt),
            "b_inf": float(np.abs(self.b.values).max()),
            "mu_linfh": float(mu_linfh),
            "lam_inf": float(np.abs(self.lam.values).max()),
            "omega_inf": omega_inf,
            "A_inf": float(np.abs(eigs).max()),
            "A_min_eig": float(eigs.min()),
            "delta_star": delta_star(self.a),
        }
        return self._norms


def _argmin_witness(values):
    idx = np.unravel_index(np.argmin(values), values.shape)
    return "time index %d, node %d, value %.6g" % (
        idx[0], idx[1], values[idx])


def validate_sextet(sextet):
    """Check every admissibility condition; a report with per-condition
    pass/fail and the witnessing sample on failure."""
    norms = sextet.norms()
    conds = []

    def cond(name, passed, detail=""):
        conds.append({"name": name, "passed": bool(passed), "detail": detail})

    cond("a in W^{1,inf}", np.all(np.isfinite(sextet.a.values)),
         "|a|_W1inf = %.6g" % norms["a_w1inf"])
    amin = norms["delta_star"]
    cond("log a in L^inf", amin > 0.0,
         "" if amin > 0 else _argmin_witness(sextet.a.values))
    cond("b in L^inf", np.isfinite(norms["b_inf"]),
         "|b|_inf = %.6g" % norms["b_inf"])
    mu_min = float(sextet.mu.values.min())
    cond("mu in L^inf(0,T;H), mu >= 0", mu_min >= 0.0,
         "" if mu_min >= 0 else _argmin_witness(sextet.mu.values))
    cond("lambda in L^inf", np.isfinite(norms["lam_inf"]),
         "|lambda|_inf = %.6g" % norms["lam_inf"])
    cond("omega in L^inf", np.isfinite(norms["omega_inf"]),
         "|omega|_inf = %.6g" % norms["omega_inf"])

    As = sextet.A.values
    asym = np.abs(As - np.swapaxes(As, -1, -2)).max(axis=(-1, -2))
    scale = max(1.0, float(np.abs(As).max()))
    worst = np.unravel_index(np.argmax(asym), asym.shape)
    cond("A symmetric", float(asym.max()) <= 1e-12 * scale,
         "max |A - A^T| = %.6g at time index %d, node %d"
         % (asym.max(), worst[0], worst[1]))
    cond("A positive definite", norms["A_min_eig"] > 0.0,
         "min eigenvalue = %.6g" % norms["A_min_eig"])
    return ValidationReport(conds, dict(norms), norms["delta_star"])


# --------------------------------------------------------------------------
# explicit constants
# --------------------------------------------------------------------------

def safe_exp(x):
    """exp that saturates to +inf instead of raising OverflowError."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def tau_star_formula(nu, delta, b_inf, lam_inf, omega_inf):
    if delta <= 0:
        raise AdmissibilityError("delta_star(a) must be positive")
    return min(1.0, nu, delta) / (
        16.0 * (1.0 + nu + delta) * (1.0 + b_inf + lam_inf + omega_inf ** 2))


def c_star_formula(nu, delta, cV4, cV04, a_w1inf, b_inf, lam_inf, omega_inf):
    if delta <= 0:
        raise AdmissibilityError("delta_star(a) must be positive")
    return (9.0 * (1.0 + nu) / min(1.0, nu, delta)
            * (1.0 + cV4 ** 2 + cV4 ** 4 + cV04 ** 2)
            * (1.0 + a_w1inf + b_inf + lam_inf + omega_inf ** 2))


def c_tilde_star_formula(nu, delta, cV4, cV04, b_inf, lam_inf, omega_inf):
    # same as c_star but without the W^{1,inf} norm of a
    return c_star_formula(nu, delta, cV4, cV04, 0.0, b_inf, lam_inf, omega_inf)


def m0_formula(nu, cV4, cV0H, a_inf, grad_a_inf, b_inf, mu_linfh, lam_inf,
               omega_inf, A_inf):
    return (2.0 * (1.0 + nu) * (1.0 + cV4 ** 2 + cV0H)
            * (1.0 + a_inf + grad_a_inf + b_inf + mu_linfh + lam_inf
               + omega_inf + A_inf))


def m1_formula(nu, cV4, cV0H, delta, a_inf, grad_a_inf, b_inf, mu_linfh,
               lam_inf, omega_inf, A_inf):
    if delta <= 0:
        raise AdmissibilityError("delta_star(a) must be positive")
    return (2.0 * (1.0 + nu) * (1.0 + cV4 ** 2 + cV0H)
            * (1.0 + (1.0 + cV0H) * (a_inf + grad_a_inf) / delta ** 2)
            * (1.0 + b_inf + mu_linfh + lam_inf + omega_inf + A_inf))


def c1_star_formula(c0_star, a_inf, nu, delta, T):
    e = safe_exp(6.0 * c0_star * T + 1.0)
    val = 2.0 * (1.0 + c0_star + a_inf) * e / min(1.0, nu, delta)
    return math.sqrt(val) if math.isfinite(val) else math.inf


def tau_star(sextet, nu):
    """Step-size threshold below which every step system is coercive."""
    n = sextet.norms()
    return tau_star_formula(nu, n["delta_star"], n["b_inf"], n["lam_inf"],
                            n["omega_inf"])


def c_star(sextet, nu, consts):
    """Gronwall constant of the continuous-dependence estimate."""
    if consts.cV4 is None or consts.cV04 is None:
        raise AdmissibilityError("embedding constants not computed")
    n = sextet.norms()
    return c_star_formula(nu, n["delta_star"], consts.cV4, consts.cV04,
                          n["a_w1inf"], n["b_inf"], n["lam_inf"],
                          n["omega_inf"])


def c_tilde_star(sextet, nu, consts):
    n = sextet.norms()
    return c_tilde_star_formula(nu, n["delta_star"], consts.cV4, consts.cV04,
                                n["b_inf"], n["lam_inf"], n["omega_inf"])


def operator_bounds(sextet, nu, consts):
    """(M0, M1): bound and inverse-bound constants of the residual operator."""
    n = sextet.norms()
    m0 = m0_formula(nu, consts.cV4, consts.cV0H, n["a_inf"], n["grad_a_inf"],
                    n["b_inf"], n["mu_linfh"], n["lam_inf"], n["omega_inf"],
                    n["A_inf"])
    m1 = m1_formula(nu, consts.cV4, consts.cV0H, n["delta_star"], n["a_inf"],
                    n["grad_a_inf"], n["b_inf"], n["mu_linfh"], n["lam_inf"],
                    n["omega_inf"], n["A_inf"])
    return m0, m1


@dataclass
class SchemeConstants:
    nu: float
    tau_star: float = None
    delta0: float = None
    c_star: float = None
    c0_star: float = None
    c_tilde_star: float = None
    c1_star: float = None
    m0: float = None
    m1: float = None
    cV4: float = None
    cV04: float = None
    cV0H: float = None
    cHVstar: float = None
    cHV0star: float = None
    T: float = None

    def check(self):
        for name in ("nu", "tau_star", "delta0", "c_star", "c0_star",
                     "c1_star", "m0", "m1", "cV4", "cV04", "cV0H"):
            v = getattr(self, name)
            if v is None or not v > 0:
                raise AdmissibilityError("constant %s not positive" % name)
        if not self.tau_star < 1:
            raise AdmissibilityError("tau_star must lie in (0,1)")
        if not self.delta0 < 1.0 / (6.0 * self.c0_star):
            raise AdmissibilityError("delta0 must be < 1/(6 C0*)")


def space_embeddings(v_space, v0_space, seed=0):
    """The four discrete embedding constants of a space pair, reusable
    across every sextet living on the same mesh."""
    return {"cV4": fem.embedding_constant(v_space, "L4", seed=seed),
            "cV04": fem.embedding_constant(v0_space, "L4", seed=seed),
            "cV0H": fem.embedding_constant(v0_space, "H", seed=seed),
            "cHVstar": fem.embedding_constant(v_space, "H", seed=seed)}


def compute_scheme_constants(sextet, nu, T, v_space, v0_space, seed=0,
                             embeddings=None):
    """Evaluate every explicit constant for a sextet on its mesh.

    The embedding constants are the exact discrete constants of the two
    P1 spaces, so every inequality check downstream is a statement about
    the discrete spaces themselves.  Precomputed embeddings may be passed
    in to amortize the cost over several sextets on one mesh.
    """
    if embeddings is None:
        embeddings = space_embeddings(v_space, v0_space, seed=seed)
    cV4 = embeddings["cV4"]
    cV04 = embeddings["cV04"]
    cV0H = embeddings["cV0H"]
    cHVstar = embeddings["cHVstar"]
    consts = SchemeConstants(nu=nu, cV4=cV4, cV04=cV04, cV0H=cV0H,
                             cHVstar=cHVstar, cHV0star=cV0H, T=T)
    consts.tau_star = tau_star(sextet, nu)
    consts.c_star = c_star(sextet, nu, consts)
    consts.c0_star = consts.c_star
    consts.c_tilde_star = c_tilde_star(sextet, nu, consts)
    consts.m0, consts.m1 = operator_bounds(sextet, nu, consts)
    n = sextet.norms()
    consts.c1_star = c1_star_formula(consts.c0_star, n["a_inf"], nu,
                                     n["delta_star"], T)
    consts.delta0 = 0.5 * min(consts.tau_star, 1.0 / (6.0 * consts.c0_star))
    consts.check()
    return consts


# --------------------------------------------------------------------------
# time slicing and interpolants
# --------------------------------------------------------------------------

@dataclass
class TimeSlices:
    tau: float
    slices: np.ndarray          # (n_slices+1, ...) with index 0..n
    kind: str
    T: float

    @property
    def n(self):
        return self.slices.shape[0] - 1


def n_steps(T, tau):
    n = int(math.ceil(T / tau - 1e-12))
    return max(n, 1)


def discretize_time(field, tau, mode, nodes=None):
    """Per-step coefficient samples gamma_i, i = 0..ceil(T/tau).

    mode='point'   : gamma_i = gamma(t_i) with t_i clamped at T.
    mode='average' : gamma_i = interval mean over (t_{i-1}, t_i) intersected
                     with (0, T), by composite midpoint quadrature aligned
                     with the field's own time grid (exact for data affine in
                     time between stored samples).
    gamma_0 is the point value at t = 0 in both modes.
    """
    if not 0.0 < tau < 1.0:
        raise AdmissibilityError("tau must lie in (0,1)")
    if mode not in ("point", "average"):
        raise ValueError("mode must be 'point' or 'average'")
    T = field.T if field.T > 0 else 0.0
    n = n_steps(T, tau) if T > 0 else 1
    out = [field.at_time(0.0, nodes)]
    for i in range(1, n + 1):
        t0, t1 = (i - 1) * tau, min(i * tau, T) if T > 0 else i * tau
        if mode == "point":
            out.append(field.at_time(min(i * tau, T) if T > 0 else i * tau,
                                     nodes))
            continue
        if t1 <= t0:
            out.append(field.at_time(T, nodes))
            continue
        # breakpoints: field time grid intersected with the step interval
        pts = [t0, t1]
        if len(field.times) > 1:
            inner = field.times[(field.times > t0) & (field.times < t1)]
            pts = sorted({t0, t1, *inner.tolist()})
        acc = None
        for lo, hi in zip(pts[:-1], pts[1:]):
            v = field.at_time(0.5 * (lo + hi), nodes) * (hi - lo)
            acc = v if acc is None else acc + v
        out.append(acc / (t1 - t0))
    return TimeSlices(tau=tau, slices=np.asarray(out), kind=field.kind,
                      T=T if T > 0 else n * tau)


def _forward_index(t, tau, n):
    i = int(math.ceil(t / tau - 1e-9))
    return min(max(i, 0), n)


def interpolate_sequence(values, tau, T, kind, t):
    """Forward / backward / linear time-interpolation of a slice sequence.

    values has shape (n+1, ...); the grid is t_i = i*tau (the last point may
    overshoot T when tau does not divide it).
    """
    if t < -1e-12 or t > T + 1e-12:
        raise ValueError("t = %g outside [0, %g]" % (t, T))
    n = values.shape[0] - 1
    i = _forward_index(t, tau, n)
    if kind == "forward":
        return values[i]
    if kind == "backward":
        return values[max(i - 1, 0)]
    if kind == "linear":
        if i == 0:
            return values[0]
        w = (t - (i - 1) * tau) / tau
        w = min(max(w, 0.0), 1.0)
        return w * values[i] + (1.0 - w) * values[i - 1]
    raise ValueError("kind must be 'forward', 'backward' or 'linear'")


def interpolant_eval(slices, kind, t):
    return interpolate_sequence(slices.slices, slices.tau, slices.T, kind, t)


# --------------------------------------------------------------------------
# field file format (text and little-endian binary records)
# --------------------------------------------------------------------------

def write_field(f, path, binary=False):
    N = 1 if f.kind == "scalar" else f.values.shape[2]
    comp = {"scalar": 1, "vector": N, "matrix": N * N}[f.kind]
    with open(path, "wb") as fh:
        head = ["parapair-field %s" % ("binary" if binary else "text"),
                "kind %s %d" % (f.kind, N),
                "nodes %d" % f.n_nodes,
                "times %d" % len(f.times),
                " ".join("%.17g" % t for t in f.times)]
        fh.write(("\n".join(head) + "\n").encode())
        flat = f.values.reshape(len(f.times) * f.n_nodes, comp)
        if binary:
            fh.write(flat.astype("<f8").tobytes())
        else:
            for row in flat:
                fh.write((" ".join("%.17g" % v for v in row) + "\n").encode())


def read_field(path):
    with open(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n", 5)
    try:
        tag, mode = lines[0].decode().split()
    except (ValueError, UnicodeDecodeError):
        raise FieldShapeError("not a field file")
    if tag != "parapair-field":
        raise FieldShapeError("not a field file")
    _, kind, N = lines[1].decode().split()
    N = int(N)
    n_nodes = int(lines[2].decode().split()[1])
    n_times = int(lines[3].decode().split()[1])
    times = np.array([float(v) for v in lines[4].decode().split()])
    comp = {"scalar": 1, "vector": N, "matrix": N * N}[kind]
    body = lines[5]
    if mode == "binary":
        flat = np.frombuffer(body[:n_times * n_nodes * comp * 8], dtype="<f8")
    else:
        flat = np.array([float(v) for v in body.split()])
    flat = flat.reshape(n_times, n_nodes, comp)
    if kind == "scalar":
        values = flat[:, :, 0]
    elif kind == "vector":
        values = flat
    else:
        values = flat.reshape(n_times, n_nodes, N, N)
    return SpaceTimeField(kind, values, times)
