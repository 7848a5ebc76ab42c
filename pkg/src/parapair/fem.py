###############################################################################
#                P1 FINITE ELEMENTS: MESHES, ASSEMBLY, DUAL NORMS             #
###############################################################################
#
# Lowest-order Lagrange elements on interval partitions (1D) and structured
# right-triangle meshes of rectangles (2D).  Two discrete spaces are used
# throughout:
#
#   * the "neumann" space   -- H^1 conforming, every node carries a dof,
#   * the "dirichlet0" space -- H^1_0 conforming, boundary nodes eliminated.
#
# All coefficient-weighted forms are integrated exactly for piecewise-linear
# coefficient interpolants via closed-form barycentric moment formulas, so
# assembled matrices are exact (up to roundoff) for P1 x P1 x P1 integrands.

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MeshError(ValueError):
    pass


class Mesh:
    """Simplicial mesh of an interval or an axis-aligned rectangle.

    Attributes
    ----------
    dim : int
        Spatial dimension (1 or 2).
    nodes : (n_nodes, dim) float array
        Vertex coordinates.
    cells : (n_cells, dim+1) int array
        Simplex connectivity.
    boundary_nodes : int array
        Sorted indices of the nodes lying on the boundary.
    """

    def __init__(self, dim, nodes, cells, boundary_nodes):
        self.dim = int(dim)
        self.nodes = np.asarray(nodes, dtype=float)
        self.cells = np.asarray(cells, dtype=int)
        self.boundary_nodes = np.asarray(sorted(boundary_nodes), dtype=int)
        self._precompute_geometry()

    def _precompute_geometry(self):
        # per-cell measures and constant gradients of the barycentric basis
        nn = self.nodes[self.cells]            # (m, d+1, d)
        m = len(self.cells)
        d = self.dim
        if d == 1:
            h = nn[:, 1, 0] - nn[:, 0, 0]
            if np.any(h <= 0):
                raise MeshError("cell with non-positive length")
            self.measures = h
            grads = np.empty((m, 2, 1))
            grads[:, 0, 0] = -1.0 / h
            grads[:, 1, 0] = 1.0 / h
            self.grads = grads
        else:
            e1 = nn[:, 1] - nn[:, 0]
            e2 = nn[:, 2] - nn[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            if np.any(det <= 0):
                raise MeshError("cell with non-positive area")
            self.measures = 0.5 * det
            grads = np.empty((m, 3, 2))
            # gradients of barycentric coordinates from the inverse Jacobian
            grads[:, 1, 0] = e2[:, 1] / det
            grads[:, 1, 1] = -e2[:, 0] / det
            grads[:, 2, 0] = -e1[:, 1] / det
            grads[:, 2, 1] = e1[:, 0] / det
            grads[:, 0] = -grads[:, 1] - grads[:, 2]
            self.grads = grads

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_cells(self):
        return len(self.cells)

    def total_measure(self):
        return float(np.sum(self.measures))

    def cell_gradients(self, nodal):
        """Element-wise gradient of the P1 interpolant of nodal values.

        Returns an (n_cells, dim) array for scalar nodal data.
        """
        v = np.asarray(nodal, dtype=float)[self.cells]          # (m, d+1)
        return np.einsum("ck,ckd->cd", v, self.grads)

    def nodal_gradients(self, nodal):
        """Cell gradients averaged to nodes (measure-weighted)."""
        g = self.cell_gradients(nodal)                           # (m, d)
        out = np.zeros((self.n_nodes, self.dim))
        wsum = np.zeros(self.n_nodes)
        w = self.measures
        for k in range(self.cells.shape[1]):
            idx = self.cells[:, k]
            np.add.at(out, idx, g * w[:, None])
            np.add.at(wsum, idx, w)
        return out / wsum[:, None]


def build_mesh(domain, resolution):
    """Build a uniform mesh.

    Parameters
    ----------
    domain : tuple
        ("interval", x0, x1) or ("rectangle", x0, x1, y0, y1).
    resolution : int
        Number of cells per axis, at least 2.
    """
    n = int(resolution)
    if n < 2:
        raise MeshError("resolution must be >= 2")
    kind = domain[0]
    if kind == "interval":
        x0, x1 = float(domain[1]), float(domain[2])
        if not x1 > x0:
            raise MeshError("degenerate interval")
        xs = np.linspace(x0, x1, n + 1)
        nodes = xs[:, None]
        cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        boundary = [0, n]
        return Mesh(1, nodes, cells, boundary)
    if kind == "rectangle":
        x0, x1, y0, y1 = (float(v) for v in domain[1:5])
        if not (x1 > x0 and y1 > y0):
            raise MeshError("degenerate rectangle")
        xs = np.linspace(x0, x1, n + 1)
        ys = np.linspace(y0, y1, n + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

        def nid(i, j):
            return i * (n + 1) + j

        cells = []
        for i in range(n):
            for j in range(n):
                # split each grid square along the diagonal, ccw orientation
                cells.append([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1)])
                cells.append([nid(i, j), nid(i + 1, j + 1), nid(i, j + 1)])
        boundary = [nid(i, j) for i in range(n + 1) for j in range(n + 1)
                    if i in (0, n) or j in (0, n)]
        return Mesh(2, nodes, cells, boundary)
    raise MeshError("unknown domain kind %r" % (kind,))


# --------------------------------------------------------------------------
# barycentric moment tables:  integrals of products of barycentric coords
# over a simplex, relative to the cell measure.  In dimension d,
#   int_T  prod_k lambda_k^{e_k} dx  =  measure * d! * prod(e_k!) / (sum(e)+d)!
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _moment2(dim):
    nd = dim + 1
    c = np.empty((nd, nd))
    for i in range(nd):
        for j in range(nd):
            e = [0] * nd
            e[i] += 1
            e[j] += 1
            num = math.factorial(dim) * math.prod(math.factorial(k) for k in e)
            c[i, j] = num / math.factorial(sum(e) + dim)
    return c


@lru_cache(maxsize=None)
def _moment3(dim):
    nd = dim + 1
    c = np.empty((nd, nd, nd))
    for k in range(nd):
        for i in range(nd):
            for j in range(nd):
                e = [0] * nd
                e[k] += 1
                e[i] += 1
                e[j] += 1
                num = math.factorial(dim) * math.prod(math.factorial(q) for q in e)
                c[k, i, j] = num / math.factorial(sum(e) + dim)
    return c


def _accumulate(mesh, local):
    """Scatter per-cell local matrices (m, nd, nd) into a CSR node matrix."""
    nd = mesh.cells.shape[1]
    rows = np.repeat(mesh.cells, nd, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nd)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.n_nodes, mesh.n_nodes))
    return mat.tocsr()


def mass_matrix(mesh, coeff=None):
    """Mass matrix over all nodes; optional P1 nodal scalar coefficient.

    Entries int c_h phi_i phi_j, integrated exactly.
    """
    nd = mesh.cells.shape[1]
    if coeff is None:
        c2 = _moment2(mesh.dim)
        local = mesh.measures[:, None, None] * c2[None, :, :]
    else:
        cv = np.asarray(coeff, dtype=float)[mesh.cells]          # (m, nd)
        c3 = _moment3(mesh.dim)
        local = np.einsum("c,ck,kij->cij", mesh.measures, cv, c3)
    return _accumulate(mesh, local)


def stiffness_matrix(mesh, mat_coeff=None):
    """Stiffness matrix int (C grad u) . grad v over all nodes.

    mat_coeff is an optional (n_nodes, dim, dim) nodal matrix field;
    gradients are cellwise constant so the coefficient enters by cell mean.
    """
    g = mesh.grads                                               # (m, nd, d)
    if mat_coeff is None:
        local = np.einsum("c,cid,cjd->cij", mesh.measures, g, g)
    else:
        cc = np.asarray(mat_coeff, dtype=float)[mesh.cells]      # (m, nd, d, d)
        cbar = cc.mean(axis=1)                                   # (m, d, d)
        local = np.einsum("c,cde,cie,cjd->cij", mesh.measures, cbar, g, g)
    return _accumulate(mesh, local)


def convection_matrix(mesh, omega):
    """Matrix C[i,j] = int (omega_h . grad phi_j) phi_i over all nodes."""
    ov = np.asarray(omega, dtype=float)[mesh.cells]              # (m, nd, d)
    c2 = _moment2(mesh.dim)
    # int omega_d phi_i = meas * sum_k omega[k,d] c2[k,i]
    wphi = np.einsum("c,ckd,ki->cid", mesh.measures, ov, c2)     # (m, nd, d)
    local = np.einsum("cid,cjd->cij", wphi, mesh.grads)
    return _accumulate(mesh, local)


def load_density(mesh, f_nodal):
    """FE load vector of an L^2 density given by nodal values (all nodes)."""
    return mass_matrix(mesh) @ np.asarray(f_nodal, dtype=float)


def load_divergence(mesh, g_nodal):
    """Load vector of the functional v -> int g_h . grad v (weak -div g)."""
    gv = np.asarray(g_nodal, dtype=float)[mesh.cells]            # (m, nd, d)
    gbar = gv.mean(axis=1)                                       # (m, d)
    contrib = np.einsum("c,cd,cid->ci", mesh.measures, gbar, mesh.grads)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells.ravel(), contrib.ravel())
    return out


class FeSpace:
    """P1 space on a mesh, with natural (neumann) or essential (dirichlet0)
    boundary treatment by dof elimination."""

    def __init__(self, mesh, bc):
        if bc not in ("neumann", "dirichlet0"):
            raise ValueError("bc must be 'neumann' or 'dirichlet0'")
        self.mesh = mesh
        self.bc = bc
        if bc == "neumann":
            self.dofs = np.arange(mesh.n_nodes)
        else:
            mask = np.ones(mesh.n_nodes, dtype=bool)
            mask[mesh.boundary_nodes] = False
            self.dofs = np.nonzero(mask)[0]
        self.dof_map = -np.ones(mesh.n_nodes, dtype=int)
        self.dof_map[self.dofs] = np.arange(len(self.dofs))
        self._cache = {}

    @property
    def n_dofs(self):
        return len(self.dofs)

    def restrict(self, node_matrix):
        """Restrict a node x node matrix to this space's dofs (rows+cols)."""
        return node_matrix[self.dofs][:, self.dofs].tocsr()

    def restrict_vector(self, node_vector):
        return np.asarray(node_vector, dtype=float)[self.dofs]

    def prolong(self, dof_vector):
        """Embed a dof vector into nodal values (zero on eliminated nodes)."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.dofs] = dof_vector
        return out

    # -- cached canonical operators ---------------------------------------
    def mass(self):
        if "mass" not in self._cache:
            self._cache["mass"] = self.restrict(mass_matrix(self.mesh))
        return self._cache["mass"]

    def stiffness(self):
        if "stiff" not in self._cache:
            self._cache["stiff"] = self.restrict(stiffness_matrix(self.mesh))
        return self._cache["stiff"]

    def gram(self):
        if "gram" not in self._cache:
            self._cache["gram"] = (self.stiffness() + self.mass()).tocsr()
        return self._cache["gram"]

    def gram_solve(self, f):
        if "gram_lu" not in self._cache:
            self._cache["gram_lu"] = spla.factorized(self.gram().tocsc())
        return self._cache["gram_lu"](np.asarray(f, dtype=float))

    # -- norms --------------------------------------------------------------
    def h_norm(self, x):
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ (self.mass() @ x)), 0.0))

    def space_norm(self, x):
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ (self.gram() @ x)), 0.0))

    def grad_norm(self, x):
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ (self.stiffness() @ x)), 0.0))


def assemble_gram(space):
    """Gram matrix of the discrete space (H^1 inner product, restricted)."""
    return space.gram()


def dual_norm(f, space):
    """Discrete dual norm sqrt(f^T G^{-1} f) via one Riesz solve."""
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n_dofs,):
        raise ValueError("functional has wrong dof count")
    if not np.any(f):
        return 0.0
    x = space.gram_solve(f)
    return math.sqrt(max(float(f @ x), 0.0))


def assemble_forms(mesh, slices, nu):
    """Assemble every bilinear form of one time slice of the coupled system.

    Parameters
    ----------
    mesh : Mesh
    slices : dict with nodal arrays 'a', 'b', 'mu', 'lam' (scalars, n_nodes),
        'omega' (n_nodes, dim) and 'A' (n_nodes, dim, dim).
    nu : float

    Returns
    -------
    dict of matrices over V-dofs / V0-dofs:
        M, K         -- mass / stiffness on V (all nodes)
        M_mu, M_lam  -- weighted masses on V
        M_a, M_b     -- weighted masses on V0
        K_A, K0      -- anisotropic / plain stiffness on V0
        B_omega      -- coupling, V0-dofs -> V-dofs
    and the two spaces under keys 'V', 'V0'.
    """
    n = mesh.n_nodes
    for key, shape in (("a", (n,)), ("b", (n,)), ("mu", (n,)), ("lam", (n,)),
                       ("omega", (n, mesh.dim)), ("A", (n, mesh.dim, mesh.dim))):
        if np.shape(slices[key]) != shape:
            raise ValueError("coefficient %r has shape %s, expected %s"
                             % (key, np.shape(slices[key]), shape))
    V = FeSpace(mesh, "neumann")
    V0 = FeSpace(mesh, "dirichlet0")
    Mn = mass_matrix(mesh)
    Kn = stiffness_matrix(mesh)
    out = {
        "V": V,
        "V0": V0,
        "M": V.restrict(Mn),
        "K": V.restrict(Kn),
        "M_mu": V.restrict(mass_matrix(mesh, slices["mu"])),
        "M_lam": V.restrict(mass_matrix(mesh, slices["lam"])),
        "M_a": V0.restrict(mass_matrix(mesh, slices["a"])),
        "M_b": V0.restrict(mass_matrix(mesh, slices["b"])),
        "K_A": V0.restrict(stiffness_matrix(mesh, slices["A"])),
        "K0": V0.restrict(Kn),
    }
    C = convection_matrix(mesh, slices["omega"])
    out["B_omega"] = C[V.dofs][:, V0.dofs].tocsr()
    return out


# --------------------------------------------------------------------------
# L^4 machinery and discrete embedding constants
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _quad_rule(dim):
    """Quadrature exact for degree-4 polynomials on the reference simplex,
    returned as barycentric points and weights (relative to measure)."""
    if dim == 1:
        # 3-point Gauss-Legendre on [0,1], degree 5
        x = np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10])
        w = np.array([5.0, 8.0, 5.0]) / 18.0
        pts = np.stack([1 - x, x], axis=1)
        return pts, w
    # 6-point degree-4 rule on the triangle (Dunavant)
    a1, b1 = 0.108103018168070, 0.445948490915965
    a2, b2 = 0.816847572980459, 0.091576213509771
    w1, w2 = 0.223381589678011, 0.109951743655322
    pts = np.array([
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    w = np.array([w1, w1, w1, w2, w2, w2])
    return pts, w


def l4_norm_p4(mesh, nodal):
    """int |v_h|^4 of the P1 interpolant, by exact quadrature."""
    pts, w = _quad_rule(mesh.dim)
    vals = np.asarray(nodal, dtype=float)[mesh.cells] @ pts.T    # (m, q)
    return float(np.einsum("c,q,cq->", mesh.measures, w, vals ** 4))


def _l4_grad(mesh, nodal):
    """d/dv_i of int v_h^4, i.e. 4 int v_h^3 phi_i."""
    pts, w = _quad_rule(mesh.dim)
    vc = np.asarray(nodal, dtype=float)[mesh.cells]              # (m, nd)
    vals = vc @ pts.T                                            # (m, q)
    contrib = np.einsum("c,q,cq,qk->ck", mesh.measures, w, 4 * vals ** 3, pts)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells.ravel(), contrib.ravel())
    return out


def l4_norm(mesh, nodal):
    return l4_norm_p4(mesh, nodal) ** 0.25


class EmbeddingFailure(RuntimeError):
    pass


def embedding_constant(space, target, seed=0, restarts=10, tol=1e-8,
                       max_iter=10000):
    """Discrete embedding constant of the space.

    target='H'  : sup |v|_H / |v|_space = sqrt of the largest generalized
                  eigenvalue of mass vs Gram (power iteration).
    target='L4' : sup |v|_{L^4} / |v|_space by projected gradient ascent on
                  the Rayleigh-type quotient, with random restarts.
    """
    G = space.gram()
    if target == "H":
        M = space.mass()
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(space.n_dofs)
        lam = 0.0
        for _ in range(max_iter):
            y = space.gram_solve(M @ x)
            ny = math.sqrt(float(y @ (M @ y)))
            if ny == 0:
                raise EmbeddingFailure("power iteration hit the null space")
            y /= ny
            lam_new = float(y @ (M @ y)) / float(y @ (G @ y))
            if abs(lam_new - lam) <= tol * max(1.0, lam_new):
                return math.sqrt(lam_new)
            lam, x = lam_new, y
        raise EmbeddingFailure("power iteration did not converge")

    if target != "L4":
        raise ValueError("target must be 'L4' or 'H'")

    mesh = space.mesh
    rng = np.random.default_rng(seed)
    best = 0.0
    # deterministic start at the constant function plus random restarts;
    # the constant is the exact maximizer on coarse pure-Neumann spaces
    starts = [np.ones(space.n_dofs)]
    starts += [rng.standard_normal(space.n_dofs) for _ in range(restarts)]
    for x in starts:
        x = np.array(x, dtype=float)
        x /= math.sqrt(float(x @ (G @ x)))
        q = l4_norm(mesh, space.prolong(x))
        step = 1.0
        converged = False
        for _ in range(max_iter):
            v = space.prolong(x)
            s4 = l4_norm_p4(mesh, v)
            # gradient of log quotient: (1/4) grad(s4)/s4 - Gx / (x^T G x = 1)
            g = 0.25 * _l4_grad(mesh, v)[space.dofs] / s4 - (G @ x)
            improved = False
            while step > 1e-14:
                y = x + step * g
                y /= math.sqrt(float(y @ (G @ y)))
                qy = l4_norm(mesh, space.prolong(y))
                if qy > q:
                    gain = qy - q
                    x, q = y, qy
                    step *= 2.0
                    improved = True
                    break
                step *= 0.5
            # converged once the quotient stops improving to tolerance
            if not improved or gain <= tol * max(1.0, q):
                converged = True
                break
        if not converged:
            raise EmbeddingFailure("gradient ascent did not converge")
        best = max(best, q)
    return best


# --------------------------------------------------------------------------
# plain-text export helpers
# --------------------------------------------------------------------------

def export_mesh(mesh, path_prefix):
    """Write node and cell tables as text files."""
    np.savetxt(str(path_prefix) + "_nodes.txt", mesh.nodes, fmt="%.17g")
    np.savetxt(str(path_prefix) + "_cells.txt", mesh.cells, fmt="%d")


def export_matrix(mat, path):
    """Write a sparse matrix in (row, col, value) coordinate text format."""
    coo = sp.coo_matrix(mat)
    with open(path, "w") as fh:
        fh.write("%d %d %d\n" % (coo.shape[0], coo.shape[1], coo.nnz))
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write("%d %d %.17g\n" % (i, j, v))
