"""Nonlocal operators: interior and boundary Besov forms and the
Dirichlet-to-Neumann map.

The Besov forms are discretized by nodal product quadrature: with lumped
node weights m_i the double integral becomes a weighted graph energy
``sum_{i != j} W_ij (u_i - u_j)(v_i - v_j)`` with ``W_ij >= 0``. This keeps
the lattice properties (symmetry, constants in the kernel, nonpositive
cross terms between positive and negative parts) exact at the discrete
level. On the boundary, the contribution of each edge with itself is added
exactly for piecewise-linear fields.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import Expr
from .errors import NumericError, ValidationError
from .measure import boundary_density_on_mesh


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense operator acting on the full nodal numbering.

    Attributes
    ----------
    values : (n, n) array
        ``values[i, j] = K(phi_j, phi_i)``.
    dofs : (k,) int array
        Degrees of freedom the operator couples (others have zero rows).
    weights : (k,) array
        Lumped mass of each coupled degree of freedom (norm of the space the
        operator lives on).
    kind : str
    """

    values: np.ndarray
    dofs: np.ndarray
    weights: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.values.shape[0]

    def __call__(self, u, v):
        return float(v @ (self.values @ u))

    def row_sum_defect(self):
        """max |row sum| and max |column sum| relative to max |entry|."""
        scale = np.abs(self.values).max()
        if scale == 0:
            return 0.0
        return float(max(np.abs(self.values.sum(axis=1)).max(),
                         np.abs(self.values.sum(axis=0)).max()) / scale)

    def asymmetry(self):
        scale = np.abs(self.values).max()
        return 0.0 if scale == 0 else float(np.abs(self.values - self.values.T).max() / scale)


def _graph_laplacian(W):
    """2 (D - W) for a symmetric nonnegative weight matrix with zero diagonal."""
    L = -2.0 * W
    L[np.diag_indices_from(L)] = 2.0 * W.sum(axis=1)
    return L


def _embed(L, dofs, n):
    A = np.zeros((n, n))
    A[np.ix_(dofs, dofs)] = L
    return A


def _kernel_matrix(kernel, P):
    if kernel is None:
        return 1.0
    k = Expr(kernel)(P[:, None, 0], P[:, None, 1], xp=P[None, :, 0], yp=P[None, :, 1])
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ValidationError("kernel must be bounded and nonnegative")
    # symmetrize: the double integral only sees the symmetric part
    return 0.5 * (k + k.T)


def lumped_node_weights(mesh):
    return np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3),
                       minlength=mesh.n_nodes)


def assemble_besov_interior(mesh, fractional_order, kernel_a=None, dim_exponent=2.0):
    """Interior Besov operator with kernel a(x, y) / |x - y|**(2 s + dim).

    Here s is the fractional order (distinct from the integrability
    exponent of beta).

    Parameters
    ----------
    fractional_order : float in (0, 1)
    kernel_a : expression, optional
        Bounded nonnegative kernel in x, y, xp, yp (1 when omitted).
    dim_exponent : float
        N in the kernel exponent; the nonlocal-data mode replaces it.
    """
    s = fractional_order
    if not 0 < s < 1:
        raise ValidationError("fractional order must lie in (0, 1)")
    P = mesh.nodes
    m = lumped_node_weights(mesh)
    R = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    np.fill_diagonal(R, np.inf)
    W = m[:, None] * m[None, :] * _kernel_matrix(kernel_a, P) / R ** (2.0 * s + dim_exponent)
    np.fill_diagonal(W, 0.0)
    dofs = np.arange(mesh.n_nodes)
    return DenseOperator(_graph_laplacian(W), dofs, m, "besov_interior",
                         {"fractional_order": s, "exponent": 2.0 * s + dim_exponent})


def _self_edge_weight(L, rho, alpha):
    """Exact double integral of (u(x) - u(y))**2 |x - y|**-alpha over one
    edge with itself for a linear u with unit end difference."""
    return rho ** 2 * 2.0 * L ** (2.0 - alpha) / ((3.0 - alpha) * (4.0 - alpha))


def assemble_besov_boundary(mesh, measure, d=None, kernel_b=None, exponent=None):
    """Boundary Besov operator with kernel b(x, y) / |x - y|**(2 + 2d - N).

    Node pairs interact through lumped measure weights; each boundary edge
    adds its exact self-interaction for piecewise-linear traces, which is
    a positive weight on the edge's two endpoints.
    """
    d = measure.dimension_d if d is None else float(d)
    alpha = 2.0 + 2.0 * d - 2.0 if exponent is None else float(exponent)
    if not 0 < alpha < 3:
        raise ValidationError("boundary kernel exponent must lie in (0, 3)")
    E = mesh.boundary_edges
    dofs = mesh.boundary_nodes
    n = mesh.n_nodes
    pos = np.full(n, -1)
    pos[dofs] = np.arange(len(dofs))
    L = mesh.boundary_edge_lengths()
    rho = boundary_density_on_mesh(mesh, measure)
    mu_e = L * rho
    w = np.bincount(pos[E].ravel(), np.repeat(mu_e / 2.0, 2), minlength=len(dofs))
    P = mesh.nodes[dofs]
    R = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    np.fill_diagonal(R, np.inf)
    kb = _kernel_matrix(kernel_b, P)
    W = w[:, None] * w[None, :] * kb / R ** alpha
    np.fill_diagonal(W, 0.0)
    # exact self-edge contribution for linear traces (unit kernel scaled by
    # its value at the edge midpoint)
    a, b = pos[E[:, 0]], pos[E[:, 1]]
    kmid = kb if np.isscalar(kb) else kb[a, b]
    c = kmid * _self_edge_weight(L, rho, alpha)
    W[a, b] += 0.5 * c
    W[b, a] += 0.5 * c
    return DenseOperator(_embed(_graph_laplacian(W), dofs, n), dofs, w, "besov_boundary",
                         {"d": d, "exponent": alpha})


def conductivity_stiffness(mesh, gamma="1"):
    """P1 stiffness of -div(gamma grad) with gamma at triangle centroids."""
    from .assembly import _scatter, p1_gradients

    C = mesh.nodes[mesh.triangles].mean(axis=1)
    g = Expr(gamma).at(C)
    if not np.min(g) > 0:
        raise ValidationError("conductivity gamma must be positive")
    G = p1_gradients(mesh)
    K = (mesh.areas * g)[:, None, None] * np.einsum("mai,mbi->mab", G, G)
    return _scatter(mesh.triangles, K, mesh.n_nodes)


def assemble_dtn(mesh, gamma="1"):
    """Dirichlet-to-Neumann operator as the Schur complement
    ``A_bb - A_bi A_ii^-1 A_ib`` of the gamma-weighted stiffness."""
    A = conductivity_stiffness(mesh, gamma).tocsr()
    b, i = mesh.boundary_nodes, mesh.interior_nodes
    Abb = A[b][:, b].toarray()
    if len(i):
        Aii = A[i][:, i].tocsc()
        Aib = A[i][:, b].toarray()
        try:
            lu = splu(Aii)
        except RuntimeError as exc:
            raise NumericError("interior block is singular: %s" % exc)
        S = Abb - A[b][:, i] @ lu.solve(Aib)
    else:
        S = Abb
    S = np.asarray(S)
    _, B = _boundary_lumped(mesh)
    return DenseOperator(_embed(S, b, mesh.n_nodes), b, B[b], "dtn", {"gamma": str(gamma)})


def _boundary_lumped(mesh, measure=None):
    L = mesh.boundary_edge_lengths()
    if measure is not None:
        L = L * boundary_density_on_mesh(mesh, measure)
    w = np.bincount(mesh.boundary_edges.ravel(), np.repeat(L / 2.0, 2), minlength=mesh.n_nodes)
    return None, w


@dataclass
class ConditionReport:
    trials: int
    passed: bool
    max_violation: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)


def check_A_conditions(op, trials=200, rng=None, tol=1e-9, mode=None):
    """Randomized checks of K(u+, u-) <= 0, K(u, u_k) >= 0, K(u, u) >= 0 and
    measurement of the (A1) shift eta0 over Moser test functions.

    ``eta0`` is the smallest value with ``K(u, v_m) + eta0 k**2 |w_m|**2 >= 0``
    over the sampled (u, k, m), where ``|w_m|`` is the lumped L2 norm on the
    operator's degrees of freedom.
    """
    from .degiorgi import moser_test_functions

    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    n, dofs = op.dimension, op.dofs
    A = op.values[np.ix_(dofs, dofs)]
    scale = np.abs(A).max()
    worst = {"A2": 0.0, "A3": 0.0, "quadratic": 0.0}
    eta0 = 0.0
    for _ in range(trials):
        u = rng.standard_normal(len(dofs))
        up, um = np.maximum(u, 0), np.maximum(-u, 0)
        worst["A2"] = max(worst["A2"], um @ A @ up)
        k = rng.uniform(u.min(), u.max())
        uk = np.maximum(u - k, 0)
        worst["A3"] = max(worst["A3"], -(uk @ A @ u))
        worst["quadratic"] = max(worst["quadratic"], -(u @ A @ u) / max(scale, 1e-300))
        kk = rng.uniform(2.0, 4.0)
        mm = rng.uniform(1.0, 3.0)
        w_m, v_m = moser_test_functions(u, kk, mm)
        wn = np.sum(op.weights * w_m ** 2)
        val = v_m @ A @ u
        if val < 0 and wn > 0:
            eta0 = max(eta0, -val / (kk ** 2 * wn))
    defect = op.row_sum_defect()
    rep = ConditionReport(trials, passed=bool(worst["A2"] <= tol and worst["A3"] <= tol
                                              and worst["quadratic"] <= 1e-10
                                              and defect <= 1e-10))
    rep.max_violation = {k: float(v) for k, v in worst.items()}
    rep.max_violation["row_sum"] = defect
    rep.measured = {"eta0": float(eta0)}
    return rep


def operator_perturbation_gap(op1, op2, u1, u2, gram, mass):
    """Measured ratio ``|u1 - u2|_W / (|(K1 - K2) u1|_W* + |u1 - u2|_2)``.

    The dual norm is ``sqrt(r^T G^-1 r)`` with G the W_2 Gram matrix. The
    ratio is 0 when the numerator vanishes.
    """
    from scipy.sparse.linalg import spsolve

    e = np.asarray(u1) - np.asarray(u2)
    num = float(np.sqrt(max(e @ (gram @ e), 0.0)))
    if num == 0.0:
        return 0.0
    V1 = op1.values if isinstance(op1, DenseOperator) else np.asarray(op1)
    V2 = op2.values if isinstance(op2, DenseOperator) else np.asarray(op2)
    r = (V1 - V2) @ u1
    G = sp.csc_matrix(gram)
    dual = float(np.sqrt(max(r @ spsolve(G, r), 0.0)))
    l2 = float(np.sqrt(max(e @ (mass @ e), 0.0)))
    return num / (dual + l2)
