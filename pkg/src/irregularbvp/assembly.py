"""Piecewise-linear assembly of the local parts of the bilinear form, mass
matrices, the coercivity shift and the discrete weak-coercivity certificate.

Convention: ``A[i, j]`` is the form evaluated at trial ``phi_j`` and test
``phi_i``, so ``E(u, v) = v @ A @ u``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .coefficients import CAP, CoefficientField, Expr, capped, ellipticity_constant
from .errors import ConfigurationError, NumericError
from .norms import (EDGE_T, EDGE_W, TRI_BARY, TRI_W, edge_quadrature,
                    quadrature_points)

PART_NAMES = ("stiffness_alpha", "convection_ahat", "convection_acheck",
              "reaction_lambda", "boundary_beta", "wentzell_part", "nonlocal_part")


def p1_gradients(mesh):
    """Gradients of the three barycentric basis functions, shape (m, 3, 2)."""
    P = mesh.nodes[mesh.triangles]
    B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    Binv = np.linalg.inv(B)
    return np.stack([-Binv[:, 0] - Binv[:, 1], Binv[:, 0], Binv[:, 1]], axis=1)


def _scatter(mesh_conn, local, n):
    k = mesh_conn.shape[1]
    rows = np.repeat(mesh_conn, k, axis=1).ravel()
    cols = np.tile(mesh_conn, (1, k)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A.tocsr()


def _diag(values, n, idx):
    return sp.csr_matrix((np.bincount(idx.ravel(), values.ravel(), minlength=n),
                          (np.arange(n), np.arange(n))), shape=(n, n))


def _eval(expr, X, report, name, cap):
    vals, n_cap, n_bad = capped(Expr(expr).at(X), cap)
    if n_cap or n_bad:
        report[name] = report.get(name, 0) + n_cap + n_bad
    return vals


def assemble_interior(mesh, coeffs, lumped_reaction=True, cap=CAP, caps=None):
    """Interior parts of the form.

    Returns
    -------
    dict with keys stiffness_alpha, convection_ahat (``int a_hat u . grad v``),
    convection_acheck (``int a_check . grad u v``) and reaction_lambda.
    Reaction is row-sum lumped by default.
    """
    if not isinstance(coeffs, CoefficientField):
        raise ConfigurationError("coefficients must be a CoefficientField")
    caps = {} if caps is None else caps
    n = mesh.n_nodes
    X, W = quadrature_points(mesh)
    G = p1_gradients(mesh)
    alpha = np.stack([np.stack([_eval(e, X, caps, "alpha", cap) for e in row], axis=-1)
                      for row in coeffs.alpha], axis=-2)
    ellipticity_constant(alpha.reshape(-1, 2, 2), X.reshape(-1, 2))
    T = mesh.triangles
    # (m, q, a, b): grad phi_a . alpha grad phi_b
    K = np.einsum("mq,mai,mqij,mbj->mab", W, G, alpha, G)
    out = {"stiffness_alpha": _scatter(T, K, n)}
    phi = TRI_BARY  # (q, a)
    ah = np.stack([_eval(e, X, caps, "a_hat", cap) for e in coeffs.a_hat], axis=-1)
    ac = np.stack([_eval(e, X, caps, "a_check", cap) for e in coeffs.a_check], axis=-1)
    Ch = np.einsum("mq,qb,mqi,mai->mab", W, phi, ah, G)
    Cc = np.einsum("mq,qa,mqi,mbi->mab", W, phi, ac, G)
    out["convection_ahat"] = _scatter(T, Ch, n)
    out["convection_acheck"] = _scatter(T, Cc, n)
    lam = _eval(coeffs.lam, X, caps, "lambda", cap)
    if lumped_reaction:
        out["reaction_lambda"] = _diag(np.einsum("mq,mq,qa->ma", W, lam, phi), n, T)
    else:
        out["reaction_lambda"] = _scatter(T, np.einsum("mq,mq,qa,qb->mab", W, lam, phi, phi), n)
    return out


def assemble_boundary_beta(mesh, measure, beta, lumped=True, cap=CAP, caps=None):
    """``int_Gamma beta u v dmu`` on boundary edges (lumped or consistent)."""
    caps = {} if caps is None else caps
    X, W = edge_quadrature(mesh, measure)
    b = _eval(beta, X, caps, "beta", cap)
    phi = np.column_stack([1 - EDGE_T, EDGE_T])
    E = mesh.boundary_edges
    if lumped:
        return _diag(np.einsum("eq,eq,qa->ea", W, b, phi), mesh.n_nodes, E)
    return _scatter(E, np.einsum("eq,eq,qa,qb->eab", W, b, phi, phi), mesh.n_nodes)


def mass_matrices(mesh, measure=None, lumped=False):
    """Interior and boundary mass matrices.

    The boundary mass uses ``measure`` (arc length when omitted).
    """
    n = mesh.n_nodes
    A = mesh.areas
    if lumped:
        M = _diag(np.repeat(A[:, None] / 3.0, 3, axis=1), n, mesh.triangles)
    else:
        loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
        M = _scatter(mesh.triangles, A[:, None, None] * loc, n)
    B = assemble_boundary_beta(mesh, measure, "1", lumped=lumped)
    return M, B


def load_vector(mesh, measure, f="0", g="0", t=0.0, cap=CAP):
    """``int f phi_i dx + int g phi_i dmu``; f and g are expressions or
    nodal arrays (interpolated)."""
    n = mesh.n_nodes
    X, W = quadrature_points(mesh)
    if isinstance(f, np.ndarray):
        fv = f[mesh.triangles] @ TRI_BARY.T
    else:
        fv = capped(Expr(f).at(X, t), cap)[0]
    F = np.bincount(mesh.triangles.ravel(), np.einsum("mq,mq,qa->ma", W, fv, TRI_BARY).ravel(),
                    minlength=n)
    Xe, We = edge_quadrature(mesh, measure)
    phi = np.column_stack([1 - EDGE_T, EDGE_T])
    if isinstance(g, np.ndarray):
        gv = g[mesh.boundary_edges] @ phi.T
    else:
        gv = capped(Expr(g).at(Xe, t), cap)[0]
    F += np.bincount(mesh.boundary_edges.ravel(),
                     np.einsum("eq,eq,qa->ea", We, gv, phi).ravel(), minlength=n)
    return F


# ------------------------------------------------------------------ bundle

def _to_dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


@dataclass
class FormBundle:
    """All assembled parts of the bilinear form on one nodal numbering.

    Attributes
    ----------
    parts : dict
        Operators keyed by PART_NAMES (missing parts are None).
    mass_interior, mass_boundary : sparse
        Consistent mass matrices for (u, v)_Omega and (u, v)_{Gamma, mu}.
    mass_lumped : sparse
        Lumped interior mass, the discrete L2 inner product of the shift
        and of the coercivity analysis.
    gram : sparse
        Discrete W_2 norm Gram matrix.
    shift : float
    c0 : float
        Ellipticity constant of alpha.
    constants : dict
        Measured embedding constants and their epsilons.
    caps : dict
        Count of capped quadrature values per coefficient.
    """

    parts: dict
    mass_interior: object
    mass_boundary: object
    mass_lumped: object
    gram: object
    shift: float = 0.0
    c0: float = 1.0
    c0_star: float = None
    gamma0: float = 0.0
    norms: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    caps: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.mass_interior.shape[0]

    def total(self, include_shift=False):
        """Sum of all parts; dense when a nonlocal part is present."""
        mats = [A for A in self.parts.values() if A is not None]
        if include_shift and self.shift:
            mats.append(self.shift * self.mass_lumped)
        dense = any(not sp.issparse(A) for A in mats)
        if dense:
            out = np.zeros((self.dimension, self.dimension))
            for A in mats:
                out += _to_dense(A)
            return out
        out = sp.csr_matrix((self.dimension, self.dimension))
        for A in mats:
            out = out + A
        return out.tocsr()

    def form(self, u, v, include_shift=False):
        return float(v @ (self.total(include_shift) @ u))


def assemble_bundle(mesh, measure, coeffs, regime="R", wentzell=None, nonlocal_op=None,
                    lumped_reaction=True, lumped_beta=True, cap=CAP):
    """Assemble every local part plus optional Wentzell and nonlocal parts.

    Parameters
    ----------
    regime : {"N", "R", "W"}
        Neumann drops beta; Robin keeps it; Wentzell also adds ``wentzell``.
    wentzell : WentzellForm, optional
    nonlocal_op : ndarray, optional
        Dense matrix on the full numbering.
    """
    if regime not in ("N", "R", "W"):
        raise ConfigurationError("regime must be one of N, R, W")
    if regime == "W" and wentzell is None:
        raise ConfigurationError("regime W requires a Wentzell form")
    caps = {}
    parts = dict.fromkeys(PART_NAMES)
    parts.update(assemble_interior(mesh, coeffs, lumped_reaction, cap, caps))
    if regime != "N" and not Expr(coeffs.beta).is_zero:
        parts["boundary_beta"] = assemble_boundary_beta(mesh, measure, coeffs.beta,
                                                        lumped_beta, cap, caps)
    if regime == "W":
        parts["wentzell_part"] = wentzell.matrix
    if nonlocal_op is not None:
        parts["nonlocal_part"] = nonlocal_op
    M, B = mass_matrices(mesh, measure)
    Ml, Bl = mass_matrices(mesh, measure, lumped=True)
    K = stiffness_laplace(mesh)
    gram = K + Ml
    if regime == "W":
        gram = gram + Bl + wentzell.gram
    X, _ = quadrature_points(mesh)
    c0 = ellipticity_constant(coeffs, X.reshape(-1, 2))
    return FormBundle(parts, M, B, Ml, gram.tocsr(), c0=c0, caps=caps,
                      norms=coefficient_norms(mesh, measure, coeffs, cap))


def stiffness_laplace(mesh):
    G = p1_gradients(mesh)
    K = mesh.areas[:, None, None] * np.einsum("mai,mbi->mab", G, G)
    return _scatter(mesh.triangles, K, mesh.n_nodes)


def coefficient_norms(mesh, measure, coeffs, cap=CAP):
    """Lebesgue norms of |a_hat|, |a_check|, lambda and beta at their exponents."""
    X, W = quadrature_points(mesh)
    Xe, We = edge_quadrature(mesh, measure)

    def vec(comps):
        return np.sqrt(sum(capped(Expr(e).at(X), cap)[0] ** 2 for e in comps))

    def lp(vals, w, p):
        return float(np.sum(w * np.abs(vals) ** p) ** (1.0 / p))

    return {"a_hat": lp(vec(coeffs.a_hat), W, coeffs.r1),
            "a_check": lp(vec(coeffs.a_check), W, coeffs.r2),
            "lambda": lp(capped(Expr(coeffs.lam).at(X), cap)[0], W, coeffs.r3),
            "beta": lp(capped(Expr(coeffs.beta).at(Xe), cap)[0], We, coeffs.beta_exponent)}


# ------------------------------------------------------- coercivity analysis

def _dense_sub(A, free):
    A = _to_dense(A)
    return A if free is None else A[np.ix_(free, free)]


def generalized_extreme(A, B, which="max"):
    """Extreme eigenvalue of the symmetric pencil (A, B), B positive definite."""
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    idx = [n - 1, n - 1] if which == "max" else [0, 0]
    try:
        return float(sla.eigh(A, B, eigvals_only=True, subset_by_index=idx)[0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError("generalized eigenproblem failed: %s" % exc)


def _weighted_mass(mesh, values, lumped=True):
    """Lumped interior mass weighted by quadrature values."""
    _, W = quadrature_points(mesh)
    return _diag(np.einsum("mq,mq,qa->ma", W, values, TRI_BARY), mesh.n_nodes, mesh.triangles)


def measure_embedding_constants(mesh, measure, coeffs, bundle, free=None, cap=CAP):
    """Measured surrogates of the epsilon-embedding constants.

    Each constant is the largest generalized eigenvalue of
    ``(Q - eps * G, M)`` with Q the quadratic form being bounded, G the
    W_2 Gram and M the lumped mass, so that ``Q <= eps G + C M`` holds on
    the discrete space. The epsilons follow the proof of weak coercivity:
    m/20 over the convection norms and m/10 over the others, with
    ``m = min(c0, c0*)``.
    """
    c0 = bundle.c0
    c0s = c0 if bundle.c0_star is None else bundle.c0_star
    m = min(c0, c0s)
    nrm = bundle.norms
    X, _ = quadrature_points(mesh)
    G = _dense_sub(bundle.gram, free)
    M = _dense_sub(bundle.mass_lumped, free)
    out = {}

    def constant(Q, eps):
        return max(generalized_extreme(_dense_sub(Q, free) - eps * G, M), 0.0)

    for key, comps in (("a_hat", coeffs.a_hat), ("a_check", coeffs.a_check)):
        if nrm[key] > 0:
            sq = sum(capped(Expr(e).at(X), cap)[0] ** 2 for e in comps)
            eps = m / (20.0 * nrm[key])
            out[key] = (eps, constant(_weighted_mass(mesh, sq) / nrm[key] ** 2, eps ** 2))
    if nrm["lambda"] > 0:
        eps = m / (10.0 * nrm["lambda"])
        lam = np.abs(capped(Expr(coeffs.lam).at(X), cap)[0])
        out["lambda"] = (eps, constant(_weighted_mass(mesh, lam) / nrm["lambda"], eps))
    if nrm["beta"] > 0 and bundle.parts.get("boundary_beta") is not None:
        eps = m / (10.0 * nrm["beta"])
        Bb = assemble_boundary_beta(mesh, measure, "abs(%s)" % Expr(coeffs.beta).source,
                                    lumped=True, cap=cap)
        out["beta"] = (eps, constant(Bb / nrm["beta"], eps))
    if bundle.gamma0:
        eps = m / (10.0 * abs(bundle.gamma0))
        _, Bl = mass_matrices(mesh, measure, lumped=True)
        out["gamma0"] = (eps, constant(Bl, eps))
    return out


def compute_shift(c0, constants, norms, c0_star=None, gamma0=0.0):
    """Coercivity shift from measured constants.

    ``delta = c0 + 20 (C1 |a_hat|^2 + C2 |a_check|^2) / m + C3 |lambda|
    + C4 |beta| + C5 |gamma0|`` with ``m = min(c0, c0*)``; constants map a
    name to ``(eps, C_eps)``.
    """
    m = min(c0, c0 if c0_star is None else c0_star)
    need = [k for k in ("a_hat", "a_check", "lambda", "beta") if norms.get(k, 0) > 0]
    if gamma0:
        need.append("gamma0")
    missing = [k for k in need if k not in constants]
    if missing:
        raise ConfigurationError("missing embedding constants: %s" % ", ".join(missing))
    C = {k: constants[k][1] for k in need}
    delta = c0
    delta += 20.0 * (C.get("a_hat", 0.0) * norms.get("a_hat", 0.0) ** 2
                     + C.get("a_check", 0.0) * norms.get("a_check", 0.0) ** 2) / m
    delta += C.get("lambda", 0.0) * norms.get("lambda", 0.0)
    delta += C.get("beta", 0.0) * norms.get("beta", 0.0)
    delta += C.get("gamma0", 0.0) * abs(gamma0)
    return float(delta)


def coercivity_certificate(bundle, shift=None, free=None, tol=1e-8):
    """Smallest generalized eigenvalue of (E_sym + shift M, G).

    Returns
    -------
    kappa : float
    passed : bool
        ``kappa > tol``.
    """
    shift = bundle.shift if shift is None else shift
    E = _dense_sub(bundle.total(), free)
    A = 0.5 * (E + E.T) + shift * _dense_sub(bundle.mass_lumped, free)
    kappa = generalized_extreme(A, _dense_sub(bundle.gram, free), "min")
    return kappa, bool(kappa > tol)


def write_matrix_market(A, path_or_file):
    """Coordinate export with 17 significant digits; dense inputs list
    every entry."""
    if sp.issparse(A):
        C = sp.coo_matrix(A)
        C.sum_duplicates()
        order = np.lexsort((C.col, C.row))
        rows, cols, vals = C.row[order], C.col[order], C.data[order]
    else:
        A = np.asarray(A)
        rows, cols = np.indices(A.shape).reshape(2, -1)
        vals = A.ravel()
    lines = ["%%MatrixMarket matrix coordinate real general",
             "%d %d %d" % (A.shape[0], A.shape[1], len(vals))]
    lines += ["%d %d %.17g" % (i + 1, j + 1, v) for i, j, v in zip(rows, cols, vals)]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)
    return text
