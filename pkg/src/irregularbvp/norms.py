"""Discrete Lebesgue, pair and Besov norms for piecewise-linear fields."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .measure import boundary_density_on_mesh

# 7-point degree-5 rule on the reference triangle (barycentric, weights sum 1)
_a1, _b1 = 0.0597158717897698, 0.4701420641051151
_a2, _b2 = 0.7974269853530873, 0.1012865073234563
TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
TRI_W = np.array([0.225] + [0.1323941527885062] * 3 + [0.1259391805448272] * 3)

# 3-point Gauss rule on [0, 1]
EDGE_T = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
EDGE_W = np.array([5.0, 8.0, 5.0]) / 18.0


def quadrature_points(mesh):
    """Physical quadrature points (m, 7, 2) and weights (m, 7)."""
    P = mesh.nodes[mesh.triangles]
    X = np.einsum("qk,mkd->mqd", TRI_BARY, P)
    W = mesh.areas[:, None] * TRI_W[None, :]
    return X, W


def values_at_quadrature(mesh, u):
    """Interpolated nodal field at the triangle quadrature points."""
    return np.asarray(u, dtype=float)[mesh.triangles] @ TRI_BARY.T


def edge_quadrature(mesh, measure=None):
    """Edge quadrature points (b, 3, 2) and weights (b, 3) in d(mu).

    Without a measure the weights are arc length.
    """
    P = mesh.nodes[mesh.boundary_edges]
    X = P[:, None, 0, :] + EDGE_T[None, :, None] * (P[:, None, 1, :] - P[:, None, 0, :])
    L = mesh.boundary_edge_lengths()
    dens = 1.0 if measure is None else boundary_density_on_mesh(mesh, measure)
    W = (L * dens)[:, None] * EDGE_W[None, :]
    return X, W


def trace_at_quadrature(mesh, u):
    U = np.asarray(u, dtype=float)[mesh.boundary_edges]
    return U[:, None, 0] * (1 - EDGE_T) + U[:, None, 1] * EDGE_T


def _check_p(p):
    if p != np.inf and not p >= 1:
        raise ValidationError("exponent must be >= 1, got %r" % p)


def lp_norm_interior(mesh, u, p):
    """(int_Omega |u|^p dx)^(1/p); p = inf gives the nodal maximum."""
    _check_p(p)
    u = np.asarray(u, dtype=float)
    if p == np.inf:
        return float(np.max(np.abs(u)))
    vals = np.abs(values_at_quadrature(mesh, u))
    _, W = quadrature_points(mesh)
    return float(np.sum(W * vals ** p) ** (1.0 / p))


def lq_norm_boundary(mesh, u, measure, q):
    """(int_Gamma |u|^q dmu)^(1/q); q = inf gives the boundary nodal maximum."""
    _check_p(q)
    u = np.asarray(u, dtype=float)
    if q == np.inf:
        return float(np.max(np.abs(u[mesh.boundary_nodes])))
    vals = np.abs(trace_at_quadrature(mesh, u))
    _, W = edge_quadrature(mesh, measure)
    return float(np.sum(W * vals ** q) ** (1.0 / q))


def pair_norm(f_norm, g_norm, mode="finite"):
    """Norm of the pair (f, g): sum for finite exponents, max for r=s=inf."""
    if f_norm < 0 or g_norm < 0:
        raise ValidationError("norms must be nonnegative")
    if mode == "finite":
        return float(f_norm + g_norm)
    if mode == "sup":
        return float(max(f_norm, g_norm))
    raise ValidationError("mode must be 'finite' or 'sup'")


# ------------------------------------------------------------ Besov seminorms

def _sub_centroids(depth):
    """Barycentric centroids of the 4**depth uniform subtriangles."""
    k = 2 ** depth
    pts = []
    for i in range(k):
        for j in range(k - i):
            # upward triangle
            pts.append([(i + 1 / 3) / k, (j + 1 / 3) / k])
            if i + j < k - 1:
                pts.append([(i + 2 / 3) / k, (j + 2 / 3) / k])
    xi = np.array(pts)
    return xi, np.full(len(xi), 1.0 / len(xi))


def _pairwise_blocks(n, block=512):
    for s in range(0, n, block):
        yield slice(s, min(n, s + block))


def besov_seminorm_interior(mesh, u, s, p=2.0, depth=3):
    """Discrete Besov seminorm of a nodal field on Omega.

    Distinct triangles are paired through their centroids; each triangle's
    self-interaction uses the exact linear field on a uniform subdivision
    of the given depth, dropping coincident subcells.
    """
    if not 0 < s < 1:
        raise ValidationError("fractional order must lie in (0, 1)")
    _check_p(p)
    u = np.asarray(u, dtype=float)
    expo = s * p + 2.0
    P = mesh.nodes[mesh.triangles]
    C = P.mean(axis=1)
    uc = u[mesh.triangles].mean(axis=1)
    A = mesh.areas
    total = 0.0
    for blk in _pairwise_blocks(len(C)):
        D = np.linalg.norm(C[blk, None, :] - C[None, :, :], axis=2)
        num = np.abs(uc[blk, None] - uc[None, :]) ** p
        np.fill_diagonal(D[:, blk.start:blk.stop], np.inf)
        total += np.sum(A[blk, None] * A[None, :] * num / D ** expo)
    # self-interaction of each triangle on a subdivision
    xi, w = _sub_centroids(depth)
    I, J = np.triu_indices(len(xi), 1)
    dxi = xi[I] - xi[J]
    E1, E2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    dX = dxi[None, :, 0, None] * E1[:, None, :] + dxi[None, :, 1, None] * E2[:, None, :]
    du = (dxi[None, :, 0] * (u[mesh.triangles[:, 1]] - u[mesh.triangles[:, 0]])[:, None]
          + dxi[None, :, 1] * (u[mesh.triangles[:, 2]] - u[mesh.triangles[:, 0]])[:, None])
    r = np.linalg.norm(dX, axis=2)
    sub_area = A[:, None] * w[0]
    total += 2.0 * np.sum(sub_area ** 2 * np.abs(du) ** p / r ** expo)
    return float(total ** (1.0 / p))


def besov_seminorm_boundary(mesh, u, measure, d=None, p=2.0, depth=4):
    """Discrete boundary Besov seminorm with kernel exponent p + 2d - N."""
    _check_p(p)
    d = measure.dimension_d if d is None else float(d)
    u = np.asarray(u, dtype=float)
    expo = p + 2.0 * d - 2.0
    E = mesh.boundary_edges
    P = mesh.nodes[E]
    C = P.mean(axis=1)
    uc = u[E].mean(axis=1)
    M = mesh.boundary_edge_lengths() * boundary_density_on_mesh(mesh, measure)
    D = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
    np.fill_diagonal(D, np.inf)
    total = np.sum(M[:, None] * M[None, :] * np.abs(uc[:, None] - uc[None, :]) ** p / D ** expo)
    k = 2 ** depth
    t = (np.arange(k) + 0.5) / k
    I, J = np.triu_indices(k, 1)
    dt = t[I] - t[J]
    L = np.linalg.norm(P[:, 1] - P[:, 0], axis=1)
    du = (u[E[:, 1]] - u[E[:, 0]])
    total += 2.0 * np.sum((M[:, None] / k) ** 2 * np.abs(du[:, None] * dt[None, :]) ** p
                          / np.abs(L[:, None] * dt[None, :]) ** expo)
    return float(total ** (1.0 / p))


@dataclass
class NormReport:
    lp_interior: dict = field(default_factory=dict)
    lq_boundary: dict = field(default_factory=dict)
    linf_interior: float = 0.0
    linf_boundary: float = 0.0
    besov_interior: tuple = None
    besov_boundary: tuple = None

    def to_csv(self):
        rows = ["name,exponent,value"]
        for p, v in sorted(self.lp_interior.items()):
            rows.append("lp_interior,%.17g,%.17g" % (p, v))
        for q, v in sorted(self.lq_boundary.items()):
            rows.append("lq_boundary,%.17g,%.17g" % (q, v))
        rows.append("linf_interior,inf,%.17g" % self.linf_interior)
        rows.append("linf_boundary,inf,%.17g" % self.linf_boundary)
        if self.besov_interior is not None:
            rows.append("besov_interior,%.17g,%.17g" % self.besov_interior)
        if self.besov_boundary is not None:
            rows.append("besov_boundary,%.17g,%.17g" % self.besov_boundary)
        return "\n".join(rows) + "\n"


def norm_report(mesh, u, measure, exponents=(1.0, 2.0, 4.0)):
    rep = NormReport()
    for p in exponents:
        rep.lp_interior[p] = lp_norm_interior(mesh, u, p)
        rep.lq_boundary[p] = lq_norm_boundary(mesh, u, measure, p)
    rep.linf_interior = lp_norm_interior(mesh, u, np.inf)
    rep.linf_boundary = lq_norm_boundary(mesh, u, measure, np.inf)
    return rep
