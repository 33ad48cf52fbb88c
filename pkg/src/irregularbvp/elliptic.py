"""Stationary problem: weak solve, sub/supersolution tests, inverse
positivity and a priori estimate reports."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (assemble_bundle, coercivity_certificate, compute_shift,
                       load_vector, measure_embedding_constants, _to_dense)
from .coefficients import CoefficientField, Expr
from .errors import CoercivityError, ConfigurationError, NumericError, ValidationError
from .geometry import Mesh
from .measure import BoundaryMeasure
from .nonlocal_ops import (assemble_besov_boundary, assemble_besov_interior,
                           assemble_dtn)
from .norms import (edge_quadrature, lp_norm_interior, lq_norm_boundary,
                    quadrature_points)
from .wentzell import assemble_koch_energy, assemble_riemannian, weak_coercivity_constants

SHIFT_MODES = ("auto_delta_star", "coercive_xi", "coercive_zeta", "none")
SURROGATE_EXPONENT = 8.0


@dataclass
class ProblemSpec:
    """Stationary boundary value problem on a meshed domain.

    Attributes
    ----------
    mesh : Mesh
    measure : BoundaryMeasure
        Boundary measure on the polygon of ``mesh.domain``.
    coeffs : CoefficientField
    regime : {"N", "R", "W"}
    f, g : expression or nodal array
    p, q : float
        Integrability exponents of the data.
    nonlocal_kind : {"none", "besov", "dtn"}
    nonlocal_params : dict
        ``s`` and ``parts`` ("interior", "boundary" or "both") for Besov;
        ``gamma`` for the DtN map (defaults to ``coeffs.gamma`` or 1).
    nonlocal_data : bool
        Right-hand side from nonlocal operators applied to the data.
    data_exponents : (float, float)
        (p_tilde, q_tilde) of the nonlocal-data kernels.
    dirichlet_mask : str, optional
        Boundary tag whose nodes are constrained to zero.
    shift_mode : one of SHIFT_MODES
    shift_value : float
        xi or zeta for the coercive modes.
    """

    mesh: Mesh
    measure: BoundaryMeasure
    coeffs: CoefficientField
    regime: str = "R"
    f: object = "0"
    g: object = "0"
    p: float = 2.0
    q: float = 2.0
    nonlocal_kind: str = "none"
    nonlocal_params: dict = field(default_factory=dict)
    nonlocal_data: bool = False
    data_exponents: tuple = (2.0, 2.0)
    dirichlet_mask: str = None
    shift_mode: str = "none"
    shift_value: float = 0.0
    lumped: bool = True

    def __post_init__(self):
        if self.regime not in ("N", "R", "W"):
            raise ValidationError("regime must be N, R or W")
        if self.nonlocal_kind not in ("none", "besov", "dtn"):
            raise ValidationError("nonlocal must be none, besov or dtn")
        if self.shift_mode not in SHIFT_MODES:
            raise ValidationError("shift_mode must be one of %s" % ", ".join(SHIFT_MODES))
        check_data_exponents(self.p, self.q, 2, self.measure.dimension_d)
        if self.regime == "W" and self.coeffs.wentzell is None:
            raise ConfigurationError("regime W requires a Wentzell specification")
        if self.regime == "W" and self.coeffs.wentzell.kind == "koch":
            dom = self.mesh.domain
            if dom is None or dom.family != "snowflake":
                raise ConfigurationError("Koch energy requires a snowflake domain")


def check_data_exponents(p, q, N=2, d=1.0):
    """Data exponents must satisfy p >= (2*_N)' and q >= (2*_d)'.

    For N = 2 both critical exponents are arbitrary finite numbers, so the
    duals can be any number above 1 and p, q >= 1 is required.
    """
    if N == 2:
        lo_p = lo_q = 1.0
    else:
        lo_p = 2.0 * N / (N + 2.0)
        lo_q = 2.0 * d / (2.0 * d - N + 2.0)
    if not (p >= lo_p and q >= lo_q):
        raise ValidationError("data exponents (%g, %g) below the dual critical exponents"
                              " (%g, %g)" % (p, q, lo_p, lo_q))


# ------------------------------------------------------------------ solving

@dataclass
class SolutionField:
    values: np.ndarray
    spec: ProblemSpec
    residual_norm: float
    matrix: object = field(repr=False, default=None)
    rhs: np.ndarray = field(repr=False, default=None)
    free: np.ndarray = field(repr=False, default=None)
    kappa: float = None
    certificate_passed: bool = None
    shift: float = 0.0
    pinned_mean: bool = False
    bundle: object = field(repr=False, default=None)
    constants: dict = field(default_factory=dict)


def _shifted_coeffs(spec):
    c = spec.coeffs
    if spec.shift_mode == "coercive_xi":
        return replace(c, lam="(%s)+(%r)" % (Expr(c.lam).source, float(spec.shift_value)))
    if spec.shift_mode == "coercive_zeta":
        return replace(c, beta="(%s)+(%r)" % (Expr(c.beta).source, float(spec.shift_value)))
    return c


def wentzell_form(spec):
    w = spec.coeffs.wentzell
    if w.kind == "koch":
        return assemble_koch_energy(spec.mesh.domain, w.rho, spec.mesh, w.scale)
    return assemble_riemannian(spec.mesh, w.omega, w.b_hat, w.b_check)


def nonlocal_operator(spec, dim_exponent=2.0, boundary_exponent=None):
    """Dense nonlocal matrix on the full numbering (None for 'none')."""
    prm = spec.nonlocal_params
    if spec.nonlocal_kind == "none":
        return None
    if spec.nonlocal_kind == "dtn":
        gamma = prm.get("gamma", spec.coeffs.gamma if spec.coeffs.gamma is not None else "1")
        return assemble_dtn(spec.mesh, gamma).values
    parts = prm.get("parts", "both")
    out = np.zeros((spec.mesh.n_nodes,) * 2)
    if parts in ("interior", "both"):
        out += assemble_besov_interior(spec.mesh, prm.get("fractional_order", 0.5), spec.coeffs.kernel_a,
                                       dim_exponent).values
    if parts in ("boundary", "both"):
        out += assemble_besov_boundary(spec.mesh, spec.measure, kernel_b=spec.coeffs.kernel_b,
                                       exponent=boundary_exponent).values
    return out


def _rhs(spec, t=0.0):
    if not spec.nonlocal_data:
        return load_vector(spec.mesh, spec.measure, spec.f, spec.g, t)
    # nonlocal data: the data kernels use the modified exponents
    pt, qt = spec.data_exponents
    d = spec.measure.dimension_d
    mesh = spec.mesh
    fh = spec.f if isinstance(spec.f, np.ndarray) else Expr(spec.f).at(mesh.nodes, t)
    gh = spec.g if isinstance(spec.g, np.ndarray) else Expr(spec.g).at(mesh.nodes, t)
    s = spec.nonlocal_params.get("fractional_order", 0.5)
    J = assemble_besov_interior(mesh, s, spec.coeffs.kernel_a, 2.0 * 2 / pt)
    T = assemble_besov_boundary(mesh, spec.measure, kernel_b=spec.coeffs.kernel_b,
                                exponent=2.0 + (4.0 * d - 4.0) / qt)
    return J.values @ fh + T.values @ gh


def free_dofs(spec):
    n = spec.mesh.n_nodes
    if spec.dirichlet_mask is None:
        return np.arange(n)
    fixed = spec.mesh.nodes_with_tag(spec.dirichlet_mask)
    return np.setdiff1d(np.arange(n), fixed)


def build_system(spec, with_certificate=True):
    """Assemble the bundle, choose the shift and compute the certificate."""
    coeffs = _shifted_coeffs(spec)
    went = wentzell_form(spec) if spec.regime == "W" else None
    bundle = assemble_bundle(spec.mesh, spec.measure, coeffs, spec.regime, went,
                             nonlocal_operator(spec), spec.lumped, spec.lumped)
    free = free_dofs(spec)
    sub = None if len(free) == spec.mesh.n_nodes else free
    if went is not None:
        bundle.c0_star, bundle.gamma0 = weak_coercivity_constants(went, _boundary_lumped(spec))
    constants = {}
    if spec.shift_mode == "auto_delta_star":
        constants = measure_embedding_constants(spec.mesh, spec.measure, coeffs, bundle, sub)
        bundle.constants = constants
        bundle.shift = compute_shift(bundle.c0, constants, bundle.norms, bundle.c0_star,
                                     bundle.gamma0)
    kappa = passed = None
    if with_certificate:
        kappa, passed = coercivity_certificate(bundle, free=sub)
    return bundle, free, kappa, passed


def _boundary_lumped(spec):
    from .assembly import mass_matrices
    return mass_matrices(spec.mesh, spec.measure, lumped=True)[1]


def _factor_solve(A, b):
    if sp.issparse(A):
        try:
            return splu(sp.csc_matrix(A)).solve(b)
        except RuntimeError as exc:
            raise NumericError("sparse factorization failed: %s" % exc)
    try:
        return sla.lu_solve(sla.lu_factor(A, check_finite=True), b)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericError("dense factorization failed: %s" % exc)


def solve_elliptic(spec, certificate=True):
    """Weak solution of the (possibly shifted) stationary problem.

    Raises
    ------
    CoercivityError
        When the unshifted form fails the certificate and the problem is not
        a compatible pure-Neumann one (handled by pinning the mean).
    """
    bundle, free, kappa, passed = build_system(spec, with_certificate=certificate)
    n = spec.mesh.n_nodes
    A = bundle.total(include_shift=True)
    F = _rhs(spec)
    Af = A[free][:, free] if sp.issparse(A) else A[np.ix_(free, free)]
    Ff = F[free]
    pinned = False
    if certificate and not passed:
        ones = np.ones(len(free))
        mvec = bundle.mass_interior @ np.ones(n)
        mvec = mvec[free]
        scale = max(1.0, np.abs(_to_dense(Af)).max())
        annihilates = (len(free) == n and np.abs(Af @ ones).max() <= 1e-9 * scale
                       and np.abs(ones @ Af).max() <= 1e-9 * scale)
        compatible = abs(Ff.sum()) <= 1e-9 * max(1.0, np.abs(Ff).sum())
        # constants must be the only kernel direction
        if annihilates and compatible and spec.shift_mode == "none":
            K = sp.bmat([[sp.csr_matrix(Af), sp.csr_matrix(mvec[:, None])],
                         [sp.csr_matrix(mvec[None, :]), None]]).tocsc()
            sol = _factor_solve(K, np.append(Ff, 0.0))
            uf = sol[:-1]
            pinned = True
        else:
            raise CoercivityError(
                "form is not coercive without a shift (kappa = %.6g)" % kappa,
                certificate={"kappa": kappa, "shift": bundle.shift, "c0": bundle.c0,
                             "shift_mode": spec.shift_mode,
                             "compatible": bool(compatible), "annihilates": bool(annihilates)})
    else:
        uf = _factor_solve(Af, Ff)
    r = Af @ uf - Ff
    denom = max(np.linalg.norm(Ff), np.linalg.norm(Af @ uf), 1e-300)
    res = float(np.linalg.norm(r) / denom) if np.linalg.norm(Ff) > 0 else float(np.linalg.norm(r))
    if pinned:
        res = float(np.linalg.norm(r - r.mean()) / max(np.linalg.norm(Ff), 1e-300)) \
            if np.linalg.norm(Ff) > 0 else float(np.linalg.norm(r))
    u = np.zeros(n)
    u[free] = uf
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite solution")
    return SolutionField(u, spec, res, A, F, free, kappa, passed, bundle.shift, pinned,
                         bundle, bundle.constants)


def weak_residual(field_):
    """E(u, phi_i) - F_i for every free basis function."""
    A, F, free = field_.matrix, field_.rhs, field_.free
    return (A @ field_.values - F)[free]


def check_subsolution(field_, trials=20, rng=None, sense="sub", tol=1e-9):
    """Test E(u, phi) <= F(phi) (sense 'sub') or >= (sense 'super') over all
    nonnegative hats and random nonnegative combinations."""
    if sense not in ("sub", "super"):
        raise ValidationError("sense must be 'sub' or 'super'")
    rng = np.random.default_rng(0) if rng is None else rng
    A, F, free = field_.matrix, field_.rhs, field_.free
    Au = A @ field_.values
    scale = np.abs(A) @ np.abs(field_.values) if sp.issparse(A) else np.abs(A) @ np.abs(field_.values)
    scale = (scale + np.abs(F) + 1.0)[free]
    r = (Au - F)[free]
    if sense == "super":
        r = -r
    if np.any(r > tol * scale):
        return False
    for _ in range(trials):
        phi = rng.random(len(free))
        if phi @ r > tol * (phi @ scale):
            return False
    return True


def verify_inverse_positivity(spec, tol=1e-10):
    """Solve with nonnegative data and check min u >= -tol max(1, |u|_inf).

    Returns
    -------
    min_u : float
    passed : bool
    field : SolutionField
    """
    X, _ = quadrature_points(spec.mesh)
    Xe, _ = edge_quadrature(spec.mesh, spec.measure)

    def values(d, P):
        return d[spec.mesh.triangles] if isinstance(d, np.ndarray) else Expr(d).at(P)

    if np.min(values(spec.f, X)) < 0 or np.min(values(spec.g, Xe)) < 0:
        raise ValidationError("inverse positivity needs nonnegative data")
    sol = solve_elliptic(spec)
    umin = float(sol.values.min())
    passed = umin >= -tol * max(1.0, float(np.abs(sol.values).max()))
    return umin, bool(passed), sol


# ------------------------------------------------------------ exponent table

@dataclass(frozen=True)
class AnyExponent:
    """Any finite exponent in (lower, inf) (or [lower, inf) when closed)."""

    lower: float
    closed: bool = False

    def __str__(self):
        return "any r in %s%g,inf)" % ("[" if self.closed else "(", self.lower)


def critical_exponents(N, d):
    """(2*_N, 2*_d); for N = 2 these are sentinels 'any r in [2, inf)'."""
    if N == 2:
        return AnyExponent(2.0, True), AnyExponent(2.0, True)
    return 2.0 * N / (N - 2.0), 2.0 * d / (N - 2.0)


def exponent_case(p, q, N, d):
    """Index (1 to 5) of the branch of the exponent table."""
    Pc, Qc = N / 2.0, d / (d + 2.0 - N)
    if p > Pc and q > Qc:
        return 5
    if (p == Pc and q >= Qc) or (q == Qc and p >= Pc):
        return 4
    if p < Pc and q < Qc:
        return 1
    if (p < Pc and q >= Qc) or (q < Qc and Pc <= p < q):
        return 2
    if q < Qc and p >= max(Pc, q):
        return 3
    raise ValidationError("exponents (%g, %g) fall outside the table" % (p, q))


def exponent_table(p, q, N=2, d=1.0, improved=False):
    """Exponents (m1, m2) of the a priori estimate.

    Returns floats, ``math.inf`` or AnyExponent sentinels. With
    ``improved=True`` and p < N/2, q >= p (N-2)/(N-2p) the refined
    pair m1 = Np/(N-2p), m2 = dp/(N-2p) is returned.
    """
    if N < 2 or not (N - 2 < d < N or (N == 2 and 0 < d < 2)):
        raise ValidationError("need N >= 2 and d in (N-2, N)")
    if N > 2:
        check_data_exponents(p, q, N, d)
    elif not (p >= 1 and q >= 1):
        raise ValidationError("need p, q >= 1 for N = 2")
    case = exponent_case(p, q, N, d)
    if case == 5:
        return math.inf, math.inf
    if case == 4:
        if N == 2:
            return AnyExponent(2.0, True), AnyExponent(2.0, True)
        r, s = critical_exponents(N, d)
        return AnyExponent(r), AnyExponent(s)
    if improved and p < N / 2.0 and q >= p * (N - 2.0) / (N - 2.0 * p):
        return N * p / (N - 2.0 * p), d * p / (N - 2.0 * p)
    if case == 1:
        mn = min(p * (N - 2.0) / (N - 2.0 * p),
                 q * (N - 2.0) / (N * q - 2.0 * q - d * q + d))
        return N / (N - 2.0) * mn, d / (N - 2.0) * mn
    if case == 2:
        den = N * p - 2.0 * p - d * p + d
        return N * p / den, d * p / den
    den = N * q - 2.0 * q - d * q + d
    return N * q / den, d * q / den


def _surrogate(m):
    return SURROGATE_EXPONENT if (m == math.inf or isinstance(m, AnyExponent)) else float(m)


@dataclass
class EstimateRow:
    case: str
    p: float
    q: float
    m1: object
    m2: object
    norm_u_m1: float
    norm_u_m2_boundary: float
    norm_u_inf: float
    data_norm: float
    u2: float
    ratio: float
    ratio_data_only: float = None

    HEADER = "case,p,q,m1,m2,norm_u_m1,norm_u_m2_boundary,norm_u_inf,data_norm,u2,ratio"

    def to_csv_line(self):
        def fmt(v):
            if isinstance(v, AnyExponent):
                return str(v).replace(",", ";")
            return "%.17g" % v
        return ",".join([self.case] + [fmt(v) for v in (
            self.p, self.q, self.m1, self.m2, self.norm_u_m1, self.norm_u_m2_boundary,
            self.norm_u_inf, self.data_norm, self.u2, self.ratio)])


def data_pair_norm(mesh, measure, f, g, p, q, t=0.0):
    """|f|_{p, Omega} + |g|_{q, Gamma} by quadrature."""
    X, W = quadrature_points(mesh)
    Xe, We = edge_quadrature(mesh, measure)

    def vals(d, P, conn, basis):
        if isinstance(d, np.ndarray):
            return d[conn] @ basis
        return Expr(d).at(P, t)

    from .norms import EDGE_T, TRI_BARY
    fv = vals(f, X, mesh.triangles, TRI_BARY.T)
    gv = vals(g, Xe, mesh.boundary_edges, np.vstack([1 - EDGE_T, EDGE_T]))
    fn = float(np.sum(W * np.abs(fv) ** p) ** (1 / p))
    gn = float(np.sum(We * np.abs(gv) ** q) ** (1 / q))
    return fn + gn


def estimate_report(field_, case="", coercive=None):
    """Measured constant of the a priori estimate for a solved field."""
    spec = field_.spec
    mesh, mu, u = spec.mesh, spec.measure, field_.values
    m1, m2 = exponent_table(spec.p, spec.q, 2, mu.dimension_d)
    r1, r2 = _surrogate(m1), _surrogate(m2)
    n1 = lp_norm_interior(mesh, u, r1)
    n2 = lq_norm_boundary(mesh, u, mu, r2)
    ninf = max(lp_norm_interior(mesh, u, np.inf), lq_norm_boundary(mesh, u, mu, np.inf))
    dn = data_pair_norm(mesh, mu, spec.f, spec.g, spec.p, spec.q)
    u2 = lp_norm_interior(mesh, u, 2)
    den = dn + u2
    ratio = 0.0 if n1 + n2 == 0 else (n1 + n2) / den
    row = EstimateRow(case or "%s-%s" % (spec.regime, spec.nonlocal_kind), spec.p, spec.q, m1, m2,
                      n1, n2, ninf, dn, u2, ratio)
    if coercive is None:
        coercive = spec.shift_mode in ("coercive_xi", "coercive_zeta") or bool(
            field_.certificate_passed and spec.shift_mode == "none")
    if coercive:
        row.ratio_data_only = 0.0 if n1 + n2 == 0 else (n1 + n2) / dn
    return row
