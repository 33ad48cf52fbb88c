"""Inhomogeneous heat problem: theta-scheme time stepping, the energy
estimate, L-infinity ratio windows and the mild-solution residual."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import load_vector, mass_matrices, stiffness_laplace
from .coefficients import Expr
from .elliptic import build_system
from .errors import NumericError, ValidationError
from .norms import EDGE_T, TRI_BARY, edge_quadrature, quadrature_points

WINDOWS = ("half_tail", "full", "full_zero_start", "interior_window")


@dataclass
class ParabolicData:
    """Initial value, time-dependent sources and their Bochner exponents.

    ``f`` and ``g`` are expressions in x, y, t (or nodal arrays, constant in
    time); ``u0`` is an expression or a nodal array.
    """

    u0: object = "0"
    f: object = "0"
    g: object = "0"
    kappa1: float = 4.0
    kappa2: float = 4.0
    p: float = 4.0
    q: float = 4.0

    def admissible(self, N=2, d=1.0):
        """Exponent condition of the L-infinity estimate (all in [2, inf))."""
        vals = (self.kappa1, self.kappa2, self.p, self.q)
        if any(not 2.0 <= v < np.inf for v in vals):
            return False
        return bool(1.0 / self.kappa1 + N / (2.0 * self.p) < 1.0
                    and 1.0 / self.kappa2 + d / (2.0 * self.q * (d + 2.0 - N)) < 0.5)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    theta: float
    spec: object
    data: ParabolicData
    mass: object = field(repr=False, default=None)
    operator: object = field(repr=False, default=None)
    loads: np.ndarray = field(repr=False, default=None)
    step_residual: float = 0.0
    step_thetas: np.ndarray = field(repr=False, default=None)

    @property
    def dt(self):
        return np.diff(self.times)

    def to_csv(self):
        mesh = self.spec.mesh
        M = self.mass
        b = mesh.boundary_nodes
        rows = ["t,norm2,normInf_interior,normInf_boundary"]
        for t, u in zip(self.times, self.states):
            rows.append("%.17g,%.17g,%.17g,%.17g" % (
                t, np.sqrt(max(u @ (M @ u), 0.0)), np.abs(u).max(), np.abs(u[b]).max()))
        return "\n".join(rows) + "\n"


def _nodal(expr, mesh):
    if isinstance(expr, np.ndarray):
        return np.asarray(expr, dtype=float)
    return Expr(expr).at(mesh.nodes)


class _Solver:
    def __init__(self, A):
        self.sparse = sp.issparse(A)
        try:
            self.f = splu(sp.csc_matrix(A)) if self.sparse else sla.lu_factor(A)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise NumericError("step matrix is singular: %s" % exc)

    def __call__(self, b):
        return self.f.solve(b) if self.sparse else sla.lu_solve(self.f, b)


def step_parabolic(spec, data, dt, theta=1.0, T=1.0, startup=None):
    """Theta-scheme for M u' + E u = F with the lumped volume mass M.

    Parameters
    ----------
    spec : ProblemSpec
        Operator, boundary regime and geometry; its ``f`` and ``g`` are
        ignored in favor of ``data``.
    data : ParabolicData
    dt : float
    theta : float in [1/2, 1]
    T : float
    startup : int, optional
        Number of initial backward Euler steps when theta < 1; damps the
        stiff components of the initial value (default 2, 0 for theta = 1).
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not 0.5 <= theta <= 1.0:
        raise ValidationError("theta must lie in [1/2, 1]; explicit schemes are refused")
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * T:
        raise ValidationError("T must be a multiple of dt")
    bundle, free, _, _ = build_system(spec, with_certificate=False)
    mesh = spec.mesh
    E = bundle.total()
    M = bundle.mass_lumped
    if not sp.issparse(E):
        M = M.toarray()
    n = mesh.n_nodes
    fixed = np.setdiff1d(np.arange(n), free)
    times = np.linspace(0.0, T, nsteps + 1)
    loads = np.array([load_vector(mesh, spec.measure, data.f, data.g, t) for t in times])
    if startup is None:
        startup = 0 if theta == 1.0 else 2
    thetas = np.where(np.arange(nsteps) < startup, 1.0, theta)
    systems = {}
    for th in np.unique(thetas):
        lhs = M + th * dt * E
        rhs_op = M - (1.0 - th) * dt * E
        if len(fixed):
            lhs, rhs_op = _restrict(lhs, free), _restrict(rhs_op, free)
        systems[th] = (lhs, rhs_op, _Solver(lhs))
    U = np.zeros((nsteps + 1, n))
    U[0] = _nodal(data.u0, mesh)
    U[0, fixed] = 0.0
    worst = 0.0
    for k, th in enumerate(thetas):
        lhs, rhs_op, solve = systems[th]
        b = rhs_op @ U[k, free] + dt * (th * loads[k + 1, free] + (1.0 - th) * loads[k, free])
        x = solve(b)
        nb = np.linalg.norm(b)
        r = np.linalg.norm(lhs @ x - b)
        worst = max(worst, r / nb if nb > 0 else r)
        U[k + 1, free] = x
    if worst > 1e-9:
        raise NumericError("step residual %.3g exceeds 1e-9" % worst)
    return Trajectory(times, U, float(theta), spec, data, M, E, loads, float(worst), thetas)


def _restrict(A, free):
    return A[free][:, free] if sp.issparse(A) else A[np.ix_(free, free)]


# --------------------------------------------------------------- estimates

def _time_weights(times, theta):
    """Quadrature weights on the time grid matching the scheme (theta may
    vary per step)."""
    dt = np.diff(times)
    th = np.broadcast_to(np.asarray(theta, dtype=float), dt.shape)
    w = np.zeros(len(times))
    w[1:] += th * dt
    w[:-1] += (1.0 - th) * dt
    return w


def _data_sq_norms(traj):
    """Per-time |f|_2**2 and |g|_{2, Gamma}**2 at the grid times."""
    return _data_norms(traj, 2.0, 2.0, squared=True)


def _data_norms(traj, p, q, squared=False):
    mesh, mu, data = traj.spec.mesh, traj.spec.measure, traj.data
    X, W = quadrature_points(mesh)
    Xe, We = edge_quadrature(mesh, mu)
    fn, gn = [], []
    for t in traj.times:
        fv = (data.f[mesh.triangles] @ TRI_BARY.T if isinstance(data.f, np.ndarray)
              else Expr(data.f).at(X, t))
        gv = (data.g[mesh.boundary_edges] @ np.vstack([1 - EDGE_T, EDGE_T])
              if isinstance(data.g, np.ndarray) else Expr(data.g).at(Xe, t))
        a = np.sum(W * np.abs(fv) ** p)
        b = np.sum(We * np.abs(gv) ** q)
        fn.append(a if squared else a ** (1.0 / p))
        gn.append(b if squared else b ** (1.0 / q))
    return np.array(fn), np.array(gn)


@dataclass
class EnergyCheck:
    lhs: float
    rhs: float
    c_measured: float


def energy_estimate_check(traj):
    """Both sides of the energy estimate on the time grid.

    lhs = sup |u|_2**2 + int |grad u|**2 + int (Lambda(u, u) + |u|_Gamma**2),
    rhs = |u0|_2**2 + int |f|_2**2 + int |g|_{2, Gamma}**2.
    """
    spec = traj.spec
    mesh = spec.mesh
    M, B = mass_matrices(mesh, spec.measure, lumped=True)
    K = stiffness_laplace(mesh)
    Lam = None
    if spec.regime == "W":
        from .elliptic import wentzell_form
        Lam = wentzell_form(spec).gram
    w = _time_weights(traj.times, traj.step_thetas)
    U = traj.states
    l2 = np.einsum("ti,ti->t", U, (M @ U.T).T)
    grad = np.einsum("ti,ti->t", U, (K @ U.T).T)
    bd = np.einsum("ti,ti->t", U, (B @ U.T).T)
    if Lam is not None:
        bd = bd + np.einsum("ti,ti->t", U, (Lam @ U.T).T)
    lhs = float(l2.max() + np.sum(w * (grad + bd)))
    fsq, gsq = _data_sq_norms(traj)
    rhs = float(l2[0] + np.sum(w * (fsq + gsq)))
    if rhs == 0.0:
        c = 0.0 if lhs == 0.0 else np.inf
    else:
        c = lhs / rhs
    return EnergyCheck(lhs, rhs, float(c))


@dataclass
class LinfRow:
    window: str
    t_start: float
    t_end: float
    sup_interior: float
    sup_boundary: float
    u_l2l2: float
    u0_term: float
    f_norm: float
    g_norm: float
    ratio: float
    asserted: bool

    HEADER = ("window,t_start,t_end,sup_interior,sup_boundary,u_l2l2,u0_term,"
              "f_norm,g_norm,ratio,asserted")

    def to_csv_line(self):
        return "%s,%s,%d" % (self.window, ",".join("%.17g" % v for v in (
            self.t_start, self.t_end, self.sup_interior, self.sup_boundary, self.u_l2l2,
            self.u0_term, self.f_norm, self.g_norm, self.ratio)), int(self.asserted))


def bochner_norm(values, weights, kappa):
    return float(np.sum(weights * np.abs(values) ** kappa) ** (1.0 / kappa))


def linf_estimate_check(traj, window="half_tail", T1=None, T2=None):
    """Sup-in-window nodal norms against the data terms of the selected
    L-infinity estimate.

    Windows: ``half_tail`` ([T/2, T], with |u|_{L2 L2}), ``full_zero_start``
    ([0, T], u0 = 0, with |u|_{L2 L2}), ``full`` ([0, T], interior sup only,
    with |u0|_inf) and ``interior_window`` ([T1, T2], with |u0|_2).
    ``asserted`` is False when the exponents are not admissible.
    """
    if window not in WINDOWS:
        raise ValidationError("window must be one of %s" % ", ".join(WINDOWS))
    t = traj.times
    T = t[-1]
    data = traj.data
    mesh = traj.spec.mesh
    if window == "half_tail":
        a, b = T / 2.0, T
    elif window in ("full", "full_zero_start"):
        a, b = 0.0, T
    else:
        if T1 is None or T2 is None or not 0 < T1 < T2 <= T:
            raise ValidationError("interior window needs 0 < T1 < T2 <= T")
        a, b = T1, T2
    sel = (t >= a - 1e-12) & (t <= b + 1e-12)
    U = traj.states
    bn = mesh.boundary_nodes
    s_int = float(np.abs(U[sel]).max())
    s_bd = float(np.abs(U[sel][:, bn]).max())
    w = _time_weights(t, traj.step_thetas)
    M = traj.mass
    l2 = np.sqrt(np.maximum(np.einsum("ti,ti->t", U, (M @ U.T).T), 0.0))
    u_l2l2 = float(np.sqrt(np.sum(w * l2 ** 2)))
    fn, gn = _data_norms(traj, data.p, data.q)
    fb = bochner_norm(fn, w, data.kappa1)
    gb = bochner_norm(gn, w, data.kappa2)
    if window == "full_zero_start" and np.abs(U[0]).max() > 0:
        raise ValidationError("the zero-start window needs u0 = 0")
    if window in ("half_tail", "full_zero_start"):
        num, extra = max(s_int, s_bd), u_l2l2
        u0_term = 0.0
    elif window == "full":
        num, extra = s_int, 0.0
        u0_term = float(np.abs(U[0]).max())
    else:
        num, extra = max(s_int, s_bd), 0.0
        u0_term = float(l2[0])
    den = extra + u0_term + fb + gb
    ratio = 0.0 if num == 0.0 else (num / den if den > 0 else np.inf)
    return LinfRow(window, a, b, s_int, s_bd, u_l2l2, u0_term, fb, gb, float(ratio),
                   data.admissible(2, traj.spec.measure.dimension_d))


def mild_solution_residual(traj, data_quadrature="scheme"):
    """max_n |M (u_n - u_0) + E int_0^{t_n} u - int_0^{t_n} F| over basis
    tests.

    The integral of u uses the scheme's time quadrature. The integral of F
    uses the same rule (``"scheme"``, which the discrete solution satisfies
    exactly) or a 3-point Gauss rule per step (``"gauss"``), which exposes
    the time discretization error.
    """
    if data_quadrature not in ("scheme", "gauss"):
        raise ValidationError("data_quadrature must be 'scheme' or 'gauss'")
    spec = traj.spec
    U, F, M, E = traj.states, traj.loads, traj.mass, traj.operator
    n = U.shape[1]
    free = np.arange(n) if spec.dirichlet_mask is None else \
        np.setdiff1d(np.arange(n), spec.mesh.nodes_with_tag(spec.dirichlet_mask))
    t = traj.times
    dt = np.diff(t)
    gx = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
    gw = np.array([5.0, 8.0, 5.0]) / 18.0
    iu = np.zeros(n)
    iF = np.zeros(n)
    worst = 0.0
    for k in range(len(dt)):
        th = traj.step_thetas[k]
        iu += dt[k] * (th * U[k + 1] + (1 - th) * U[k])
        if data_quadrature == "scheme":
            iF += dt[k] * (th * F[k + 1] + (1 - th) * F[k])
        else:
            for x, w in zip(gx, gw):
                iF += dt[k] * w * load_vector(spec.mesh, spec.measure, traj.data.f,
                                              traj.data.g, t[k] + x * dt[k])
        r = M @ (U[k + 1] - U[0]) + E @ iu - iF
        worst = max(worst, float(np.abs(r[free]).max()))
    return worst


def homogeneous_growth(traj):
    """Measured M and omega in |u(t)|_inf <= M exp(omega t) |u0|_inf."""
    u0 = np.abs(traj.states[0]).max()
    if u0 == 0:
        return 0.0, 0.0
    ratios = np.abs(traj.states).max(axis=1) / u0
    t = traj.times
    Mest = float(ratios.max())
    omega = float(np.max(np.log(np.maximum(ratios[1:], 1e-300) / Mest) / t[1:])) if len(t) > 1 else 0.0
    return Mest, omega
