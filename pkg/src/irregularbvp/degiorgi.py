"""De Giorgi truncation diagnostics: Moser test functions, level sets, the
(y_n, z_n) sequences and the two-sequence recursion lemma."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .norms import (EDGE_T, edge_quadrature, lp_norm_interior, quadrature_points,
                    trace_at_quadrature, values_at_quadrature)


def psi(x, t, m):
    """Piecewise power map: 0 for x <= 0, x**t on [0, m], m**(t-1) x above."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, 0.0, m)
    return np.where(x <= 0, 0.0, np.where(x <= m, xc ** t, m ** (t - 1.0) * x))


def moser_test_functions(u, k, m):
    """Nodal w_m = psi_{k/2, m}(u) and v_m = psi_{k-1, m}(u).

    Parameters
    ----------
    u : array
    k : float >= 2
    m : float >= 1
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    if m < 1:
        raise ValidationError("m must be >= 1")
    u = np.asarray(u, dtype=float)
    return psi(u, k / 2.0, m), psi(u, k - 1.0, m)


def moser_identity_error(u, k, m):
    """max |w_m**2 - u v_m| on {0 <= u <= m}, and |w_m**2 - m**(k-2) u v_m|
    ... on {u >= m} the identity reads w_m**2 = m**(k-2) u**2 = u v_m."""
    w, v = moser_test_functions(u, k, m)
    mask = np.asarray(u) >= 0
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(w[mask] ** 2 - u[mask] * v[mask])))


def _tri_fraction(mesh, u, k):
    return (values_at_quadrature(mesh, u) > k).mean(axis=1)


def level_sets(mesh, u, k, measure=None):
    """(u - k)^+ nodally, |Omega_k| and mu(Gamma_k) by quadrature-point
    fractions."""
    u = np.asarray(u, dtype=float)
    uk = np.maximum(u - k, 0.0)
    area = float(np.sum(mesh.areas * _tri_fraction(mesh, u, k)))
    _, We = edge_quadrature(mesh, measure)
    frac_e = (trace_at_quadrature(mesh, u) > k).mean(axis=1)
    bmass = float(np.sum(We.sum(axis=1) * frac_e))
    return uk, area, bmass


def exact_superlevel_area(mesh, u, k):
    """Exact area of {u > k} for the piecewise-linear interpolant (clipping)."""
    from shapely.geometry import Polygon

    total = 0.0
    for tri in mesh.triangles:
        P, U = mesh.nodes[tri], u[tri] - k
        pts = []
        for a in range(3):
            b = (a + 1) % 3
            if U[a] > 0:
                pts.append(P[a])
            if (U[a] > 0) != (U[b] > 0):
                t = U[a] / (U[a] - U[b])
                pts.append(P[a] + t * (P[b] - P[a]))
        if len(pts) >= 3:
            total += Polygon(pts).area
    return total


@dataclass
class TruncationSequence:
    k_hat: float
    levels: np.ndarray
    y: np.ndarray
    z: np.ndarray
    theta: float
    converged: bool

    def to_csv(self):
        rows = ["n,k_n,y_n,z_n"]
        rows += ["%d,%.17g,%.17g,%.17g" % (i, k, y, z)
                 for i, (k, y, z) in enumerate(zip(self.levels, self.y, self.z))]
        return "\n".join(rows) + "\n"


def degiorgi_sequence(mesh, u, k_hat, n_max=12, measure=None, s1=4.0, s2=4.0,
                      theta=0.5, threshold=1e-8):
    """Sequences y_n = k_hat**-2 |u_{k_n}|_2**2 and
    z_n = |Omega_{k_n}|**(2/s1) + mu(Gamma_{k_n})**(2/s2) with
    k_n = (2 - 2**-n) k_hat.

    ``u`` may be a single nodal vector or an array of states (trajectory);
    for a trajectory the time-maximum of each quantity is used.
    """
    if not k_hat > 0:
        raise ValidationError("k_hat must be positive")
    states = np.atleast_2d(np.asarray(u, dtype=float))
    n = np.arange(n_max + 1)
    levels = (2.0 - 2.0 ** (-n)) * k_hat
    y = np.zeros(len(n))
    z = np.zeros(len(n))
    for i, k in enumerate(levels):
        for s in states:
            uk, area, bmass = level_sets(mesh, s, k, measure)
            y[i] = max(y[i], lp_norm_interior(mesh, uk, 2) ** 2 / k_hat ** 2)
            z[i] = max(z[i], area ** (2.0 / s1) + bmass ** (2.0 / s2))
    return TruncationSequence(float(k_hat), levels, y, z, float(theta),
                              bool(z[-1] < threshold))


def recipe_eta(c=1.0, b=8.0, eps=0.5, delta=0.5):
    """eta from the recursion lemma with d = min(delta, eps / (1 + eps))."""
    d = min(delta, eps / (1.0 + eps))
    return min((2.0 * c) ** (-1.0 / delta) * b ** (-1.0 / (delta * d)),
               (2.0 * c) ** (-(1.0 + eps) / eps) * b ** (-1.0 / (eps * d)))


def recipe_k_hat(data_norm, u_l2=0.0, c1=1.0, c2=1.0, eps=0.5, delta=1.0, b=8.0):
    """Level k_hat so that y_0 <= eta and z_0 <= eta**(1/(1+eps)).

    Uses the Chebyshev bounds y_0 <= |u|_2**2 / k_hat**2 and
    z_0 <= (data-driven) with configurable constants c', c''. The base level
    is the data pair norm (plus |u|_2).
    """
    eta = recipe_eta(c1, b, eps, delta)
    k0 = max(float(data_norm) + float(u_l2), 1e-300)
    return c2 * k0 / np.sqrt(eta), eta


def lemma2_recursion(y0, z0, c, b, eps, delta, n_max=50, rate="printed"):
    """Iterate the recursion with equality and test the decay bound.

    The bound is ``y_n <= eta * b**(-n / b)`` and
    ``z_n <= (eta * b**(-n / b))**(1 / (1 + eps))``; ``rate="classical"``
    uses the sharper exponent ``-n / d`` with d = min(delta, eps / (1 + eps)).

    Returns
    -------
    bound : (n_max + 1,) array
        Bound on y_n.
    verified : bool
        Whether both iterates stay below their bounds.
    applicable : bool
        Whether y0 <= eta and z0 <= eta**(1/(1+eps)).
    y, z : arrays
    """
    if b < 1 or min(c, eps, delta) <= 0 or min(y0, z0) < 0:
        raise ValidationError("need b >= 1 and positive constants")
    if rate not in ("printed", "classical"):
        raise ValidationError("rate must be 'printed' or 'classical'")
    d = min(delta, eps / (1.0 + eps))
    eta = recipe_eta(c, b, eps, delta)
    y = np.zeros(n_max + 1)
    z = np.zeros(n_max + 1)
    y[0], z[0] = y0, z0
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_max):
            cb = c * float(b) ** n
            y[n + 1] = cb * (y[n] ** (1 + delta) + z[n] ** (1 + eps) * y[n] ** delta)
            z[n + 1] = cb * (y[n] + z[n] ** (1 + eps))
    expo = b if rate == "printed" else d
    bound = eta * float(b) ** (-np.arange(n_max + 1) / expo)
    applicable = bool(y0 <= eta and z0 <= eta ** (1.0 / (1.0 + eps)))
    slack = 1.0 + 1e-12
    ok = (np.all(np.nan_to_num(y, nan=np.inf) <= bound * slack)
          and np.all(np.nan_to_num(z, nan=np.inf) <= bound ** (1.0 / (1.0 + eps)) * slack))
    return bound, bool(ok), applicable, y, z
