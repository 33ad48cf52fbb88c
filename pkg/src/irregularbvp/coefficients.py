"""Coefficient bundle of the interior and boundary operators.

Coefficients are given as arithmetic expression strings over ``x`` and
``y`` (and ``t`` for time-dependent data). Two-point kernels use ``x, y``
for the first point and ``xp, yp`` for the second one.
"""

import ast
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import EllipticityError, ValidationError

CAP = 1e12

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _nary(fn):
    def f(*args):
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return f


_FUNCS = {"abs": np.abs, "exp": np.exp, "log": np.log, "sin": np.sin,
          "cos": np.cos, "sqrt": np.sqrt, "min": _nary(np.minimum),
          "max": _nary(np.maximum), "step": lambda z: np.where(z >= 0, 1.0, 0.0)}
_CONSTS = {"pi": np.pi}
VARIABLES = ("x", "y", "t", "xp", "yp")


class Expr:
    """Compiled arithmetic expression evaluated with numpy broadcasting.

    Supports ``+ - * / ^`` (``**`` also accepted), the functions abs, exp,
    log, sin, cos, sqrt, min, max, step (Heaviside, 1 at 0) and the
    constant pi.

    Examples
    --------
    >>> Expr("2*x^2 + y")(np.array([1.0]), np.array([3.0]))
    array([5.])
    """

    def __init__(self, source):
        if isinstance(source, Expr):
            source = source.source
        if isinstance(source, (int, float, np.floating)):
            source = repr(float(source))
        self.source = str(source).strip()
        text = self.source.replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ValidationError("cannot parse expression %r: %s" % (self.source, exc.msg))
        self._tree = tree.body
        self._check(self._tree)
        self.names = sorted({n.id for n in ast.walk(self._tree)
                             if isinstance(n, ast.Name) and n.id in VARIABLES})

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValidationError("operator not allowed in %r" % self.source)
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNOPS:
                raise ValidationError("operator not allowed in %r" % self.source)
            self._check(node.operand)
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValidationError("only numeric constants allowed in %r" % self.source)
        elif isinstance(node, ast.Name):
            if node.id not in VARIABLES and node.id not in _CONSTS:
                raise ValidationError("unknown name %r in %r" % (node.id, self.source))
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ValidationError("unknown function in %r" % self.source)
            if node.keywords or not node.args:
                raise ValidationError("bad call in %r" % self.source)
            for a in node.args:
                self._check(a)
        else:
            raise ValidationError("unsupported syntax in %r" % self.source)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        return _FUNCS[node.func.id](*[self._eval(a, env) for a in node.args])

    def __call__(self, x, y=None, t=0.0, xp=None, yp=None):
        x = np.asarray(x, dtype=float)
        y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
        env = {"x": x, "y": y, "t": t,
               "xp": x if xp is None else np.asarray(xp, dtype=float),
               "yp": y if yp is None else np.asarray(yp, dtype=float)}
        shape = np.broadcast(env["x"], env["y"], env["xp"], env["yp"]).shape
        with np.errstate(all="ignore"):
            val = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()

    def at(self, X, t=0.0):
        """Evaluate at points ``X[..., 2]``."""
        X = np.asarray(X, dtype=float)
        return self(X[..., 0], X[..., 1], t=t)

    @property
    def is_constant(self):
        return not self.names

    @property
    def is_zero(self):
        return self.is_constant and float(self(np.zeros(1))[0]) == 0.0

    def constant_value(self):
        return float(self(np.zeros(1))[0])

    def __repr__(self):
        return "Expr(%r)" % self.source


def capped(values, cap=CAP):
    """Clip to [-cap, cap], mapping nan to 0.

    Returns
    -------
    values : ndarray
    n_capped : int
        Entries whose magnitude exceeded the cap (infinities included).
    n_nonfinite : int
        Entries that were nan or infinite.
    """
    v = np.asarray(values, dtype=float)
    nonfinite = ~np.isfinite(v)
    over = np.abs(np.nan_to_num(v, nan=0.0, posinf=np.inf, neginf=-np.inf)) > cap
    out = np.clip(np.nan_to_num(v, nan=0.0, posinf=cap, neginf=-cap), -cap, cap)
    return out, int(np.count_nonzero(over)), int(np.count_nonzero(nonfinite))


@dataclass
class WentzellSpec:
    """Boundary form selection: ``riemannian`` (omega, b_hat, b_check) or ``koch``."""

    kind: str = "riemannian"
    omega: Expr = field(default_factory=lambda: Expr("1"))
    b_hat: Expr = field(default_factory=lambda: Expr("0"))
    b_check: Expr = field(default_factory=lambda: Expr("0"))
    rho: float = 4.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("riemannian", "koch"):
            raise ValidationError("wentzell kind must be 'riemannian' or 'koch'")
        self.omega, self.b_hat, self.b_check = map(Expr, (self.omega, self.b_hat, self.b_check))


@dataclass
class CoefficientField:
    """Coefficients of the interior operator, the boundary operator and the
    optional nonlocal parts, with declared integrability exponents."""

    alpha: tuple = (("1", "0"), ("0", "1"))
    a_hat: tuple = ("0", "0")
    a_check: tuple = ("0", "0")
    lam: object = "0"
    beta: object = "0"
    gamma: object = None
    kernel_a: object = None
    kernel_b: object = None
    wentzell: WentzellSpec = None
    r1: float = 4.0
    r2: float = 4.0
    r3: float = 2.0
    beta_exponent: float = 2.0

    def __post_init__(self):
        self.alpha = tuple(tuple(Expr(e) for e in row) for row in self.alpha)
        self.a_hat = tuple(Expr(e) for e in self.a_hat)
        self.a_check = tuple(Expr(e) for e in self.a_check)
        self.lam = Expr(self.lam)
        self.beta = Expr(self.beta)
        for name in ("gamma", "kernel_a", "kernel_b"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, Expr(v))
        self.validate_exponents()

    def validate_exponents(self, N=2, d=1.0):
        # N = 2: r1, r2 > 1, r3 > N/2 = 1, beta_exponent > d/(d + 2 - N) = 1
        for name in ("r1", "r2", "r3", "beta_exponent"):
            if not getattr(self, name) > 1.0:
                raise ValidationError("exponent %s must exceed 1 for N=2" % name)

    def alpha_at(self, X):
        """Matrix field at points ``X[..., 2]``, shape ``X.shape[:-1] + (2, 2)``."""
        return np.stack([np.stack([e.at(X) for e in row], axis=-1) for row in self.alpha],
                        axis=-2)

    def vector_at(self, which, X):
        comps = self.a_hat if which == "a_hat" else self.a_check
        return np.stack([e.at(X) for e in comps], axis=-1)

    def has_convection(self):
        return not all(e.is_zero for e in self.a_hat + self.a_check)

    def check_gamma(self, points):
        """Essential infimum gamma_0 > 0 of the conductivity on sample points."""
        if self.gamma is None:
            raise ValidationError("no conductivity gamma configured")
        g0 = float(np.min(self.gamma.at(points)))
        if not g0 > 0:
            raise ValidationError("conductivity infimum %g is not positive" % g0)
        return g0

    def check_kernels(self, points):
        P = np.asarray(points, dtype=float)
        for name in ("kernel_a", "kernel_b"):
            k = getattr(self, name)
            if k is None:
                continue
            vals = k(P[:, None, 0], P[:, None, 1], xp=P[None, :, 0], yp=P[None, :, 1])
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValidationError("%s must be bounded and nonnegative" % name)


def unit_directions(n=16):
    t = np.pi * np.arange(n) / n
    return np.column_stack([np.cos(t), np.sin(t)])


def ellipticity_constant(alpha, sample_points, directions=None):
    """Lower bound c0 of xi^T alpha(x) xi / |xi|^2 over the samples.

    Parameters
    ----------
    alpha : CoefficientField, callable or (2, 2) array
        Matrix field; a callable receives points and returns (..., 2, 2).
    sample_points : (n, 2) array
    directions : (k, 2) array, optional
        Unit directions. When omitted the exact minimum over all directions
        (smallest eigenvalue of the symmetric part) is used.
    """
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if len(X) == 0:
        raise ValidationError("no sample points")
    if isinstance(alpha, CoefficientField):
        A = alpha.alpha_at(X)
    elif callable(alpha):
        A = np.asarray(alpha(X), dtype=float)
    else:
        A = np.broadcast_to(np.asarray(alpha, dtype=float), (len(X), 2, 2))
    if directions is None:
        S = 0.5 * (A + np.swapaxes(A, -1, -2))
        c0 = float(np.min(np.linalg.eigvalsh(S)))
    else:
        D = np.asarray(directions, dtype=float)
        D = D / np.linalg.norm(D, axis=1)[:, None]
        c0 = float(np.min(np.einsum("kj,nij,ki->nk", D, A, D)))
    if not c0 > 0:
        raise EllipticityError("ellipticity constant estimate %g is not positive" % c0)
    return c0


@dataclass(frozen=True)
class IntegrabilityReport:
    norm: float
    exponent: float
    n_capped: int
    n_nonfinite: int


def integrability_report(field_expr, exponent, mesh, cap=CAP):
    """Discrete L^exponent norm of a coefficient on the mesh.

    Quadrature values above ``cap`` in magnitude are clipped and counted.
    """
    from .norms import quadrature_points

    if not exponent >= 1:
        raise ValidationError("exponent must be >= 1")
    expr = Expr(field_expr) if not callable(field_expr) or isinstance(field_expr, str) else field_expr
    X, W = quadrature_points(mesh)
    vals = expr.at(X) if isinstance(expr, Expr) else np.asarray(expr(X), dtype=float)
    vals, n_cap, n_bad = capped(vals, cap)
    if exponent == np.inf:
        nrm = float(np.max(np.abs(vals)))
    else:
        nrm = float(np.sum(W * np.abs(vals) ** exponent) ** (1.0 / exponent))
    return IntegrabilityReport(nrm, float(exponent), n_cap, n_bad)
