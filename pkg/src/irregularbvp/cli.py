"""Command line driver: config ingestion, batch execution and reports.

Config files are line oriented ``section.key = value`` text. ``#`` starts a
comment, expression values are quoted, lists are comma separated.

Exit codes: 0 all asserted checks pass, 1 a check failed or the solver
refused a non-coercive form, 2 parse or validation error, 3 numeric failure.
"""

import argparse
import hashlib
import os
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CoercivityError, ConfigurationError, NumericError, ResourceError, ValidationError

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_MAX_DOFS = 20000
CONFIG_DIR = Path(__file__).with_name("configs")

# section -> key -> converter; "expr" keeps the (unquoted) string
_EXPR, _INT, _FLOAT, _STR, _BOOL, _LIST = "expr", int, float, "str", "bool", "list"
SCHEMA = {
    "run": {"seed": _INT, "max_dofs": _INT},
    "domain": {"family": _STR, "level": _INT, "tau": _FLOAT, "mesh_h": _FLOAT,
               "sides": _INT, "radius": _FLOAT, "min_angle": _FLOAT},
    "measure": {"kind": _STR, "d": _FLOAT},
    "coefficients": dict(
        {k: _EXPR for k in ("alpha11", "alpha12", "alpha21", "alpha22", "a_hat1", "a_hat2",
                            "a_check1", "a_check2", "lambda", "beta", "gamma", "kernel_a",
                            "kernel_b", "wentzell.omega", "wentzell.b_hat",
                            "wentzell.b_check")},
        **{"wentzell.rho": _FLOAT, "wentzell.scale": _FLOAT, "r1": _FLOAT, "r2": _FLOAT,
           "r3": _FLOAT, "s": _FLOAT}),
    "regime": {"type": _STR, "wentzell_kind": _STR},
    "nonlocal": {"kind": _STR, "s": _FLOAT, "parts": _STR, "gamma": _EXPR,
                 "kernel_a": _EXPR, "kernel_b": _EXPR, "data": _BOOL,
                 "p_tilde": _FLOAT, "q_tilde": _FLOAT},
    "problem": {"type": _STR, "f": _EXPR, "g": _EXPR, "u0": _EXPR, "p": _FLOAT, "q": _FLOAT,
                "kappa1": _FLOAT, "kappa2": _FLOAT, "T": _FLOAT, "dt": _FLOAT,
                "theta": _FLOAT, "shift_mode": _STR, "shift_value": _FLOAT,
                "dirichlet_mask": _STR},
    "verify": {"checks": _LIST, "trials": _INT, "window": _STR},
    "output": {"directory": _STR, "matrix": _BOOL},
}

CHECKS = ("certificate", "inverse_positivity", "subsolution", "estimate", "degiorgi",
          "ahlfors", "b_conditions", "a_conditions", "energy", "linf", "mild", "positivity")
PARABOLIC_ONLY = ("energy", "linf", "mild", "positivity")


@dataclass
class RunConfig:
    """Parsed configuration: ``values[section][key]`` plus the source text."""

    values: dict
    source: str = ""

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def canonical(self):
        """Sorted ``section.key = value`` lines; hashed into report headers."""
        lines = []
        for sec in sorted(self.values):
            for key in sorted(self.values[sec]):
                v = self.values[sec][key]
                if isinstance(v, list):
                    v = ",".join(v)
                lines.append("%s.%s = %r" % (sec, key, v))
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _convert(kind, raw, quoted, where):
    if kind == _EXPR:
        return raw
    if quoted and kind not in (_STR, _LIST):
        raise ConfigurationError("%s: quoted value where a number was expected" % where)
    try:
        if kind == _BOOL:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == _LIST:
            return [s.strip() for s in raw.split(",") if s.strip()]
        if kind == _STR:
            return raw
        return kind(raw)
    except ValueError:
        raise ConfigurationError("%s: cannot parse %r" % (where, raw))


def parse_config(text, name="<config>"):
    """Parse config text into a RunConfig (unknown or repeated keys are errors)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        where = "%s:%d" % (name, lineno)
        try:
            tokens = shlex.split(line, comments=True, posix=True)
        except ValueError as exc:
            raise ConfigurationError("%s: %s" % (where, exc))
        if not tokens:
            continue
        if "=" not in line.split("#", 1)[0]:
            raise ConfigurationError("%s: expected 'section.key = value'" % where)
        lhs, rhs = line.split("=", 1)
        full = lhs.strip()
        sec, _, key = full.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigurationError("%s: unknown key %r" % (where, full))
        try:
            parts = shlex.split(rhs, comments=True, posix=True)
        except ValueError as exc:
            raise ConfigurationError("%s: %s" % (where, exc))
        if not parts:
            raise ConfigurationError("%s: missing value for %r" % (where, full))
        quoted = rhs.strip()[:1] in ("'", '"')
        raw = " ".join(parts)
        if key in values.get(sec, {}):
            raise ConfigurationError("%s: duplicate key %r" % (where, full))
        values.setdefault(sec, {})[key] = _convert(SCHEMA[sec][key], raw, quoted, where)
    return RunConfig(values, text)


def load_config(path):
    """Read a config file; bare names fall back to the bundled configs."""
    p = Path(path)
    if not p.exists():
        for cand in (CONFIG_DIR / p.name, CONFIG_DIR / (p.name + ".cfg")):
            if cand.exists():
                p = cand
                break
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError("cannot read config %s: %s" % (path, exc))
    return parse_config(text, str(path))


# ------------------------------------------------------------- construction

def _choice(cfg, sec, key, options, default):
    v = cfg.get(sec, key, default)
    if v not in options:
        raise ConfigurationError("%s.%s must be one of %s (got %r)"
                                 % (sec, key, ", ".join(options), v))
    return v


def build_domain(cfg):
    from . import geometry

    fam = _choice(cfg, "domain", "family", ("square", "polygon", "snowflake", "ramified_F",
                                            "ramified_G"), "square")
    level = cfg.get("domain", "level", 0)
    if fam == "square":
        return geometry.unit_square()
    if fam == "polygon":
        return geometry.regular_polygon(cfg.get("domain", "sides", 64),
                                        cfg.get("domain", "radius", 1.0))
    if fam == "snowflake":
        return geometry.koch_snowflake(level)
    return geometry.ramified_domain(fam[-1], cfg.get("domain", "tau"), level)


def build_measure(cfg, domain):
    from .measure import BoundaryMeasure, arc_length_measure, self_similar_measure

    default = "self_similar" if domain.edge_cells is not None else "arc_length"
    kind = _choice(cfg, "measure", "kind", ("self_similar", "arc_length"), default)
    mu = self_similar_measure(domain) if kind == "self_similar" else arc_length_measure(domain)
    d = cfg.get("measure", "d")
    if d is not None:
        mu = BoundaryMeasure(mu.segments, mu.edge_weights, float(d))
    return mu


def build_coefficients(cfg):
    from .coefficients import CoefficientField, WentzellSpec

    c = cfg.values.get("coefficients", {})
    regime = _choice(cfg, "regime", "type", ("N", "R", "W"), "R")
    went = None
    if regime == "W":
        kind = _choice(cfg, "regime", "wentzell_kind", ("riemannian", "koch"), "riemannian")
        went = WentzellSpec(kind, c.get("wentzell.omega", "1"), c.get("wentzell.b_hat", "0"),
                            c.get("wentzell.b_check", "0"), c.get("wentzell.rho", 4.0),
                            c.get("wentzell.scale", 1.0))
    nl = cfg.values.get("nonlocal", {})
    return CoefficientField(
        alpha=((c.get("alpha11", "1"), c.get("alpha12", "0")),
               (c.get("alpha21", "0"), c.get("alpha22", "1"))),
        a_hat=(c.get("a_hat1", "0"), c.get("a_hat2", "0")),
        a_check=(c.get("a_check1", "0"), c.get("a_check2", "0")),
        lam=c.get("lambda", "0"), beta=c.get("beta", "0"), gamma=c.get("gamma"),
        kernel_a=nl.get("kernel_a", c.get("kernel_a")),
        kernel_b=nl.get("kernel_b", c.get("kernel_b")), wentzell=went,
        r1=c.get("r1", 4.0), r2=c.get("r2", 4.0), r3=c.get("r3", 2.0), beta_exponent=c.get("s", 2.0))


def check_consistency(cfg):
    """Cross-field rules that no single section can enforce."""
    fam = cfg.get("domain", "family", "square")
    if cfg.get("regime", "wentzell_kind") == "koch" and fam != "snowflake":
        raise ConfigurationError("regime.wentzell_kind = koch requires domain.family = snowflake")
    if cfg.get("regime", "wentzell_kind") is not None and cfg.get("regime", "type", "R") != "W":
        raise ConfigurationError("regime.wentzell_kind is only meaningful for regime.type = W")
    if fam == "ramified_G" and cfg.get("domain", "tau") is None:
        raise ConfigurationError("domain.family = ramified_G requires domain.tau")
    if cfg.get("measure", "kind") == "self_similar" and fam in ("square", "polygon"):
        raise ConfigurationError("measure.kind = self_similar needs a self-similar domain")
    ptype = cfg.get("problem", "type", "elliptic")
    for key in ("u0", "T", "dt", "theta", "kappa1", "kappa2"):
        if ptype == "elliptic" and cfg.get("problem", key) is not None:
            raise ConfigurationError("problem.%s requires problem.type = parabolic" % key)
    checks = cfg.get("verify", "checks", [])
    for chk in checks:
        name = chk.split(":")[0]
        if name not in CHECKS:
            raise ConfigurationError("unknown check %r (choose from %s)" % (chk, ", ".join(CHECKS)))
        if chk.count(":") and chk.split(":", 1)[1] not in ("assert", "report"):
            raise ConfigurationError("check mode must be 'assert' or 'report' in %r" % chk)
        if name in PARABOLIC_ONLY and ptype != "parabolic":
            raise ConfigurationError("check %r needs problem.type = parabolic" % name)
        if name == "b_conditions" and cfg.get("regime", "type", "R") != "W":
            raise ConfigurationError("check b_conditions needs regime.type = W")
        if name == "a_conditions" and cfg.get("nonlocal", "kind", "none") == "none":
            raise ConfigurationError("check a_conditions needs a nonlocal operator")


@dataclass
class Context:
    cfg: RunConfig
    seed: int
    out: Path
    max_dofs: int
    domain: object = None
    mesh: object = None
    measure: object = None
    spec: object = None
    constants: dict = field(default_factory=dict)
    mass: object = None
    data_norm: float = 0.0
    estimate: object = None
    linf: object = None
    degiorgi: object = None
    ahlfors: object = None


def _mesh(ctx):
    """Triangulate, refusing meshes above the node budget (checked on a
    lower estimate before meshing and exactly afterwards)."""
    from .geometry import triangulate

    h = ctx.cfg.get("domain", "mesh_h", 0.1)
    if not h > 0:
        raise ConfigurationError("domain.mesh_h must be positive")
    estimate = 0.5 * ctx.domain.area() / (np.sqrt(3.0) / 4.0 * h ** 2)
    if estimate > ctx.max_dofs:
        raise ResourceError("mesh_h=%g needs about %d nodes, above --max-dofs %d"
                            % (h, estimate, ctx.max_dofs))
    mesh = triangulate(ctx.domain, h, ctx.cfg.get("domain", "min_angle", 25.0))
    if mesh.n_nodes > ctx.max_dofs:
        raise ResourceError("mesh has %d nodes, above --max-dofs %d"
                            % (mesh.n_nodes, ctx.max_dofs))
    return mesh


def build_problem(ctx):
    from .elliptic import ProblemSpec

    cfg = ctx.cfg
    check_consistency(cfg)
    ctx.domain = build_domain(cfg)
    ctx.measure = build_measure(cfg, ctx.domain)
    ctx.mesh = _mesh(ctx)
    coeffs = build_coefficients(cfg)
    nl = cfg.values.get("nonlocal", {})
    kind = _choice(cfg, "nonlocal", "kind", ("none", "besov", "dtn"), "none")
    params = {k: nl[k] for k in ("parts", "gamma") if k in nl}
    if "s" in nl:
        params["fractional_order"] = nl["s"]
    pr = cfg.values.get("problem", {})
    ctx.spec = ProblemSpec(
        ctx.mesh, ctx.measure, coeffs, regime=cfg.get("regime", "type", "R"),
        f=pr.get("f", "0"), g=pr.get("g", "0"), p=pr.get("p", 2.0), q=pr.get("q", 2.0),
        nonlocal_kind=kind, nonlocal_params=params, nonlocal_data=nl.get("data", False),
        data_exponents=(nl.get("p_tilde", 2.0), nl.get("q_tilde", 2.0)),
        dirichlet_mask=pr.get("dirichlet_mask"), shift_mode=pr.get("shift_mode", "none"),
        shift_value=pr.get("shift_value", 0.0))
    return ctx


# ------------------------------------------------------------------ reports

def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return "%d" % v
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def header(ctx):
    """Comment block carried by every report file."""
    m = ctx.mesh
    lines = ["# irregularbvp report", "# seed: %d" % ctx.seed,
             "# config_hash: %s" % ctx.cfg.digest()]
    if m is not None:
        lines += ["# mesh: nodes=%d triangles=%d boundary_edges=%d h_max=%.17g"
                  % (m.n_nodes, len(m.triangles), len(m.boundary_edges), m.max_edge_length())]
    if ctx.measure is not None:
        lines += ["# measure: d=%.17g total_mass=%.17g"
                  % (ctx.measure.dimension_d, ctx.measure.total_mass)]
    for key in ("c0", "delta_star", "kappa", "eta0", "c0_star"):
        if key in ctx.constants or ctx.spec is not None:
            lines.append("# %s: %s" % (key, _fmt(ctx.constants.get(key))))
    return "\n".join(lines) + "\n"


def _write(ctx, name, body):
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / name).write_text(header(ctx) + body)


# ------------------------------------------------------------------- checks

@dataclass
class CheckResult:
    name: str
    mode: str
    passed: bool
    value: float
    detail: str = ""

    HEADER = "check,mode,passed,value,detail"

    def to_csv_line(self):
        return "%s,%s,%d,%s,%s" % (self.name, self.mode, int(self.passed), _fmt(self.value),
                                   self.detail.replace(",", ";"))


def _check_list(cfg):
    out = []
    for chk in cfg.get("verify", "checks", []):
        name, _, mode = chk.partition(":")
        out.append((name, mode or "assert"))
    return out


def run_checks(ctx, field_=None, traj=None):
    """Evaluate the configured checks; the rng is seeded from the run seed."""
    from . import degiorgi, elliptic, measure, nonlocal_ops, parabolic, wentzell

    rng = np.random.default_rng(ctx.seed)
    trials = ctx.cfg.get("verify", "trials", 200)
    spec = ctx.spec
    results = []
    for name, mode in _check_list(ctx.cfg):
        if name == "certificate":
            kap = ctx.constants.get("kappa")
            results.append(CheckResult(name, mode, bool(kap is not None and kap > 1e-8), kap,
                                       "smallest eigenvalue of the shifted symmetric part"))
        elif name == "inverse_positivity":
            u = field_.values
            tol = 1e-9 * max(1.0, float(np.abs(u).max()))
            results.append(CheckResult(name, mode, bool(u.min() >= -tol), float(u.min()),
                                       "min nodal value"))
        elif name == "subsolution":
            ok = (elliptic.check_subsolution(field_, trials, rng, "sub")
                  and elliptic.check_subsolution(field_, trials, rng, "super"))
            results.append(CheckResult(name, mode, ok, field_.residual_norm,
                                       "weak solution is both sub- and supersolution"))
        elif name == "estimate":
            row = elliptic.estimate_report(field_)
            ctx.estimate = row
            results.append(CheckResult(name, mode, bool(np.isfinite(row.ratio)), row.ratio,
                                       "a priori estimate ratio"))
        elif name == "degiorgi":
            states = traj.states if traj is not None else field_.values
            u2 = float(np.max([np.sqrt(max(s @ (ctx.mass @ s), 0.0)) for s in np.atleast_2d(states)]))
            delta = 0.5 if traj is not None else 1.0
            k_hat, _ = degiorgi.recipe_k_hat(ctx.data_norm, u2, delta=delta)
            seq = degiorgi.degiorgi_sequence(spec.mesh, states, k_hat, 12, spec.measure)
            ctx.degiorgi = seq
            results.append(CheckResult(name, mode, seq.converged, float(seq.z[-1]),
                                       "z_12 with recipe level %.6g" % k_hat))
        elif name == "ahlfors":
            d = spec.measure.dimension_d
            radii = 3.0 ** -np.arange(1, 6)
            rep = measure.ahlfors_diagnostic(spec.measure, d, radii)
            ctx.ahlfors = rep
            results.append(CheckResult(name, mode, bool(rep.spread < 2.0), rep.spread,
                                       "max/min of sup mu(B)/r^d over radii"))
        elif name == "b_conditions":
            form = elliptic.wentzell_form(spec)
            rep = wentzell.check_B_conditions(form, trials, rng)
            worst = max(rep.max_violation.values()) if rep.max_violation else 0.0
            results.append(CheckResult(name, mode, rep.passed, worst, "max violation"))
        elif name == "a_conditions":
            results.append(_a_conditions(ctx, trials, rng, mode))
        elif name == "energy":
            e = parabolic.energy_estimate_check(traj)
            results.append(CheckResult(name, mode, bool(np.isfinite(e.c_measured)),
                                       e.c_measured, "lhs/rhs of the energy estimate"))
        elif name == "linf":
            window = ctx.cfg.get("verify", "window", "half_tail")
            row = parabolic.linf_estimate_check(traj, window)
            ctx.linf = row
            ok = bool(np.isfinite(row.ratio)) if row.asserted else True
            results.append(CheckResult(name, mode if row.asserted else "report", ok, row.ratio,
                                       "window %s" % window))
        elif name == "mild":
            r = parabolic.mild_solution_residual(traj)
            scale = max(1.0, float(np.abs(traj.loads).max()), float(np.abs(traj.states).max()))
            results.append(CheckResult(name, mode, bool(r <= 1e-8 * scale), r,
                                       "mild-solution residual"))
        elif name == "positivity":
            m = float(traj.states.min())
            tol = 1e-9 * max(1.0, float(np.abs(traj.states).max()))
            results.append(CheckResult(name, mode, bool(m >= -tol), m, "min over trajectory"))
    return results


def _a_conditions(ctx, trials, rng, mode):
    from . import nonlocal_ops

    spec = ctx.spec
    ops = []
    if spec.nonlocal_kind == "dtn":
        ops.append(nonlocal_ops.assemble_dtn(spec.mesh, spec.nonlocal_params.get(
            "gamma", spec.coeffs.gamma if spec.coeffs.gamma is not None else "1")))
    else:
        parts = spec.nonlocal_params.get("parts", "both")
        s = spec.nonlocal_params.get("fractional_order", 0.5)
        if parts in ("interior", "both"):
            ops.append(nonlocal_ops.assemble_besov_interior(spec.mesh, s, spec.coeffs.kernel_a))
        if parts in ("boundary", "both"):
            ops.append(nonlocal_ops.assemble_besov_boundary(spec.mesh, spec.measure,
                                                            kernel_b=spec.coeffs.kernel_b))
    ok, worst, eta0 = True, 0.0, 0.0
    for op in ops:
        rep = nonlocal_ops.check_A_conditions(op, trials, rng)
        ok = ok and rep.passed
        worst = max([worst] + list(rep.max_violation.values()))
        eta0 = max(eta0, rep.measured["eta0"])
    ctx.constants["eta0"] = eta0
    return CheckResult("a_conditions", mode, ok, worst, "max violation; eta0=%.6g" % eta0)


# ---------------------------------------------------------------- pipeline

def _record_constants(ctx, bundle, kappa):
    ctx.constants.update({"c0": bundle.c0, "delta_star": bundle.shift, "kappa": kappa,
                          "c0_star": bundle.c0 if bundle.c0_star is None else bundle.c0_star})
    ctx.constants.setdefault("eta0", None)


def _solve(ctx):
    """Solve the configured problem; returns (field, trajectory)."""
    from .elliptic import build_system, data_pair_norm, solve_elliptic
    from .parabolic import ParabolicData, step_parabolic

    spec = ctx.spec
    pr = ctx.cfg.values.get("problem", {})
    ptype = _choice(ctx.cfg, "problem", "type", ("elliptic", "parabolic"), "elliptic")
    if ptype == "elliptic":
        field_ = solve_elliptic(spec)
        _record_constants(ctx, field_.bundle, field_.kappa)
        ctx.mass = field_.bundle.mass_lumped
        ctx.data_norm = data_pair_norm(spec.mesh, spec.measure, spec.f, spec.g, spec.p, spec.q)
        return field_, None
    data = ParabolicData(pr.get("u0", "0"), pr.get("f", "0"), pr.get("g", "0"),
                         pr.get("kappa1", 4.0), pr.get("kappa2", 4.0), pr.get("p", 4.0),
                         pr.get("q", 4.0))
    bundle, _, kappa, _ = build_system(spec)
    _record_constants(ctx, bundle, kappa)
    traj = step_parabolic(spec, data, pr.get("dt", 0.01), pr.get("theta", 1.0),
                          pr.get("T", 0.1))
    ctx.mass = traj.mass
    ctx.data_norm = max(data_pair_norm(spec.mesh, spec.measure, data.f, data.g, data.p,
                                       data.q, t) for t in traj.times)
    return None, traj


def _emit_solution(ctx, field_, traj, checks):
    from .elliptic import EstimateRow
    from .parabolic import LinfRow

    if field_ is not None:
        X = ctx.mesh.nodes
        body = "node,x,y,u\n" + "".join("%d,%.17g,%.17g,%.17g\n" % (i, x, y, u)
                                        for i, ((x, y), u) in enumerate(zip(X, field_.values)))
        _write(ctx, "solution.csv", body)
        if ctx.estimate is None:
            from .elliptic import estimate_report
            ctx.estimate = estimate_report(field_)
        _write(ctx, "estimate.csv", EstimateRow.HEADER + "\n" + ctx.estimate.to_csv_line() + "\n")
    if traj is not None:
        _write(ctx, "trajectory.csv", traj.to_csv())
        if ctx.linf is not None:
            _write(ctx, "linf.csv", LinfRow.HEADER + "\n" + ctx.linf.to_csv_line() + "\n")
    if ctx.degiorgi is not None:
        _write(ctx, "degiorgi.csv", ctx.degiorgi.to_csv())
    if ctx.ahlfors is not None:
        _write(ctx, "ahlfors.csv", ctx.ahlfors.to_csv())
    if ctx.cfg.get("output", "matrix", False):
        from .assembly import write_matrix_market
        A = field_.matrix if field_ is not None else traj.operator
        ctx.out.mkdir(parents=True, exist_ok=True)
        write_matrix_market(A, ctx.out / "operator.mtx")


def _emit_checks(ctx, checks):
    body = CheckResult.HEADER + "\n" + "".join(c.to_csv_line() + "\n" for c in checks)
    _write(ctx, "checks.csv", body)
    failed = [c for c in checks if c.mode == "assert" and not c.passed]
    return EXIT_CHECK if failed else EXIT_OK


def cmd_gen(ctx):
    """Geometry and measure only."""
    from .geometry import mesh_to_text

    check_consistency(ctx.cfg)
    ctx.domain = build_domain(ctx.cfg)
    ctx.measure = build_measure(ctx.cfg, ctx.domain)
    ctx.mesh = _mesh(ctx)
    _write(ctx, "mesh.txt", mesh_to_text(ctx.mesh))
    _write(ctx, "measure.txt", ctx.measure.to_text())
    V = ctx.domain.vertices
    body = "vertex,x,y\n" + "".join("%d,%.17g,%.17g\n" % (i, x, y) for i, (x, y) in enumerate(V))
    _write(ctx, "geometry.csv", body)
    return EXIT_OK


def cmd_run(ctx, emit_solution=True):
    build_problem(ctx)
    field_, traj = _solve(ctx)
    checks = run_checks(ctx, field_, traj)
    code = _emit_checks(ctx, checks)
    if emit_solution:
        _emit_solution(ctx, field_, traj, checks)
    lines = ["%s %s %s\n" % (c.name, "PASS" if c.passed else "FAIL", _fmt(c.value))
             for c in checks]
    if ctx.estimate is not None:
        # the boundary exponent is also known under the label m2(q,q)
        lines.append("exponents m1(p,q) = %s, m2(p,q) [m2(q,q)] = %s\n"
                     % (ctx.estimate.m1, ctx.estimate.m2))
    _write(ctx, "report.txt", "".join(lines))
    return code


def cmd_verify(ctx):
    """Solve and evaluate the checks; writes only the check table and report."""
    return cmd_run(ctx, emit_solution=False)


def _threads():
    raw = os.environ.get("IRREGULARBVP_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigurationError("IRREGULARBVP_THREADS must be a positive integer")
    return n


def make_parser():
    ap = argparse.ArgumentParser(prog="irregularbvp",
                                 description="Boundary value problems on irregular domains.")
    ap.add_argument("command", choices=("run", "gen", "verify"))
    ap.add_argument("config")
    ap.add_argument("--seed", type=int, default=None, help="overrides run.seed (default 0)")
    ap.add_argument("--out", default=None, help="output directory (default output.directory)")
    ap.add_argument("--max-dofs", type=int, default=None,
                    help="refuse meshes with more nodes (default %d)" % DEFAULT_MAX_DOFS)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        threads = _threads()
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("run", "seed", 0)
        max_dofs = args.max_dofs or cfg.get("run", "max_dofs", DEFAULT_MAX_DOFS)
        out = Path(args.out or cfg.get("output", "directory", "out"))
        ctx = Context(cfg, int(seed), out, int(max_dofs))
        cmd = {"run": cmd_run, "gen": cmd_gen, "verify": cmd_verify}[args.command]
        if threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                code = cmd(ctx)
        else:
            code = cmd(ctx)
    except CoercivityError as exc:
        print("error: %s" % exc, file=sys.stderr)
        print("certificate:", file=sys.stderr)
        for k in sorted(exc.certificate):
            print("  %s = %s" % (k, _fmt(exc.certificate[k])), file=sys.stderr)
        return EXIT_CHECK
    except ValidationError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print("numeric error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    if code != EXIT_OK:
        print("one or more asserted checks failed (see %s)" % (out / "checks.csv"),
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
