import numpy as np
import pytest

from irregularbvp.coefficients import CoefficientField, WentzellSpec
from irregularbvp.elliptic import ProblemSpec
from irregularbvp.errors import ValidationError
from irregularbvp.geometry import koch_snowflake, triangulate, unit_square
from irregularbvp.measure import arc_length_measure, self_similar_measure
from irregularbvp.parabolic import (ParabolicData, bochner_norm, energy_estimate_check,
                                    homogeneous_growth, linf_estimate_check,
                                    mild_solution_residual, step_parabolic)

F_STAR = "-exp(-t)*(x^2 + y^2) - 4*exp(-t)"
G_STAR = "exp(-t)*(x^2 + y^2 + 2*step(x - 1) + 2*step(y - 1))"


@pytest.fixture(scope="module")
def spec():
    d = unit_square()
    return ProblemSpec(triangulate(d, 0.125), arc_length_measure(d), CoefficientField(beta="1"),
                       "R")


def l2_time_error(tr, ref):
    stride = (len(ref.times) - 1) // (len(tr.times) - 1)
    E = tr.states - ref.states[::stride]
    return np.sqrt(np.sum(tr.dt[0] * np.einsum("ti,ti->t", E, (tr.mass @ E.T).T)))


def test_zero_everything(spec):
    tr = step_parabolic(spec, ParabolicData(), 0.1, 1.0, T=0.5)
    assert np.all(tr.states == 0)
    e = energy_estimate_check(tr)
    assert e.lhs == 0 and e.rhs == 0 and e.c_measured == 0
    assert mild_solution_residual(tr) == 0.0
    assert linf_estimate_check(tr).ratio == 0.0


def test_validation(spec):
    d = ParabolicData()
    with pytest.raises(ValidationError):
        step_parabolic(spec, d, 0.0)
    with pytest.raises(ValidationError):
        step_parabolic(spec, d, 0.1, theta=0.3)
    with pytest.raises(ValidationError):
        step_parabolic(spec, d, 0.3, T=1.0)
    tr = step_parabolic(spec, d, 0.1, T=0.5)
    with pytest.raises(ValidationError):
        linf_estimate_check(tr, "nowhere")
    with pytest.raises(ValidationError):
        linf_estimate_check(tr, "interior_window", 0.4, 0.2)


def test_contraction_backward_euler(spec):
    u0 = np.random.default_rng(0).standard_normal(spec.mesh.n_nodes)
    tr = step_parabolic(spec, ParabolicData(u0=u0), 0.05, 1.0, T=1.0)
    n2 = np.sqrt(np.einsum("ti,ti->t", tr.states, (tr.mass @ tr.states.T).T))
    assert np.all(np.diff(n2) <= 1e-14)
    assert tr.step_residual <= 1e-9


@pytest.mark.parametrize("theta,target", [(1.0, 1.0), (0.5, 2.0)])
def test_manufactured_time_rates(spec, theta, target):
    data = ParabolicData(u0="x^2 + y^2", f=F_STAR, g=G_STAR)
    ref = step_parabolic(spec, data, 1 / 1280, theta, T=1.0)
    errs = [l2_time_error(step_parabolic(spec, data, dt, theta, T=1.0), ref)
            for dt in (0.05, 0.025, 0.0125)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(rates - target) <= 0.2), rates


def test_energy_homogeneity_and_refinement(spec):
    base = ParabolicData(u0="x*y", f="1 + sin(t)*x", g="y")
    scaled = ParabolicData(u0="3*x*y", f="3 + 3*sin(t)*x", g="3*y")
    a = energy_estimate_check(step_parabolic(spec, base, 0.05, 1.0, T=1.0))
    b = energy_estimate_check(step_parabolic(spec, scaled, 0.05, 1.0, T=1.0))
    assert b.lhs == pytest.approx(9 * a.lhs, rel=1e-10)
    assert b.c_measured == pytest.approx(a.c_measured, rel=1e-10)
    c = energy_estimate_check(step_parabolic(spec, base, 0.025, 1.0, T=1.0))
    assert 0.5 <= c.c_measured / a.c_measured <= 2.0
    assert a.lhs <= a.c_measured * a.rhs * (1 + 1e-12)


def test_positivity_preservation(spec):
    rng = np.random.default_rng(1)
    for _ in range(3):
        u0 = rng.random(spec.mesh.n_nodes)
        tr = step_parabolic(spec, ParabolicData(u0=u0, f="1 + x*t", g="y^2"), 0.05, 1.0, T=0.5)
        scale = max(1.0, np.abs(tr.states).max())
        assert tr.states.min() >= -1e-9 * scale


def test_positivity_koch_wentzell():
    d = koch_snowflake(2)
    c = CoefficientField(lam="1", wentzell=WentzellSpec("koch"))
    sp_ = ProblemSpec(triangulate(d, 0.1), self_similar_measure(d), c, "W")
    tr = step_parabolic(sp_, ParabolicData(u0="x", f="1", g="0.5"), 0.05, 1.0, T=0.5)
    assert tr.states.min() >= -1e-9
    e = energy_estimate_check(tr)
    assert np.isfinite(e.c_measured) and e.c_measured > 0


def test_mild_residual(spec):
    data = ParabolicData(u0="x^2 + y^2", f=F_STAR, g=G_STAR)
    one = step_parabolic(spec, data, 0.1, 1.0, T=0.1)
    assert mild_solution_residual(one) <= 1e-12
    r = [mild_solution_residual(step_parabolic(spec, data, dt, 1.0, T=1.0), "gauss")
         for dt in (0.1, 0.05, 0.025)]
    ratios = np.array(r[:-1]) / r[1:]
    assert np.all(np.abs(ratios - 2.0) <= 0.4), ratios
    cn = step_parabolic(spec, data, 0.05, 0.5, T=1.0)
    assert mild_solution_residual(cn) <= 1e-12
    with pytest.raises(ValidationError):
        mild_solution_residual(cn, "simpson")


def test_linearity(spec):
    a = step_parabolic(spec, ParabolicData(u0="x", f="t", g="0"), 0.05, 1.0, T=0.5)
    b = step_parabolic(spec, ParabolicData(u0="y", f="0", g="1 + t"), 0.05, 1.0, T=0.5)
    c = step_parabolic(spec, ParabolicData(u0="x + y", f="t", g="1 + t"), 0.05, 1.0, T=0.5)
    np.testing.assert_allclose(c.states, a.states + b.states, atol=1e-12)


def test_admissibility_gate():
    assert ParabolicData(kappa1=4, kappa2=4, p=4, q=4).admissible(2, 1.0)
    assert not ParabolicData(kappa1=2, kappa2=4, p=2, q=4).admissible(2, 1.0)
    assert not ParabolicData(kappa1=4, kappa2=2, p=4, q=4).admissible(2, 1.0)
    assert not ParabolicData(kappa1=np.inf, kappa2=4, p=4, q=4).admissible(2, 1.0)


@pytest.mark.parametrize("window", ["half_tail", "full", "interior_window"])
def test_linf_scaling_invariance(spec, window):
    a = step_parabolic(spec, ParabolicData(u0="x", f="1 + t*y", g="x*y"), 0.05, 1.0, T=1.0)
    b = step_parabolic(spec, ParabolicData(u0="5*x", f="5 + 5*t*y", g="5*x*y"), 0.05, 1.0,
                       T=1.0)
    ra = linf_estimate_check(a, window, 0.25, 0.75)
    rb = linf_estimate_check(b, window, 0.25, 0.75)
    assert np.isfinite(ra.ratio) and ra.ratio > 0
    assert rb.ratio == pytest.approx(ra.ratio, rel=1e-12)
    assert ra.asserted
    assert len(ra.to_csv_line().split(",")) == len(ra.HEADER.split(","))


def test_linf_zero_start(spec):
    tr = step_parabolic(spec, ParabolicData(f="1", g="0"), 0.05, 1.0, T=0.5)
    row = linf_estimate_check(tr, "full_zero_start")
    assert np.isfinite(row.ratio) and row.ratio > 0
    nz = step_parabolic(spec, ParabolicData(u0="1", f="1"), 0.05, 1.0, T=0.5)
    with pytest.raises(ValidationError):
        linf_estimate_check(nz, "full_zero_start")


def test_linf_refused_when_inadmissible(spec):
    tr = step_parabolic(spec, ParabolicData(u0="x", f="1", kappa1=2, p=2), 0.05, 1.0, T=0.5)
    assert not linf_estimate_check(tr).asserted


def test_homogeneous_growth(spec):
    u0 = 1 + np.random.default_rng(2).random(spec.mesh.n_nodes)
    tr = step_parabolic(spec, ParabolicData(u0=u0), 0.05, 1.0, T=1.0)
    Mest, omega = homogeneous_growth(tr)
    sup = np.abs(tr.states).max(axis=1)
    assert np.all(sup <= Mest * np.exp(omega * tr.times) * sup[0] * (1 + 1e-12))
    assert Mest == pytest.approx(1.0) and omega <= 0
    row = linf_estimate_check(tr, "full")
    assert row.ratio <= Mest * np.exp(abs(omega) * tr.times[-1]) + 1e-12
    assert homogeneous_growth(step_parabolic(spec, ParabolicData(), 0.1, 1.0, T=0.2)) == (0, 0)


def test_trajectory_csv(spec):
    tr = step_parabolic(spec, ParabolicData(u0="x"), 0.1, 1.0, T=0.3)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,norm2,normInf_interior,normInf_boundary"
    assert len(lines) == 5


def test_bochner_norm():
    assert bochner_norm(np.array([2.0, 2.0]), np.array([0.5, 0.5]), 3) == pytest.approx(2.0)
