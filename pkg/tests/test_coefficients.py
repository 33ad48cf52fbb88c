import numpy as np
import pytest

from irregularbvp.coefficients import (CAP, CoefficientField, Expr, WentzellSpec, capped,
                                       ellipticity_constant, integrability_report,
                                       unit_directions)
from irregularbvp.errors import EllipticityError, ValidationError
from irregularbvp.geometry import triangulate, unit_square

PTS = np.random.default_rng(0).random((50, 2))


def test_expr_evaluation():
    e = Expr("2*x^2 + y")
    np.testing.assert_allclose(e(np.array([1.0]), np.array([3.0])), [5.0])
    assert Expr("max(x, y, 0.5)")(0.1, 0.2) == 0.5
    assert Expr("step(x - 1)")(1.0, 0.0) == 1.0 and Expr("step(x - 1)")(0.99, 0.0) == 0.0
    assert Expr("sin(pi*x)")(0.5, 0) == pytest.approx(1.0)
    assert Expr("x*xp + t")(2.0, 0.0, t=1.0, xp=3.0) == 7.0
    assert Expr("3").is_constant and Expr("0").is_zero


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "foo(x)", "z + 1", "x +"])
def test_expr_rejects_unsafe(bad):
    with pytest.raises(ValidationError):
        Expr(bad)


def test_capping():
    v, n_cap, n_bad = capped(np.array([1.0, 2e12, np.inf, np.nan]))
    assert n_cap == 2 and n_bad == 2
    assert np.all(np.abs(v) <= CAP)


def test_ellipticity_examples():
    assert ellipticity_constant(np.eye(2), PTS) == pytest.approx(1.0)
    assert ellipticity_constant(np.diag([2.0, 0.5]), PTS) == pytest.approx(0.5)
    assert ellipticity_constant(np.array([[2.0, 1.0], [0.0, 2.0]]), PTS) == pytest.approx(1.5)
    # 16 sample directions bound the exact minimum from above
    c16 = ellipticity_constant(np.array([[2.0, 1.0], [0.0, 2.0]]), PTS, unit_directions(16))
    assert 1.5 <= c16 <= 1.5 + 1e-12 + 0.02


def test_ellipticity_antisymmetric_invariance():
    rng = np.random.default_rng(1)
    base = np.array([[2.0, 0.3], [0.3, 1.0]])
    for _ in range(5):
        a = rng.standard_normal()
        skew = np.array([[0.0, a], [-a, 0.0]])
        assert ellipticity_constant(base + skew, PTS) == pytest.approx(ellipticity_constant(base, PTS))


def test_ellipticity_violation():
    with pytest.raises(EllipticityError):
        ellipticity_constant(np.diag([1.0, -0.1]), PTS)
    c = CoefficientField(alpha=(("1", "0"), ("0", "x - 0.5")))
    with pytest.raises(EllipticityError):
        ellipticity_constant(c, PTS)


def test_field_defaults_are_neumann():
    c = CoefficientField()
    assert Expr(c.beta).is_zero and Expr(c.lam).is_zero
    assert all(e.is_zero for e in c.a_hat + c.a_check)
    assert c.wentzell is None and c.gamma is None


def test_exponent_validation():
    with pytest.raises(ValidationError):
        CoefficientField(r3=1.0)
    with pytest.raises(ValidationError):
        CoefficientField(beta_exponent=0.9)
    with pytest.raises(ValidationError):
        WentzellSpec(kind="fractal")


def test_kernel_and_gamma_checks():
    c = CoefficientField(gamma="x - 0.5", kernel_a="x - xp")
    with pytest.raises(ValidationError):
        c.check_gamma(PTS)
    with pytest.raises(ValidationError):
        c.check_kernels(PTS)


def test_integrability_constant_and_singular():
    m = triangulate(unit_square(), 0.1)
    assert integrability_report("2", 3, m).norm == pytest.approx(2.0, rel=1e-13)
    r = integrability_report("sqrt(x^2 + y^2)^(-0.5)", 3, m)
    assert np.isfinite(r.norm) and r.n_nonfinite == 0
    # radial comparison: int over the quarter disk of r^(-3/2) = (pi/2) * 2 = pi bounds part of it
    assert r.norm ** 3 > np.pi


def test_integrability_divergence_under_refinement():
    vals = []
    for h in (0.2, 0.1, 0.05):
        m = triangulate(unit_square(), h)
        vals.append(integrability_report("(x^2 + y^2)^(-1)", 2, m).norm)
    # |x|^(-2) is not in L^2 near the corner: the discrete norm keeps growing
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] / vals[1] > 1.5
    with pytest.raises(ValidationError):
        integrability_report("1", 0.5, triangulate(unit_square(), 0.5))
