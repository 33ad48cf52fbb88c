import numpy as np
import pytest

from irregularbvp.coefficients import CoefficientField
from irregularbvp.degiorgi import (degiorgi_sequence, exact_superlevel_area, lemma2_recursion,
                                   level_sets, moser_identity_error, moser_test_functions, psi,
                                   recipe_eta, recipe_k_hat)
from irregularbvp.elliptic import ProblemSpec, data_pair_norm, solve_elliptic
from irregularbvp.errors import ValidationError
from irregularbvp.geometry import triangulate, unit_square
from irregularbvp.measure import arc_length_measure
from irregularbvp.norms import lp_norm_interior


@pytest.fixture(scope="module")
def sq():
    d = unit_square()
    return triangulate(d, 0.1), arc_length_measure(d)


def test_psi_branches():
    np.testing.assert_allclose(psi([-1.0, 0.0, 2.0, 20.0], 1.5, 10.0),
                               [0.0, 0.0, 2.0 ** 1.5, 10.0 ** 0.5 * 20.0])


def test_moser_examples():
    w, v = moser_test_functions(np.array([-3.0, -0.1]), 3.0, 2.0)
    assert np.all(w == 0) and np.all(v == 0)
    w, v = moser_test_functions(np.array([4.0]), 2.0, 10.0)
    assert w[0] == 4.0 and v[0] == 4.0 and w[0] ** 2 == 16.0
    m, k = 3.0, 5.0
    w, _ = moser_test_functions(np.array([2 * m]), k, m)
    assert w[0] == pytest.approx(m ** (k / 2 - 1) * 2 * m)
    with pytest.raises(ValidationError):
        moser_test_functions(np.ones(2), 1.5, 2.0)
    with pytest.raises(ValidationError):
        moser_test_functions(np.ones(2), 2.0, 0.5)


def test_moser_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = 5 * rng.standard_normal(200)
        k, m = rng.uniform(2, 6), rng.uniform(1, 4)
        assert moser_identity_error(u, k, m) <= 1e-12 * max(1.0, np.max(u ** 2) * m ** (k - 2))


def test_level_sets_examples(sq):
    m, mu = sq
    x = m.nodes[:, 0]
    uk, a, b = level_sets(m, x, 2.0, mu)
    assert np.all(uk == 0) and a == 0 and b == 0
    uk, a, b = level_sets(m, x, -1.0, mu)
    assert a == pytest.approx(1.0) and b == pytest.approx(4.0)
    # {x > 1/2}: exact area 1/2, boundary length 2
    assert exact_superlevel_area(m, x, 0.5) == pytest.approx(0.5, abs=1e-12)
    _, a, b = level_sets(m, x, 0.5, mu)
    assert a == pytest.approx(0.5, abs=0.05) and b == pytest.approx(2.0, abs=0.1)


def test_level_sets_monotone(sq):
    m, mu = sq
    u = np.sin(3 * m.nodes[:, 0]) + m.nodes[:, 1] ** 2
    prev = None
    for k in np.linspace(-1, 2, 13):
        uk, a, b = level_sets(m, u, k, mu)
        if prev is not None:
            assert a <= prev[1] and b <= prev[2] and np.all(uk <= prev[0])
        prev = (uk, a, b)


def test_sequence_trivial_and_scaling(sq):
    m, mu = sq
    u = m.nodes[:, 0] * m.nodes[:, 1]
    seq = degiorgi_sequence(m, u, 1.0, measure=mu)
    assert seq.y[0] == 0 and seq.z[0] == 0 and seq.converged
    assert np.all(np.diff(seq.levels) > 0) and seq.levels[-1] < 2.0
    a = degiorgi_sequence(m, u, 0.3, measure=mu)
    b = degiorgi_sequence(m, 2 * u, 0.6, measure=mu)
    np.testing.assert_allclose(a.y, b.y, rtol=1e-12)
    np.testing.assert_allclose(a.z, b.z, rtol=1e-12)
    assert a.to_csv().splitlines()[0] == "n,k_n,y_n,z_n"
    with pytest.raises(ValidationError):
        degiorgi_sequence(m, u, 0.0)


def test_sequence_recipe_converges_and_small_level_stagnates(sq):
    m, mu = sq
    spec = ProblemSpec(m, mu, CoefficientField(beta="1"), "R", f="1 + x", g="y")
    sol = solve_elliptic(spec)
    dn = data_pair_norm(m, mu, spec.f, spec.g, 2, 2)
    k_hat, _ = recipe_k_hat(dn, lp_norm_interior(m, sol.values, 2))
    seq = degiorgi_sequence(m, sol.values, k_hat, 12, mu)
    assert seq.converged and np.all(np.diff(seq.z) <= 0)
    small = degiorgi_sequence(m, sol.values, 0.01 * np.abs(sol.values).max(), 12, mu)
    assert not small.converged
    assert small.z[-1] > 0.5 * small.z[0]


def test_sequence_trajectory_takes_time_maximum(sq):
    m, mu = sq
    u = m.nodes[:, 0]
    one = degiorgi_sequence(m, u, 0.3, measure=mu)
    both = degiorgi_sequence(m, np.vstack([0.5 * u, u]), 0.3, measure=mu)
    np.testing.assert_allclose(both.y, one.y)
    np.testing.assert_allclose(both.z, one.z)


def test_lemma_zero_and_example():
    _, ok, ap, y, z = lemma2_recursion(0.0, 0.0, 1.0, 8.0, 0.5, 0.5)
    assert ok and ap and np.all(y == 0) and np.all(z == 0)
    eta = recipe_eta(1.0, 8.0, 0.5, 0.5)
    bound, ok, ap, y, z = lemma2_recursion(eta, eta ** (2 / 3), 1.0, 8.0, 0.5, 0.5)
    assert ap and ok and len(bound) == 51


def test_lemma_counterexample():
    eta = recipe_eta(1.0, 8.0, 0.5, 0.5)
    _, ok, ap, _, _ = lemma2_recursion(2 * eta, eta ** (2 / 3), 1.0, 8.0, 0.5, 0.5)
    assert not ap and not ok


@pytest.mark.parametrize("rate", ["printed", "classical"])
def test_lemma_sampled_no_violations(rate):
    rng = np.random.default_rng(1)
    for _ in range(100):
        c, b = rng.uniform(0.5, 3), rng.uniform(1, 16)
        e, d = rng.uniform(0.1, 2), rng.uniform(0.1, 2)
        eta = recipe_eta(c, b, e, d)
        y0 = eta * rng.uniform(0, 1)
        z0 = eta ** (1 / (1 + e)) * rng.uniform(0, 1)
        _, ok, ap, _, _ = lemma2_recursion(y0, z0, c, b, e, d, rate=rate)
        assert ap and ok


def test_lemma_validation():
    with pytest.raises(ValidationError):
        lemma2_recursion(0.1, 0.1, 1.0, 0.5, 0.5, 0.5)
    with pytest.raises(ValidationError):
        lemma2_recursion(0.1, 0.1, 1.0, 2.0, 0.5, 0.5, rate="fast")
