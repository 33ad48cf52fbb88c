import numpy as np
import pytest

from irregularbvp.errors import ValidationError
from irregularbvp.geometry import koch_curve, koch_maps, koch_snowflake, unit_square
from irregularbvp.measure import (ahlfors_diagnostic, arc_length_measure, hausdorff_dimension,
                                  koch_curve_measure, self_similar_measure)

D_KOCH = np.log(4.0) / np.log(3.0)
RADII = 3.0 ** -np.arange(1, 6)


def test_koch_measure_weights():
    mu = koch_curve_measure(2)
    assert len(mu.edge_weights) == 16
    np.testing.assert_allclose(mu.edge_weights, 1.0 / 16.0, rtol=1e-15)
    assert mu.dimension_d == pytest.approx(D_KOCH)
    mu0 = koch_curve_measure(0)
    np.testing.assert_array_equal(mu0.edge_weights, [1.0])


@pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
def test_snowflake_total_mass(level):
    mu = self_similar_measure(koch_snowflake(level))
    assert abs(mu.total_mass - 3.0) <= 1e-12


def test_level_mismatch():
    with pytest.raises(ValidationError):
        self_similar_measure(koch_curve(2), level=3)


def test_arc_length():
    assert arc_length_measure(unit_square()).total_mass == pytest.approx(4.0)
    for h in range(4):
        mu = arc_length_measure(koch_snowflake(h))
        assert mu.total_mass == pytest.approx(3.0 * (4.0 / 3.0) ** h, rel=1e-12)
        assert mu.dimension_d == 1.0


def test_refinement_reproduces_next_level():
    for h in range(3):
        pushed = koch_curve_measure(h).refine(koch_maps())
        nxt = koch_curve_measure(h + 1)
        np.testing.assert_allclose(pushed.edge_weights, nxt.edge_weights, rtol=1e-15)
        np.testing.assert_allclose(np.sort(pushed.segments.reshape(-1, 4), axis=0),
                                   np.sort(nxt.segments.reshape(-1, 4), axis=0), atol=1e-12)


def test_additivity_on_cells():
    rng = np.random.default_rng(5)
    mu = koch_curve_measure(3)
    for _ in range(20):
        sel = rng.random(len(mu.edge_weights)) < 0.4
        assert mu.edge_weights[sel].sum() == pytest.approx(sel.sum() / 64.0, rel=1e-14)


def test_ahlfors_koch_bounded():
    rep = ahlfors_diagnostic(koch_curve_measure(6), D_KOCH, RADII)
    assert np.all(np.isfinite(rep.sup_ratio)) and np.all(rep.sup_ratio >= 0)
    assert rep.spread < 2.0


def test_ahlfors_square_arc_length():
    radii = np.array([0.05, 0.1, 0.25, 0.5, 1.0, 1.4])
    rep = ahlfors_diagnostic(arc_length_measure(unit_square()), 1.0, radii)
    assert np.all(rep.sup_ratio <= 4.0)
    # a ball of radius r <= 1/2 around an edge midpoint carries exactly 2r
    np.testing.assert_allclose(rep.sup_ratio[:4], 2.0, rtol=1e-12)


def test_ahlfors_wrong_dimension_is_monotone():
    # mu(B(x, r)) ~ r**d_f, so mu(B)/r ~ r**(d_f - 1) shrinks with r
    rep = ahlfors_diagnostic(koch_curve_measure(6), 1.0, RADII)
    assert np.all(np.diff(rep.sup_ratio) < 0)
    step = rep.sup_ratio[1:] / rep.sup_ratio[:-1]
    np.testing.assert_allclose(step, 3.0 ** (1.0 - D_KOCH), rtol=0.3)


def test_ahlfors_scales_with_measure():
    mu = koch_curve_measure(4)
    a = ahlfors_diagnostic(mu, D_KOCH, RADII[:3])
    b = ahlfors_diagnostic(mu.scaled(2.5), D_KOCH, RADII[:3])
    np.testing.assert_allclose(b.sup_ratio, 2.5 * a.sup_ratio, rtol=1e-14)


def test_ahlfors_validation_and_csv():
    mu = koch_curve_measure(2)
    with pytest.raises(ValidationError):
        ahlfors_diagnostic(mu, D_KOCH, [])
    with pytest.raises(ValidationError):
        ahlfors_diagnostic(mu, D_KOCH, [-1.0])
    csv = ahlfors_diagnostic(mu, D_KOCH, [0.5]).to_csv()
    assert csv.splitlines()[0] == "r,sup_ratio"


def test_hausdorff_dimension():
    assert hausdorff_dimension("koch") == pytest.approx(1.2618595071429148, rel=1e-15)
    assert hausdorff_dimension("ramified_G", 0.5) == 1.0
    assert hausdorff_dimension("ramified_G", 0.59) == -np.log(2.0) / np.log(0.59)
    assert hausdorff_dimension("ramified_G", 0.59) == pytest.approx(1.3139, abs=3e-4)
    with pytest.raises(ValidationError):
        hausdorff_dimension("ramified_G", 0.6)
    with pytest.raises(ValidationError):
        hausdorff_dimension("ramified_G")


def test_measure_text_export():
    text = koch_curve_measure(1).to_text()
    assert text.splitlines()[0] == "0 0.25"
