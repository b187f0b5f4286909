import json

import numpy as np
import pytest

from entmonge.errors import (
    BudgetExceeded,
    ConfigError,
    InvalidDensity,
    InvalidDimension,
    InvalidInstance,
    OverlappingSupports,
)
from entmonge.instances import (
    BoxDensity,
    PiecewiseConstantDensity1D,
    ProductInstance,
    certify_potential,
    dual_ot_value,
    load_instance,
    make_section62,
    make_two_boxes,
    validate,
)
from entmonge.measures import DiscreteMeasure
from entmonge.oracles import lp_ot

U = PiecewiseConstantDensity1D.uniform


def _inst(f1, g1, d=2):
    return ProductInstance(d=d, f1=f1, g1=g1, rho=BoxDensity.unit_cube(d - 1))


def test_section62_masses():
    inst = make_section62(2)
    levels = {(lo, hi): lev * (hi - lo) for lo, hi, lev in inst.f1.pieces}
    np.testing.assert_allclose(levels[(0.0, 2.0)], 2 / 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(levels[(5.0, 6.0)], 1 / 3, rtol=0, atol=1e-15)


def test_section62_cdf_and_validation():
    inst = make_section62(2)
    np.testing.assert_allclose(inst.f1.cdf(4.0), 2 / 3, atol=1e-15)
    np.testing.assert_allclose(inst.g1.cdf(4.0), 1 / 3, atol=1e-15)
    assert validate(inst).ok


def test_section62_geometry_bit_exact():
    inst = make_section62(3)
    assert inst.f1.pieces == ((0.0, 2.0, 1 / 3), (5.0, 6.0, 1 / 3))
    assert inst.g1.pieces == ((3.0, 4.0, 1 / 3), (7.0, 9.0, 1 / 3))
    assert inst.rho.dimension == 2
    assert inst.rho.mass() == 1.0


def test_section62_bad_dimension():
    with pytest.raises(InvalidDimension):
        make_section62(1)


def test_two_boxes_geometry():
    inst = make_two_boxes(2, 3)
    assert inst.g1.support_min - inst.f1.support_max == 2.0
    assert validate(inst).dominance_margin >= 0
    assert make_two_boxes(5, 3).rho.dimension == 4


def test_two_boxes_overlap():
    with pytest.raises(OverlappingSupports):
        make_two_boxes(2, 1.0)
    with pytest.raises(OverlappingSupports):
        make_two_boxes(2, 0.5)


def test_validate_dominance_violation():
    rep = validate(_inst(U(3, 4), U(0, 1)))
    assert not rep.ok
    assert "cdf_dominance" in [v[0] for v in rep.violations]
    assert rep.dominance_margin < 0


def test_validate_overlap():
    rep = validate(_inst(U(0, 2), U(1, 3)))
    assert not rep.ok
    assert rep.violations[0][0] == "disjoint_supports"


def test_validate_gap_min():
    rep = validate(_inst(U(0, 1), U(1.2, 2.2)))
    assert [v[0] for v in rep.violations] == ["gap_min"]
    assert validate(ProductInstance(2, U(0, 1), U(1.2, 2.2), BoxDensity.unit_cube(1), gap_min=0.1)).ok


def test_report_ok_iff_no_violations():
    for inst in (make_section62(2), _inst(U(3, 4), U(0, 1)), _inst(U(0, 2), U(1, 3))):
        rep = validate(inst)
        assert rep.ok == (len(rep.violations) == 0)


def test_density_invariants():
    with pytest.raises(InvalidDensity):
        PiecewiseConstantDensity1D(((0, 1, 0.5),))
    with pytest.raises(InvalidDensity):
        PiecewiseConstantDensity1D(((0, 1, 0.5), (0.5, 1.5, 0.5)))
    with pytest.raises(InvalidDensity):
        PiecewiseConstantDensity1D(((1, 1, 1.0),))
    with pytest.raises(InvalidDensity):
        BoxDensity(1, (((0.0,), (1.0,), 0.5),))


def test_dual_values():
    assert dual_ot_value(make_two_boxes(2, 3)) == 3.0
    assert dual_ot_value(make_section62(2)) == 4.0


def test_dual_invalid():
    with pytest.raises(InvalidInstance):
        dual_ot_value(_inst(U(3, 4), U(0, 1)))


@pytest.mark.parametrize("s", [0.75, 2.0, 5.5])
def test_dual_translation(s):
    f1, g1 = U(0, 1), U(2, 3)
    base = dual_ot_value(_inst(f1, g1))
    np.testing.assert_allclose(dual_ot_value(_inst(f1.shifted(s), g1.shifted(s))), base, atol=1e-12)
    np.testing.assert_allclose(dual_ot_value(_inst(f1, g1.shifted(s))), base + s, atol=1e-12)
    # f1 = g1 shifted by s
    np.testing.assert_allclose(dual_ot_value(_inst(f1, f1.shifted(s + 1.0))), s + 1.0, atol=1e-12)


def test_certify_two_boxes_coarse():
    # LP oracle on the 2x2-per-marginal grid: exactly zero gap
    gap = certify_potential(make_two_boxes(2, 3), 0.5)
    assert 0.0 <= gap <= 0.05
    assert gap == 0.0


def test_certify_section62_unit_grid():
    inst = make_section62(2)
    mu = DiscreteMeasure([0.5, 1.5, 5.5], [1 / 3] * 3)
    nu = DiscreteMeasure([3.5, 7.5, 8.5], [1 / 3] * 3)
    lp = lp_ot(mu, nu, np.abs(np.subtract.outer([0.5, 1.5, 5.5], [3.5, 7.5, 8.5])))
    np.testing.assert_allclose(lp.value, 4.0, atol=1e-12)
    assert certify_potential(inst, 1.0) <= 1e-12


@pytest.mark.parametrize("maker", [lambda: make_two_boxes(2, 3), lambda: make_section62(2)])
def test_certify_refinement(maker):
    inst = maker()
    gaps = [certify_potential(inst, h) for h in (0.5, 0.25, 0.125)]
    assert all(g >= 0 for g in gaps)
    for g, g_half in zip(gaps, gaps[1:]):
        assert g_half <= 0.75 * g + 1e-9


def test_certify_budget():
    with pytest.raises(BudgetExceeded):
        certify_potential(make_two_boxes(2, 3), 0.02)


def test_json_roundtrip():
    inst = make_section62(3)
    back = ProductInstance.from_json(inst.to_json())
    assert back == inst
    doc = json.loads(inst.to_json())
    assert set(doc) == {"d", "axis", "f1", "g1", "rho"}


def test_json_malformed_position():
    with pytest.raises(ConfigError, match="line 2, column"):
        ProductInstance.from_json('{"d": 2,\n "f1": [[0, 1, 1]],, }')


def test_json_missing_key():
    with pytest.raises(ConfigError):
        ProductInstance.from_dict({"d": 2, "f1": [[0, 1, 1]]})


def test_load_instance_names():
    assert load_instance("section62", 3) == make_section62(3)
    assert load_instance("two_boxes", 2, 4.0) == make_two_boxes(2, 4.0)
    assert load_instance(make_two_boxes(2, 3).to_dict()) == make_two_boxes(2, 3)


def test_immutable():
    inst = make_two_boxes(2, 3)
    with pytest.raises(Exception):
        inst.d = 3
