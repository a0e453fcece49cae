import numpy as np
import pytest

from lyapflow.coefficients import (
    PiecewiseConstant,
    build_perturbation_family,
    verify_almost_uniform,
)
from lyapflow.errors import FamilySpecError


def unit_bump_family():
    """1-d drift a == 1, member k takes value 2 on [k, k+1)."""
    return build_perturbation_family(
        {
            "kind": "schedule",
            "schedule": {
                "diagonal": [1.0],
                "bumps": [{"coord": 0, "start": "k", "end": "k+1", "value": 2.0}],
            },
        }
    )


def tail_switch_family():
    """diag(1, 6) base; member k switches coordinate 1 to value 2 on [k, inf)."""
    return build_perturbation_family(
        {
            "kind": "schedule",
            "schedule": {
                "diagonal": [1.0, 6.0],
                "bumps": [{"coord": 0, "start": "k", "end": "inf", "value": 2.0}],
            },
        }
    )


class TestPiecewiseConstant:
    def test_lookup_and_integral(self):
        pc = PiecewiseConstant((0.0, 2.0, 3.0), (1.0, 5.0, 2.0))
        assert pc(0.0) == 1.0 and pc(1.999) == 1.0
        assert pc(2.0) == 5.0 and pc(2.5) == 5.0
        assert pc(10.0) == 2.0
        assert pc.integral(2.0) == 2.0
        assert pc.integral(3.0) == 7.0
        assert pc.integral(5.0) == 11.0

    def test_patch(self):
        pc = PiecewiseConstant.constant(1.0).with_patch(5.0, 6.0, 2.0)
        assert pc(4.9) == 1.0 and pc(5.0) == 2.0 and pc(6.0) == 1.0
        assert pc.integral(10.0) == pytest.approx(11.0)

    def test_patch_unbounded(self):
        pc = PiecewiseConstant.constant(1.0).with_patch(3.0, np.inf, 2.0)
        assert pc(100.0) == 2.0
        assert pc.integral(5.0) == pytest.approx(3.0 + 4.0)

    def test_validation(self):
        with pytest.raises(FamilySpecError):
            PiecewiseConstant((1.0,), (2.0,))  # must start at 0
        with pytest.raises(FamilySpecError):
            PiecewiseConstant((0.0, 0.0), (1.0, 2.0))


class TestScheduleFamilies:
    def test_unit_bump_supports(self):
        fam = unit_bump_family()
        k = 3
        assert fam.support_set(k, k + 1) == [(3.0, 4.0)]
        for i in (1, 2, 3, 5, 6):
            assert fam.support_set(k, i) == []
        lengths = fam.support_lengths(k, 10)
        expected = np.zeros(10)
        expected[k] = 1.0  # unit interval [k, k+1) is the (k+1)-th
        np.testing.assert_allclose(lengths, expected)

    def test_tail_switch_supports(self):
        fam = tail_switch_family()
        k = 2
        for i in range(k + 1, 8):
            assert fam.support_set(k, i) == [(float(i - 1), float(i))]
        for i in range(1, k + 1):
            assert fam.support_set(k, i) == []

    def test_member_agrees_with_base_off_support(self):
        fam = unit_bump_family()
        member = fam.member(4)
        base = fam.base
        ts = np.array([0.0, 1.7, 3.999, 5.0, 11.3])
        for t in ts:
            np.testing.assert_allclose(
                member.time_schedule.entries[0](t), base.time_schedule.entries[0](t)
            )
        assert member.time_schedule.entries[0](4.5) == 2.0

    def test_constant_family_has_empty_supports(self):
        fam = build_perturbation_family(
            {"kind": "schedule", "schedule": {"diagonal": [1.0], "bumps": []}}
        )
        assert fam.support_set(3, 4) == []
        assert fam.support_lengths(3, 100).sum() == 0.0

    def test_overlapping_supports_rejected(self):
        fam = build_perturbation_family(
            {
                "kind": "schedule",
                "schedule": {
                    "diagonal": [1.0],
                    "bumps": [
                        {"coord": 0, "start": "k", "end": "k+1", "value": 2.0},
                        {"coord": 0, "start": "k+0.5", "end": "k+2", "value": 3.0},
                    ],
                },
            }
        )
        with pytest.raises(FamilySpecError):
            fam.support_set(2, 3)

    def test_refining_intervals_preserves_lengths(self):
        # splitting a bump into adjacent sub-bumps leaves L(U_{k,i}) unchanged
        split = build_perturbation_family(
            {
                "kind": "schedule",
                "schedule": {
                    "diagonal": [1.0],
                    "bumps": [
                        {"coord": 0, "start": "k", "end": "k+0.25", "value": 2.0},
                        {"coord": 0, "start": "k+0.25", "end": "k+1", "value": 2.0},
                    ],
                },
            }
        )
        whole = unit_bump_family()
        for k in (1, 2, 5):
            np.testing.assert_allclose(
                split.support_lengths(k, 12), whole.support_lengths(k, 12)
            )
        a = verify_almost_uniform(whole, 512, [1, 2, 5])
        b = verify_almost_uniform(split, 512, [1, 2, 5])
        assert a.cesaro_values == b.cesaro_values
        assert a.verdict == b.verdict

    def test_invalid_index(self):
        fam = unit_bump_family()
        with pytest.raises(FamilySpecError):
            fam.member(0)


class TestParametricFamilies:
    def test_param_expression_members(self):
        fam = build_perturbation_family(
            {
                "kind": "parametric",
                "field": {
                    "drift": ["-theta*x1"],
                    "diffusion": [["sigma"]],
                    "params": {"theta": 1.0, "sigma": 0.5},
                },
                "schedule": {"param_exprs": {"theta": "1 + 1/k"}},
            }
        )
        m2 = fam.member(2)
        x = np.array([1.0])
        assert m2.drift_at(x)[0] == pytest.approx(-1.5)
        assert fam.base.drift_at(x)[0] == pytest.approx(-1.0)
        assert fam.support_set(2, 1) == []

    def test_members_cached(self):
        fam = build_perturbation_family(
            {
                "kind": "parametric",
                "field": {"drift": ["-theta*x1"], "params": {"theta": 1.0}},
                "schedule": {"param_exprs": {"theta": "1 + 1/k"}},
            }
        )
        assert fam.member(3) is fam.member(3)

    def test_pointwise_members(self):
        fam = build_perturbation_family(
            {
                "kind": "pointwise",
                "field": {
                    "drift": ["-(1 + 1/k)*x1"],
                    "params": {},
                },
                "schedule": {"base_drift": ["-x1"]},
            }
        )
        assert fam.member(4).drift_at(np.array([1.0]))[0] == pytest.approx(-1.25)
        assert fam.base.drift_at(np.array([1.0]))[0] == pytest.approx(-1.0)

    def test_unknown_kind(self):
        with pytest.raises(FamilySpecError):
            build_perturbation_family({"kind": "nope"})


class TestAlmostUniform:
    def test_unit_bump_holds(self):
        fam = unit_bump_family()
        rep = verify_almost_uniform(fam, n_max=10_000, k_list=[1, 10, 100])
        assert rep.verdict == "holds"
        for k, v in rep.cesaro_values.items():
            assert v == pytest.approx(1.0 / 7500.0, rel=0.05)

    def test_tail_switch_fails(self):
        fam = tail_switch_family()
        rep = verify_almost_uniform(fam, n_max=2000, k_list=[1, 10, 100])
        assert rep.verdict == "fails"
        assert all(v > 0.9 for v in rep.cesaro_values.values())

    def test_empty_supports_hold(self):
        fam = build_perturbation_family(
            {"kind": "schedule", "schedule": {"diagonal": [1.0], "bumps": []}}
        )
        rep = verify_almost_uniform(fam, n_max=64, k_list=[1, 2])
        assert rep.verdict == "holds"
        assert all(v == 0.0 for v in rep.cesaro_values.values())

    def test_small_n_max_rejected(self):
        with pytest.raises(ValueError):
            verify_almost_uniform(unit_bump_family(), n_max=4, k_list=[1])
