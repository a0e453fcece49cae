import numpy as np
import pytest

from lyapflow.coefficients import (
    CoefficientField,
    MapDelta,
    check_monotonicity,
    drift_delta,
    empirical_lpp_norm,
    monotonicity_quotient,
    parse_field,
)
from lyapflow.coefficients import expressions as ex
from lyapflow.errors import (
    ExpressionNameError,
    ExpressionParseError,
    UnsupportedExpressionError,
)
from lyapflow.measure import EmpiricalMeasure


class TestParseField:
    def test_scalar_linear(self):
        f = parse_field(["a*x1"], [["b*x1"]], {"a": 1.0, "b": 1.0})
        x = np.array([2.0])
        assert f.drift_at(x)[0] == 2.0
        assert f.diffusion_at(x)[0, 0] == 2.0
        np.testing.assert_allclose(f.drift_jacobian_at(x), [[1.0]])
        np.testing.assert_allclose(f.diffusion_jacobian_at(x)[0], [[1.0]])
        assert f.structure.linear_in_x
        assert f.structure.autonomous

    def test_additive_ou(self):
        f = parse_field(
            ["-theta*x1", "-theta*x2"], [["sigma", "sigma"]], {"theta": 1.0, "sigma": 0.5}
        )
        x = np.array([0.3, -0.4])
        np.testing.assert_allclose(f.drift_jacobian_at(x), -np.eye(2))
        np.testing.assert_allclose(f.diffusion_jacobian_at(x)[0], np.zeros((2, 2)))
        assert f.structure.additive_noise
        assert not f.structure.linear_in_x  # constant diffusion is affine, not linear

    def test_cubic_jacobian_value(self):
        f = parse_field(["-x1^3 - x1"], [], {})
        # finite-difference oracle at x1 = 0.7: -3*0.49 - 1 = -2.47
        x = np.array([0.7])
        h = 1e-6
        fd = (f.drift_at(x + h) - f.drift_at(x - h)) / (2 * h)
        assert f.drift_jacobian_at(x)[0, 0] == pytest.approx(-2.47, abs=1e-12)
        assert fd[0] == pytest.approx(-2.47, abs=1e-6)

    def test_counts_validated(self):
        with pytest.raises(ValueError):
            parse_field(["x1"], [], {}, d=2)
        with pytest.raises(ValueError):
            parse_field(["x1", "x2"], [["x1"]], {}, d=2, n=2)

    def test_syntax_error_propagates(self):
        with pytest.raises(ExpressionParseError):
            parse_field(["x1 +"], [], {})

    def test_unknown_name(self):
        with pytest.raises(ExpressionNameError):
            parse_field(["q*x1"], [], {})

    def test_min_max_rejected_by_differentiation(self):
        with pytest.raises(UnsupportedExpressionError):
            parse_field(["min(x1, 0)"], [], {})

    def test_batch_evaluation_shapes(self):
        f = parse_field(["x2", "-x1"], [["0.1*x1", "0.1*x2"]], {})
        x = np.random.default_rng(1).standard_normal((5, 7, 2))
        assert f.drift_at(x).shape == (5, 7, 2)
        assert f.diffusion_at(x).shape == (5, 7, 1, 2)
        assert f.drift_jacobian_at(x).shape == (5, 7, 2, 2)
        assert f.diffusion_jacobian_at(x).shape == (5, 7, 1, 2, 2)

    def test_hash_distinguishes_fields(self):
        a = parse_field(["-x1"], [], {})
        b = parse_field(["-2*x1"], [], {})
        c = parse_field(["-x1"], [], {})
        assert a.field_hash != b.field_hash
        assert a.field_hash == c.field_hash

    def test_autonomy_detection(self):
        f = parse_field(["sin(t)*x1"], [], {})
        assert not f.structure.autonomous
        for tval in (0.0, 1.0, np.e):
            got = f.drift_at(np.array([1.0]), tval)[0]
            assert got == pytest.approx(np.sin(tval), rel=1e-15)

    def test_jacobian_bound_estimate(self):
        f = parse_field(["-x1"], [["0.5*x1"]], {})
        k = f.estimate_jacobian_bound()
        assert k == pytest.approx(1.0, abs=1e-12)


class TestMonotonicity:
    def test_ou_is_exactly_two(self):
        f = parse_field(["-x1"], [["sigma"]], {"sigma": 0.5})
        rep = check_monotonicity(f, pair_count=512, box_radius=3.0, seed=1)
        assert rep.holds_with_lambda == 2.0
        assert rep.worst_value == -2.0

    def test_expanding_field_has_no_certificate(self):
        f = parse_field(["x1"], [["x1"]], {})
        rep = check_monotonicity(f, pair_count=512, seed=1)
        assert rep.holds_with_lambda is None
        assert rep.worst_value == pytest.approx(3.0, abs=1e-12)

    def test_cubic_with_sine_noise(self):
        # 2<x-y, A(x)-A(y)> <= -2|x-y|^2 and |sin x - sin y| <= |x-y| give
        # sup Q <= -2 + 0.01 = -1.99
        f = parse_field(["-x1 - x1^3"], [["0.1*sin(x1)"]], {})
        rep = check_monotonicity(f, pair_count=4096, box_radius=5.0, seed=2)
        assert rep.holds_with_lambda is not None
        assert rep.holds_with_lambda >= 1.99

    def test_quotient_symmetric(self):
        f = parse_field(["-x1 - x1^3"], [["0.1*sin(x1)"]], {})
        rng = np.random.default_rng(7)
        x = rng.standard_normal((64, 1))
        y = rng.standard_normal((64, 1))
        np.testing.assert_array_equal(
            monotonicity_quotient(f, x, y), monotonicity_quotient(f, y, x)
        )

    def test_deterministic_in_seed(self):
        f = parse_field(["-x1 - x1^3"], [["0.1*sin(x1)"]], {})
        a = check_monotonicity(f, pair_count=256, seed=9)
        b = check_monotonicity(f, pair_count=256, seed=9)
        assert a.worst_value == b.worst_value
        assert a.holds_with_lambda == b.holds_with_lambda

    def test_requires_autonomous(self):
        f = parse_field(["-t*x1"], [], {})
        with pytest.raises(Exception):
            check_monotonicity(f, pair_count=256)


def normal_measure(n=10_000, d=1, seed=0):
    rng = np.random.default_rng(seed)
    return EmpiricalMeasure.from_points(rng.standard_normal((n, d)))


class TestLppNorm:
    def test_zero_difference(self):
        delta = MapDelta.from_exprs([ex.ZERO])
        res = empirical_lpp_norm(delta, normal_measure(100), p=3.0)
        assert (res.lp, res.dlp, res.lpp) == (0.0, 0.0, 0.0)

    def test_constant_difference(self):
        delta = MapDelta.from_exprs([ex.Const(-2.5)])
        res = empirical_lpp_norm(delta, normal_measure(100), p=4.0)
        assert res.lp == pytest.approx(2.5, rel=1e-12)
        assert res.dlp == 0.0
        assert res.lpp == pytest.approx(2.5, rel=1e-12)

    def test_linear_difference_fourth_moment(self):
        # E|x|^4 = 3 for a standard normal, so lp ~= eps * 3**(1/4)
        eps = 0.3
        delta = MapDelta.from_exprs([ex.Mul(ex.Const(eps), ex.Var(0))])
        res = empirical_lpp_norm(delta, normal_measure(100_000, seed=3), p=4.0)
        assert res.lp == pytest.approx(eps * 3**0.25, rel=0.02)
        assert res.dlp == pytest.approx(eps, rel=1e-12)
        assert res.lpp == pytest.approx(eps * (1 + 3**0.25), rel=0.02)

    def test_absolute_homogeneity_dyadic(self):
        delta = MapDelta.from_exprs([ex.parse("x1^2 - x1", 1, set())])
        mu = normal_measure(512, seed=5)
        base = empirical_lpp_norm(delta, mu, p=3.0)
        scaled = empirical_lpp_norm(delta.scaled(2.0), mu, p=3.0)
        assert scaled.lp == pytest.approx(2.0 * base.lp, rel=1e-14)
        assert scaled.dlp == pytest.approx(2.0 * base.dlp, rel=1e-14)

    def test_empty_measure_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure.from_points(np.empty((0, 1)))

    def test_p_below_two_rejected(self):
        delta = MapDelta.from_exprs([ex.Var(0)])
        with pytest.raises(ValueError):
            empirical_lpp_norm(delta, normal_measure(10), p=1.5)

    def test_field_drift_delta(self):
        f = parse_field(["-x1"], [], {})
        g = parse_field(["-1.25*x1"], [], {})
        delta = drift_delta(g, f)
        mu = normal_measure(50_000, seed=8)
        res = empirical_lpp_norm(delta, mu, p=3.0)
        assert res.dlp == pytest.approx(0.25, rel=1e-12)
        # ||0.25 x||_{L^3}: E|x|^3 = 2 sqrt(2/pi)
        expected = 0.25 * (2 * np.sqrt(2 / np.pi)) ** (1 / 3)
        assert res.lp == pytest.approx(expected, rel=0.03)


class TestImmutabilityAndReentrancy:
    def test_concurrent_evaluation_matches_serial(self):
        from concurrent.futures import ThreadPoolExecutor

        f = parse_field(["-x1 - x1^3"], [["0.1*sin(x1)"]], {})
        rng = np.random.default_rng(0)
        xs = [rng.standard_normal((101, 1)) for _ in range(8)]
        expected = [f.drift_at(x) for x in xs]
        with ThreadPoolExecutor(max_workers=8) as pool:
            got = list(pool.map(f.drift_at, xs))
        for e, g in zip(expected, got):
            np.testing.assert_array_equal(e, g)
